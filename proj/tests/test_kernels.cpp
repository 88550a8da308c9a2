#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "drivesac/kernels.hpp"

using namespace drivesac::kernels;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, size_t n, double lo = -1.0,
                               double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

const int kBatches[] = {1, 2, 3, 4, 5, 7, 8, 12, 16, 17, 31, 33, 64, 67};

}  // namespace

TEST_CASE("dense kernels agree bitwise across lanes") {
  const Ops* ref = find("scalar");
  REQUIRE(ref != nullptr);
  std::mt19937_64 rng(11);
  const int shapes[][2] = {{1, 1}, {3, 7}, {16, 23}, {100, 116}};
  for (auto [O, I] : shapes) {
    for (int B : kBatches) {
      auto w = random_vec(rng, (size_t)O * I);
      auto bias = random_vec(rng, O);
      auto x = random_vec(rng, (size_t)I * B);
      auto gy = random_vec(rng, (size_t)O * B);

      std::vector<double> y0((size_t)O * B), gx0((size_t)I * B);
      std::vector<double> gw0((size_t)O * I), gb0(O);
      ref->dense_forward(w.data(), bias.data(), x.data(), y0.data(), O, I, B);
      ref->dense_backward_input(w.data(), gy.data(), gx0.data(), O, I, B);
      ref->dense_grad_params(x.data(), gy.data(), gw0.data(), gb0.data(), O, I, B);

      for (const Ops* lane : available()) {
        std::vector<double> y(y0.size(), -9.0), gx(gx0.size(), -9.0);
        std::vector<double> gw(gw0.size(), -9.0), gb(gb0.size(), -9.0);
        lane->dense_forward(w.data(), bias.data(), x.data(), y.data(), O, I, B);
        lane->dense_backward_input(w.data(), gy.data(), gx.data(), O, I, B);
        lane->dense_grad_params(x.data(), gy.data(), gw.data(), gb.data(), O, I, B);
        CAPTURE(lane->name);
        CAPTURE(O);
        CAPTURE(I);
        CAPTURE(B);
        CHECK(same_bits(y, y0));
        CHECK(same_bits(gx, gx0));
        CHECK(same_bits(gw, gw0));
        CHECK(same_bits(gb, gb0));
      }
    }
  }
}

TEST_CASE("conv kernels agree bitwise across lanes") {
  const Ops* ref = find("scalar");
  REQUIRE(ref != nullptr);
  std::mt19937_64 rng(12);
  const ConvShape shapes[] = {
      {1, 16, 16, 4, 3, 2, 1},  // stride-2 downsampling block
      {4, 8, 8, 8, 3, 1, 1},    // stride-1 same-size block
      {3, 7, 9, 5, 3, 2, 1},    // non-square, odd extents
      {4, 8, 8, 8, 1, 2, 0},    // 1x1 strided projection
      {2, 5, 5, 3, 3, 1, 0},    // valid (no padding)
  };
  for (const ConvShape& s : shapes) {
    const int HO = s.hout(), WO = s.wout();
    for (int B : kBatches) {
      auto w = random_vec(rng, (size_t)s.cout * s.cin * s.k * s.k);
      auto bias = random_vec(rng, s.cout);
      auto x = random_vec(rng, (size_t)s.cin * s.hin * s.win * B);
      auto gy = random_vec(rng, (size_t)s.cout * HO * WO * B);

      std::vector<double> y0(gy.size()), gx0(x.size());
      std::vector<double> gw0(w.size()), gb0(bias.size());
      ref->conv2d_forward(w.data(), bias.data(), x.data(), y0.data(), s, B);
      ref->conv2d_backward_input(w.data(), gy.data(), gx0.data(), s, B);
      ref->conv2d_grad_params(x.data(), gy.data(), gw0.data(), gb0.data(), s, B);

      for (const Ops* lane : available()) {
        std::vector<double> y(y0.size(), -9.0), gx(gx0.size(), -9.0);
        std::vector<double> gw(gw0.size(), -9.0), gb(gb0.size(), -9.0);
        lane->conv2d_forward(w.data(), bias.data(), x.data(), y.data(), s, B);
        lane->conv2d_backward_input(w.data(), gy.data(), gx.data(), s, B);
        lane->conv2d_grad_params(x.data(), gy.data(), gw.data(), gb.data(), s, B);
        CAPTURE(lane->name);
        CAPTURE(s.cin);
        CAPTURE(s.k);
        CAPTURE(s.stride);
        CAPTURE(s.pad);
        CAPTURE(B);
        CHECK(same_bits(y, y0));
        CHECK(same_bits(gx, gx0));
        CHECK(same_bits(gw, gw0));
        CHECK(same_bits(gb, gb0));
      }
    }
  }
}

TEST_CASE("elementwise kernels agree bitwise across lanes") {
  const Ops* ref = find("scalar");
  REQUIRE(ref != nullptr);
  std::mt19937_64 rng(13);
  for (int n : {1, 3, 4, 7, 8, 15, 16, 100, 1037}) {
    auto x = random_vec(rng, n);
    auto gy = random_vec(rng, n);
    auto a = random_vec(rng, n);
    auto b = random_vec(rng, n);
    x[0] = -0.0;  // relu of negative zero must be +0
    if (n > 4) x[4] = 0.0;

    std::vector<double> relu0(n), rb0(n), add0(n);
    ref->relu_forward(x.data(), relu0.data(), n);
    ref->relu_backward(x.data(), gy.data(), rb0.data(), n);
    ref->add(a.data(), b.data(), add0.data(), n);
    CHECK(!std::signbit(relu0[0]));

    auto p0 = random_vec(rng, n);
    auto g = random_vec(rng, n);
    auto m0 = random_vec(rng, n, -0.1, 0.1);
    auto v0 = random_vec(rng, n, 0.0, 0.1);
    std::vector<double> pr = p0, mr = m0, vr = v0;
    ref->adam_step(pr.data(), g.data(), mr.data(), vr.data(), n, 1e-3, 0.9,
                   0.999, 1e-8, 1.0 / (1 - 0.9), 1.0 / (1 - 0.999));
    std::vector<double> tr = a;
    ref->soft_update(tr.data(), b.data(), 0.995, n);

    for (const Ops* lane : available()) {
      CAPTURE(lane->name);
      CAPTURE(n);
      std::vector<double> relu1(n), rb1(n), add1(n);
      lane->relu_forward(x.data(), relu1.data(), n);
      lane->relu_backward(x.data(), gy.data(), rb1.data(), n);
      lane->add(a.data(), b.data(), add1.data(), n);
      CHECK(same_bits(relu1, relu0));
      CHECK(same_bits(rb1, rb0));
      CHECK(same_bits(add1, add0));

      std::vector<double> p1 = p0, m1 = m0, v1 = v0;
      lane->adam_step(p1.data(), g.data(), m1.data(), v1.data(), n, 1e-3, 0.9,
                      0.999, 1e-8, 1.0 / (1 - 0.9), 1.0 / (1 - 0.999));
      CHECK(same_bits(p1, pr));
      CHECK(same_bits(m1, mr));
      CHECK(same_bits(v1, vr));

      std::vector<double> t1 = a;
      lane->soft_update(t1.data(), b.data(), 0.995, n);
      CHECK(same_bits(t1, tr));
    }
  }
}

TEST_CASE("adam first step matches the closed form") {
  // From zero moments, one step with grad 1 moves the param by
  // -lr * 1/(1 + eps) regardless of the betas.
  for (const Ops* lane : available()) {
    CAPTURE(lane->name);
    double p = 0.0, g = 1.0, m = 0.0, v = 0.0;
    lane->adam_step(&p, &g, &m, &v, 1, 1e-4, 0.9, 0.999, 1e-8,
                    1.0 / (1 - 0.9), 1.0 / (1 - 0.999));
    CHECK(std::abs(p - (-1e-4)) < 1e-9);
    CHECK(m == doctest::Approx(0.1));
    CHECK(v == doctest::Approx(0.001));
  }
}

TEST_CASE("soft update endpoints") {
  for (const Ops* lane : available()) {
    CAPTURE(lane->name);
    std::vector<double> t = {1.0, -2.0, 0.5, 3.25, -0.75};
    const std::vector<double> t_orig = t;
    std::vector<double> o = {0.25, -1.5, 4.0, 0.0, 2.0};
    lane->soft_update(t.data(), o.data(), 1.0, (int)t.size());
    CHECK(same_bits(t, t_orig));  // rho = 1 freezes the target exactly

    lane->soft_update(t.data(), o.data(), 0.0, (int)t.size());
    CHECK(same_bits(t, o));  // rho = 0 copies the online params
  }
}

TEST_CASE("lane registry") {
  auto lanes = available();
  REQUIRE(!lanes.empty());
  CHECK(std::string(lanes.front()->name) == "scalar");
  CHECK(find("scalar") != nullptr);
  CHECK(find("no-such-lane") == nullptr);

  const Ops& def = active();
  set_active(find("scalar"));
  CHECK(std::string(active().name) == "scalar");
  set_active(nullptr);  // back to auto-detection
  CHECK(std::string(active().name) == std::string(def.name));
}
