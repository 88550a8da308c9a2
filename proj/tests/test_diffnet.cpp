#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "drivesac/diffnet.hpp"

using namespace drivesac;
using namespace drivesac::diffnet;

namespace {

std::vector<double> random_vec(RandomStream& rng, long n, double lo = -1.0,
                               double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("dense identity forward") {
  ParamStore store;
  Stack net;
  net.add(std::make_unique<Dense>(store, "d", 3, 3, nullptr));
  Param& w = store.at("d/w");
  w.value = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const std::vector<double> x = {1.0, 2.0, 3.0};
  const double* y = net.forward(x.data(), 1);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
  CHECK(y[2] == 3.0);
}

TEST_CASE("relu forward definition") {
  ParamStore store;
  Stack net;
  net.add(std::make_unique<ReLU>(Shape{3}));
  const std::vector<double> x = {-1.0, 0.0, 2.0};
  const double* y = net.forward(x.data(), 1);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);
}

TEST_CASE("conv with zero weights yields bias everywhere") {
  ParamStore store;
  Stack net;
  net.add(std::make_unique<Conv2d>(store, "c", kernels::ConvShape{2, 4, 4, 3, 3, 1, 1},
                                   nullptr));
  store.at("c/b").value = {0.5, 0.5, 0.5};
  RandomStream rng(5);
  auto x = random_vec(rng, 2 * 4 * 4 * 2);
  const double* y = net.forward(x.data(), 2);
  for (long j = 0; j < 3 * 4 * 4 * 2; ++j) CHECK(y[j] == 0.5);
}

TEST_CASE("scalar linear backward gives the input") {
  // f(w) = w * x with x = 3: dL/dw = 3 for upstream gradient 1
  ParamStore store;
  Stack net;
  net.add(std::make_unique<Dense>(store, "d", 1, 1, nullptr));
  const std::vector<double> x = {3.0};
  net.forward(x.data(), 1);
  const double up = 1.0;
  net.backward(&up, nullptr, 1);
  CHECK(store.at("d/w").grad[0] == 3.0);
  CHECK(store.at("d/b").grad[0] == 1.0);
}

TEST_CASE("tanh gradient at zero is one") {
  // f(w) = tanh(w * 1) at w = 0
  ParamStore store;
  Stack net;
  net.add(std::make_unique<Dense>(store, "d", 1, 1, nullptr));
  net.add(std::make_unique<Tanh>(Shape{1}));
  const std::vector<double> x = {1.0};
  net.forward(x.data(), 1);
  const double up = 1.0;
  net.backward(&up, nullptr, 1);
  CHECK(store.at("d/w").grad[0] == 1.0);
}

TEST_CASE("central differences are exact on a quadratic") {
  // the checker's formula, evaluated by hand on f(w) = w^2 at w = 1
  const double eps = 1e-5;
  auto f = [](double w) { return w * w; };
  const double numeric = (f(1.0 + eps) - f(1.0 - eps)) / (2.0 * eps);
  CHECK(std::abs(numeric - 2.0) < 1e-9);
}

TEST_CASE("finite differences on a linear net are below 1e-10") {
  ParamStore store;
  RandomStream rng(3);
  Stack net;
  net.add(std::make_unique<Dense>(store, "d", 4, 3, &rng));
  auto x = random_vec(rng, 4 * 2);
  CHECK(finite_difference_check(net, store, x, 2, 1e-5) < 1e-10);
}

TEST_CASE("three layer net matches finite differences tightly") {
  ParamStore store;
  RandomStream rng(7);
  Stack net;
  net.add(std::make_unique<Dense>(store, "d1", 5, 8, &rng));
  net.add(std::make_unique<Tanh>(Shape{8}));
  net.add(std::make_unique<Dense>(store, "d2", 8, 3, &rng));
  auto x = random_vec(rng, 5 * 2);
  CHECK(finite_difference_check(net, store, x, 2, 1e-5) < 1e-6);
}

TEST_CASE("every layer kind passes gradient checks on 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    RandomStream rng(seed * 7919 + 1);

    {
      ParamStore store;
      Stack net;
      net.add(std::make_unique<Dense>(store, "d", 5, 7, &rng));
      auto x = random_vec(rng, 5 * 3);
      CHECK(finite_difference_check(net, store, x, 3, 1e-5, seed) < 1e-4);
    }
    {
      ParamStore store;
      Stack net;
      net.add(std::make_unique<Conv2d>(store, "c",
                                       kernels::ConvShape{2, 6, 6, 3, 3, 2, 1}, &rng));
      auto x = random_vec(rng, 2 * 6 * 6 * 3);
      CHECK(finite_difference_check(net, store, x, 3, 1e-5, seed) < 1e-4);
    }
    {
      ParamStore store;
      Stack net;
      net.add(std::make_unique<Dense>(store, "d1", 4, 6, &rng));
      net.add(std::make_unique<ReLU>(Shape{6}));
      net.add(std::make_unique<Dense>(store, "d2", 6, 2, &rng));
      auto x = random_vec(rng, 4 * 3);
      CHECK(finite_difference_check(net, store, x, 3, 1e-5, seed) < 1e-4);
    }
    {
      ParamStore store;
      Stack net;
      net.add(std::make_unique<Dense>(store, "d1", 4, 6, &rng));
      net.add(std::make_unique<Tanh>(Shape{6}));
      net.add(std::make_unique<Dense>(store, "d2", 6, 2, &rng));
      auto x = random_vec(rng, 4 * 3);
      CHECK(finite_difference_check(net, store, x, 3, 1e-5, seed) < 1e-4);
    }
    {
      ParamStore store;
      Stack net;
      net.add(std::make_unique<Conv2d>(store, "c",
                                       kernels::ConvShape{1, 5, 5, 2, 3, 1, 1}, &rng));
      net.add(std::make_unique<Flatten>(Shape{2, 5, 5}));
      net.add(std::make_unique<Dense>(store, "d", 50, 4, &rng));
      auto x = random_vec(rng, 1 * 5 * 5 * 3);
      CHECK(finite_difference_check(net, store, x, 3, 1e-5, seed) < 1e-4);
    }
    {
      ParamStore store;
      Stack net;
      net.add(std::make_unique<ResidualBlock>(store, "rb", 2, 4, 8, 8, 2, &rng));
      auto x = random_vec(rng, 2 * 8 * 8 * 3);
      CHECK(finite_difference_check(net, store, x, 3, 1e-5, seed) < 1e-4);
    }
  }
}

TEST_CASE("residual output equals conv path plus projection path") {
  ParamStore store;
  RandomStream rng(23);
  ResidualBlock rb(store, "rb", 2, 4, 8, 8, 2, &rng);
  const int B = 3;
  auto x = random_vec(rng, 2 * 8 * 8 * B);
  std::vector<double> y(4 * 4 * 4 * B), scratch(rb.scratch_count(B));
  rb.forward(x.data(), y.data(), scratch.data(), B);

  // replicate the two paths with the kernels directly
  const auto& k = kernels::active();
  const kernels::ConvShape c1{2, 8, 8, 4, 3, 2, 1};
  const kernels::ConvShape c2{4, 4, 4, 4, 3, 1, 1};
  const kernels::ConvShape pr{2, 8, 8, 4, 1, 2, 0};
  std::vector<double> y1(4 * 4 * 4 * B), r1(y1.size()), conv_path(y1.size()),
      proj_path(y1.size());
  k.conv2d_forward(store.at("rb/conv1/w").value.data(), store.at("rb/conv1/b").value.data(),
                   x.data(), y1.data(), c1, B);
  k.relu_forward(y1.data(), r1.data(), (int)y1.size());
  k.conv2d_forward(store.at("rb/conv2/w").value.data(), store.at("rb/conv2/b").value.data(),
                   r1.data(), conv_path.data(), c2, B);
  k.conv2d_forward(store.at("rb/proj/w").value.data(), store.at("rb/proj/b").value.data(),
                   x.data(), proj_path.data(), pr, B);
  for (size_t j = 0; j < y.size(); ++j) CHECK(y[j] == conv_path[j] + proj_path[j]);
}

TEST_CASE("forward is pure") {
  ParamStore store;
  RandomStream rng(31);
  Stack net;
  net.add(std::make_unique<ResidualBlock>(store, "rb", 1, 4, 8, 8, 2, &rng));
  net.add(std::make_unique<Flatten>(Shape{4, 4, 4}));
  net.add(std::make_unique<Dense>(store, "d", 64, 10, &rng));
  auto x = random_vec(rng, 1 * 8 * 8 * 2);
  const double* y1 = net.forward(x.data(), 2);
  std::vector<double> first(y1, y1 + 10 * 2);
  const double* y2 = net.forward(x.data(), 2);
  CHECK(std::memcmp(first.data(), y2, sizeof(double) * first.size()) == 0);
}

TEST_CASE("backward state errors") {
  ParamStore store;
  Stack net;
  net.add(std::make_unique<Dense>(store, "d", 2, 2, nullptr));
  std::vector<double> gy = {1.0, 1.0};
  CHECK_THROWS_AS(net.backward(gy.data(), nullptr, 1), std::logic_error);
  std::vector<double> x = {1.0, 2.0};
  net.forward(x.data(), 1);
  net.backward(gy.data(), nullptr, 1);
  CHECK_THROWS_AS(net.backward(gy.data(), nullptr, 1), std::logic_error);
}

TEST_CASE("stack rejects incompatible shapes") {
  ParamStore store;
  Stack net;
  net.add(std::make_unique<Dense>(store, "d1", 3, 4, nullptr));
  CHECK_THROWS_WITH_AS(net.add(std::make_unique<Dense>(store, "d2", 5, 2, nullptr)),
                       doctest::Contains("expects input 5"), std::invalid_argument);
}

TEST_CASE("adam first step and monotone descent") {
  ParamStore store;
  Param& p = store.create("p", Shape{1});
  AdamState adam(store, AdamConfig{1e-4, 0.9, 0.999, 1e-8});

  p.grad[0] = 1.0;
  p.grad_set = true;
  adam.step();
  CHECK(std::abs(p.value[0] - (-1e-4)) < 1e-9);
  CHECK(p.grad_set == false);  // gradients cleared afterwards

  const double after_one = p.value[0];
  p.grad[0] = 1.0;
  p.grad_set = true;
  adam.step();
  CHECK(p.value[0] < after_one);  // strictly decreases under constant gradient
}

TEST_CASE("adam with zero gradients is the identity") {
  ParamStore store;
  RandomStream rng(41);
  Stack net;
  net.add(std::make_unique<Dense>(store, "d", 3, 3, &rng));
  std::vector<double> before = store.at("d/w").value;
  AdamState adam(store, {});
  for (Param* p : store.all()) p->grad_set = true;  // grads are zero-filled
  adam.step();
  CHECK(store.at("d/w").value == before);
}

TEST_CASE("adam rejects missing gradients") {
  ParamStore store;
  store.create("p", Shape{2});
  AdamState adam(store, {});
  CHECK_THROWS_AS(adam.step(), std::logic_error);
}

TEST_CASE("checkpoint round-trip is bitwise exact") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "drivesac_ckpt_test.bin";
  ParamStore store;
  RandomStream rng(47);
  Dense d(store, "net/d", 7, 5, &rng);
  Conv2d c(store, "net/c", kernels::ConvShape{2, 4, 4, 3, 3, 2, 1}, &rng);
  store.at("net/d/w").value[3] = 0x1.fedcba9876543p-7;  // exercise odd bit patterns
  save_checkpoint(path, store, {{"note", "test"}});

  ParamStore loaded;
  Dense d2(loaded, "net/d", 7, 5, nullptr);
  Conv2d c2(loaded, "net/c", kernels::ConvShape{2, 4, 4, 3, 3, 2, 1}, nullptr);
  load_checkpoint(path, loaded);
  for (const Param* p : store.all()) {
    const Param& q = loaded.at(p->name);
    REQUIRE(q.shape == p->shape);
    CHECK(std::memcmp(q.value.data(), p->value.data(),
                      p->value.size() * sizeof(double)) == 0);
  }
  CHECK(read_checkpoint(path).meta.at("note") == "test");
  fs::remove(path);
}

TEST_CASE("checkpoint load refuses mismatched networks") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "drivesac_ckpt_mismatch.bin";
  ParamStore store;
  Dense d(store, "a", 3, 3, nullptr);
  save_checkpoint(path, store, {});

  ParamStore other;
  Dense d2(other, "b", 3, 3, nullptr);
  CHECK_THROWS_WITH_AS(load_checkpoint(path, other), doctest::Contains("b/w"),
                       std::invalid_argument);

  ParamStore reshaped;
  Dense d3(reshaped, "a", 3, 4, nullptr);
  CHECK_THROWS_WITH_AS(load_checkpoint(path, reshaped),
                       doctest::Contains("shape mismatch"), std::invalid_argument);
  fs::remove(path);
}

TEST_CASE("row concat and split round-trip") {
  RandomStream rng(53);
  const int B = 5;
  auto a = random_vec(rng, 3 * B);
  auto b = random_vec(rng, 2 * B);
  std::vector<double> y(5 * B), a2(3 * B), b2(2 * B);
  concat_rows(a.data(), 3, b.data(), 2, y.data(), B);
  split_rows(y.data(), 3, 2, a2.data(), b2.data(), B);
  CHECK(a2 == a);
  CHECK(b2 == b);
  CHECK(y[3 * B] == b[0]);
}

TEST_CASE("duplicate parameter names are rejected") {
  ParamStore store;
  store.create("p", Shape{1});
  CHECK_THROWS_AS(store.create("p", Shape{2}), std::invalid_argument);
}
