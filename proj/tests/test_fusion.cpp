#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "drivesac/fusion.hpp"

using namespace drivesac;
using namespace drivesac::diffnet;
using namespace drivesac::fusion;

namespace {

std::vector<double> random_vec(RandomStream& rng, long n, double lo = -1.0,
                               double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

Observation random_obs(RandomStream& rng, int h = 16, int w = 16) {
  Observation o;
  o.h = h;
  o.w = w;
  o.image.resize((long)h * w);
  for (auto& p : o.image) p = rng.u01();
  for (auto& t : o.tracking) t = rng.uniform(-1.0, 1.0);
  return o;
}

const EncoderConfig kSmall{16, 16, {4, 8, 16}};

// Gradient check across both branches of the encoder: max relative error of
// analytic parameter gradients against central differences on the probe loss.
double encoder_fd_check(FusionEncoder& enc, ParamStore& store,
                        const std::vector<double>& image,
                        const std::vector<double>& track, int B, double eps,
                        std::uint64_t seed) {
  RandomStream rng(seed);
  const long n = (long)kStateFeatures * B;
  std::vector<double> probe(n);
  for (auto& p : probe) p = rng.uniform(-1.0, 1.0);

  auto loss = [&]() {
    const double* y = enc.forward(image.data(), track.data(), B);
    double acc = 0.0;
    for (long j = 0; j < n; ++j) acc += probe[j] * y[j];
    return acc;
  };

  loss();
  enc.backward(probe.data(), nullptr, nullptr, B, true);

  double max_rel = 0.0;
  for (Param* p : store.all()) {
    REQUIRE(p->grad_set);
    for (long j = 0; j < p->shape.count(); ++j) {
      const double orig = p->value[j];
      p->value[j] = orig + eps;
      const double lp = loss();
      p->value[j] = orig - eps;
      const double lm = loss();
      p->value[j] = orig;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double denom = std::max({std::abs(p->grad[j]), std::abs(numeric), 1e-12});
      max_rel = std::max(max_rel, std::abs(p->grad[j] - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace

TEST_CASE("shortcut passes input through when conv path is zeroed") {
  ParamStore store;
  ResidualBlock rb(store, "rb", 2, 2, 6, 6, 1, nullptr);  // zero-init params
  Param& proj = store.at("rb/proj/w");                    // [2,2,1,1]
  proj.value = {1.0, 0.0, 0.0, 1.0};                      // identity mapping
  const int B = 2;
  RandomStream rng(3);
  auto x = random_vec(rng, 2 * 6 * 6 * B);
  std::vector<double> y(x.size()), scratch(rb.scratch_count(B));
  rb.forward(x.data(), y.data(), scratch.data(), B);
  CHECK(std::memcmp(y.data(), x.data(), x.size() * sizeof(double)) == 0);
}

TEST_CASE("zero projection leaves the conv path alone") {
  ParamStore store;
  RandomStream rng(5);
  ResidualBlock rb(store, "rb", 2, 3, 6, 6, 1, &rng);
  std::fill(store.at("rb/proj/w").value.begin(), store.at("rb/proj/w").value.end(), 0.0);
  std::fill(store.at("rb/proj/b").value.begin(), store.at("rb/proj/b").value.end(), 0.0);
  const int B = 2;
  auto x = random_vec(rng, 2 * 6 * 6 * B);
  std::vector<double> y(3 * 6 * 6 * B), scratch(rb.scratch_count(B));
  rb.forward(x.data(), y.data(), scratch.data(), B);

  const auto& k = kernels::active();
  std::vector<double> y1(y.size()), r1(y.size()), conv_path(y.size());
  k.conv2d_forward(store.at("rb/conv1/w").value.data(), store.at("rb/conv1/b").value.data(),
                   x.data(), y1.data(), {2, 6, 6, 3, 3, 1, 1}, B);
  k.relu_forward(y1.data(), r1.data(), (int)y1.size());
  k.conv2d_forward(store.at("rb/conv2/w").value.data(), store.at("rb/conv2/b").value.data(),
                   r1.data(), conv_path.data(), {3, 6, 6, 3, 3, 1, 1}, B);
  for (size_t j = 0; j < y.size(); ++j) CHECK(y[j] == conv_path[j]);
}

TEST_CASE("block output minus projection equals the conv path") {
  ParamStore store;
  RandomStream rng(7);
  ResidualBlock rb(store, "rb", 2, 4, 8, 8, 2, &rng);
  const int B = 3;
  auto x = random_vec(rng, 2 * 8 * 8 * B);
  std::vector<double> y(4 * 4 * 4 * B), scratch(rb.scratch_count(B));
  rb.forward(x.data(), y.data(), scratch.data(), B);

  const auto& k = kernels::active();
  std::vector<double> y1(y.size()), r1(y.size()), conv_path(y.size()), proj(y.size());
  k.conv2d_forward(store.at("rb/conv1/w").value.data(), store.at("rb/conv1/b").value.data(),
                   x.data(), y1.data(), {2, 8, 8, 4, 3, 2, 1}, B);
  k.relu_forward(y1.data(), r1.data(), (int)y1.size());
  k.conv2d_forward(store.at("rb/conv2/w").value.data(), store.at("rb/conv2/b").value.data(),
                   r1.data(), conv_path.data(), {4, 4, 4, 4, 3, 1, 1}, B);
  k.conv2d_forward(store.at("rb/proj/w").value.data(), store.at("rb/proj/b").value.data(),
                   x.data(), proj.data(), {2, 8, 8, 4, 1, 2, 0}, B);
  for (size_t j = 0; j < y.size(); ++j)
    CHECK(y[j] - proj[j] == doctest::Approx(conv_path[j]).epsilon(1e-12));
}

TEST_CASE("encode produces the 116-feature state in fixed order") {
  ParamStore store;
  RandomStream rng(11);
  FusionEncoder enc(store, "enc", EncoderConfig{}, &rng);  // default 64x64
  Observation obs = random_obs(rng, 64, 64);
  auto f1 = enc.encode(obs);
  REQUIRE(f1.size() == 116);
  auto f2 = enc.encode(obs);
  CHECK(f1 == f2);  // determinism, bitwise

  // branch independence: new tracking, same image
  Observation obs2 = obs;
  for (auto& t : obs2.tracking) t += 0.25;
  auto f3 = enc.encode(obs2);
  CHECK(std::memcmp(f1.data(), f3.data(), 100 * sizeof(double)) == 0);
  bool track_changed = std::memcmp(f1.data() + 100, f3.data() + 100,
                                   16 * sizeof(double)) != 0;
  CHECK(track_changed);

  // ... and new image, same tracking
  Observation obs3 = obs;
  for (auto& p : obs3.image) p = 1.0 - p;
  auto f4 = enc.encode(obs3);
  CHECK(std::memcmp(f1.data() + 100, f4.data() + 100, 16 * sizeof(double)) == 0);
}

TEST_CASE("zero inputs with zero biases give a zero tracking slice") {
  ParamStore store;
  FusionEncoder enc(store, "enc", kSmall, nullptr);  // all params zero
  Observation obs;
  obs.h = obs.w = 16;
  obs.image.assign(16 * 16, 0.0);
  obs.tracking.fill(0.0);
  auto f = enc.encode(obs);
  REQUIRE(f.size() == 116);
  for (int j = 100; j < 116; ++j) CHECK(f[j] == 0.0);
}

TEST_CASE("encode_with_action appends the action unchanged") {
  ParamStore store;
  RandomStream rng(13);
  FusionEncoder enc(store, "enc", kSmall, &rng);
  Observation obs = random_obs(rng);
  auto e = enc.encode(obs);
  auto ea = enc.encode_with_action(obs, 0.5, 0.0);
  REQUIRE(ea.size() == 118);
  CHECK(std::memcmp(ea.data(), e.data(), 116 * sizeof(double)) == 0);
  CHECK(ea[116] == 0.5);
  CHECK(ea[117] == 0.0);

  auto extremes = enc.encode_with_action(obs, 1.0, -1.0);
  CHECK(extremes[116] == 1.0);
  CHECK(extremes[117] == -1.0);

  CHECK_THROWS_AS(enc.encode_with_action(obs, 1.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(enc.encode_with_action(obs, 0.5, -1.01), std::invalid_argument);
}

TEST_CASE("encode rejects mismatched image dimensions") {
  ParamStore store;
  FusionEncoder enc(store, "enc", kSmall, nullptr);
  Observation obs;
  obs.h = obs.w = 32;
  obs.image.assign(32 * 32, 0.0);
  CHECK_THROWS_AS(enc.encode(obs), std::invalid_argument);
}

TEST_CASE("full encoder passes the gradient check") {
  for (std::uint64_t seed : {1ull, 2ull}) {
    CAPTURE(seed);
    ParamStore store;
    RandomStream rng(seed);
    FusionEncoder enc(store, "enc", kSmall, &rng);
    const int B = 2;
    auto image = random_vec(rng, 16 * 16 * B, 0.0, 1.0);
    auto track = random_vec(rng, 8 * B);
    CHECK(encoder_fd_check(enc, store, image, track, B, 1e-5, seed) < 1e-4);
  }
}

TEST_CASE("encoder input gradients flow to both branches") {
  ParamStore store;
  RandomStream rng(17);
  FusionEncoder enc(store, "enc", kSmall, &rng);
  const int B = 2;
  auto image = random_vec(rng, 16 * 16 * B, 0.0, 1.0);
  auto track = random_vec(rng, 8 * B);
  enc.forward(image.data(), track.data(), B);
  std::vector<double> g_state(116 * B, 0.5), g_image(16 * 16 * B, 0.0),
      g_track(8 * B, 0.0);
  enc.backward(g_state.data(), g_image.data(), g_track.data(), B);
  double img_mag = 0.0, trk_mag = 0.0;
  for (double v : g_image) img_mag += std::abs(v);
  for (double v : g_track) trk_mag += std::abs(v);
  CHECK(img_mag > 0.0);
  CHECK(trk_mag > 0.0);
}
