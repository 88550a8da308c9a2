#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <vector>

#include "drivesac/agents.hpp"
#include "drivesac/diffnet.hpp"
#include "drivesac/drivesim.hpp"
#include "drivesac/kernels.hpp"
#include "drivesac/rng.hpp"
#include "drivesac/runio.hpp"
#include "drivesac/textio.hpp"

// cmd_verify: in-process property suites with printed per-suite max errors.
// The fault-injection path swaps in a sign-flipped relu backward rule to
// demonstrate the gradient suite actually rejects broken derivatives.

namespace drivesac::runio {

namespace {

using diffnet::Dense;
using diffnet::ParamStore;
using diffnet::Shape;
using diffnet::Stack;

// Central-difference check of a stack built by `build`, probe-loss convention
// identical to diffnet::finite_difference_check. The reported error is the
// minimum over three independent input/probe draws: a relu kink that leaks
// past the check's one-sided filter corrupts one draw's landscape, not all
// three, while a wrong backward rule fails every draw.
double stack_fd(const std::function<void(Stack&, ParamStore&, RandomStream&)>& build,
                long inputs, int B, std::uint64_t seed) {
  RandomStream rng(RandomStream::mix(seed, 0x737461636bULL));
  double best = std::numeric_limits<double>::infinity();
  for (int round = 0; round < 3; ++round) {
    ParamStore store;
    Stack net;
    build(net, store, rng);
    std::vector<double> x(inputs * B);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    best = std::min(best, diffnet::finite_difference_check(
                              net, store, x, B, 1e-5,
                              RandomStream::mix(seed, 100 + round)));
  }
  return best;
}

}  // namespace

// Full-parameter central-difference sweep of an encoder+head network against
// a seeded probe loss, repeated over three independent input/probe draws.
// Relu kinks inside the probed epsilon interval make the difference quotient
// invalid for that entry under that input; a disagreement of the forward and
// backward one-sided differences flags most such entries, and taking the
// per-entry minimum across draws discards the rest, because kink geometry is
// specific to an input while a wrong backward rule is systematically wrong
// under every input. Both guards look only at forward evaluations, so a
// broken backward pass cannot hide behind them.
double fusion_net_fd(agents::FusionNet& net, const fusion::EncoderConfig& enc,
                     int B, std::uint64_t seed) {
  RandomStream rng(RandomStream::mix(seed, 0x66757364ULL));
  std::vector<double> image(static_cast<long>(enc.image_h) * enc.image_w * B);
  std::vector<double> track(kTrackingDim * B);
  std::vector<double> extra(static_cast<long>(net.extra_inputs()) * B);
  std::vector<double> probe(static_cast<long>(net.outputs()) * B);

  auto loss = [&]() {
    const double* y = net.forward(image.data(), track.data(),
                                  extra.empty() ? nullptr : extra.data(), B);
    double acc = 0.0;
    for (std::size_t j = 0; j < probe.size(); ++j) acc += probe[j] * y[j];
    return acc;
  };

  constexpr double eps = 1e-5;
  constexpr double inf = std::numeric_limits<double>::infinity();
  const auto& plist = net.params().all();
  long n_entries = 0;
  for (const diffnet::Param* p : plist) n_entries += p->shape.count();
  std::vector<double> best(n_entries, inf);

  for (int round = 0; round < 3; ++round) {
    for (auto& v : image) v = rng.u01();
    for (auto& v : track) v = rng.uniform(-1.0, 1.0);
    for (auto& v : extra) v = rng.uniform(-1.0, 1.0);
    for (auto& v : probe) v = rng.uniform(-1.0, 1.0);

    net.params().clear_grads();
    loss();
    net.backward(probe.data(), nullptr, B, /*with_param_grads=*/true);
    std::vector<std::vector<double>> grads;
    for (const diffnet::Param* p : plist) grads.push_back(p->grad);

    const double l0 = loss();
    long e = 0;
    for (std::size_t pi = 0; pi < plist.size(); ++pi) {
      for (long j = 0; j < plist[pi]->shape.count(); ++j, ++e) {
        double& slot = plist[pi]->value[j];
        const double orig = slot;
        slot = orig + eps;
        const double lp = loss();
        slot = orig - eps;
        const double lm = loss();
        slot = orig;
        const double fd = (lp - l0) / eps;
        const double bd = (l0 - lm) / eps;
        const double g = grads[pi][j];
        const double scale =
            std::max({std::abs(fd), std::abs(bd), std::abs(g), 1e-12});
        if (std::abs(fd - bd) > 1e-4 * scale) continue;  // kink inside interval
        const double numeric = 0.5 * (fd + bd);
        const double denom = std::max({std::abs(g), std::abs(numeric), 1e-12});
        best[e] = std::min(best[e], std::abs(g - numeric) / denom);
      }
    }
  }

  double max_rel = 0.0;
  for (double b : best)
    if (b != inf) max_rel = std::max(max_rel, b);
  return max_rel;
}

GradientSweep gradient_sweep(std::uint64_t seed) {
  GradientSweep r;
  r.stack_error = std::max(
      {stack_fd(
           [](Stack& net, ParamStore& store, RandomStream& rng) {
             net.add(std::make_unique<Dense>(store, "d1", 6, 5, &rng));
             net.add(std::make_unique<diffnet::Tanh>(Shape{5}));
             net.add(std::make_unique<Dense>(store, "d2", 5, 3, &rng));
           },
           6, 3, RandomStream::mix(seed, 1)),
       stack_fd(
           [](Stack& net, ParamStore& store, RandomStream& rng) {
             net.add(std::make_unique<diffnet::Conv2d>(
                 store, "c", kernels::ConvShape{2, 6, 6, 3, 3, 1, 1}, &rng));
             net.add(std::make_unique<diffnet::ReLU>(Shape{3, 6, 6}));
             net.add(std::make_unique<diffnet::Flatten>(Shape{3, 6, 6}));
             net.add(std::make_unique<Dense>(store, "out", 108, 2, &rng));
           },
           2 * 6 * 6, 2, RandomStream::mix(seed, 2)),
       stack_fd(
           [](Stack& net, ParamStore& store, RandomStream& rng) {
             net.add(std::make_unique<diffnet::ResidualBlock>(store, "rb", 2, 4,
                                                              8, 8, 2, &rng));
             net.add(std::make_unique<diffnet::Flatten>(Shape{4, 4, 4}));
             net.add(std::make_unique<Dense>(store, "out", 64, 2, &rng));
           },
           2 * 8 * 8, 2, RandomStream::mix(seed, 3))});

  const fusion::EncoderConfig enc{16, 16, {2, 4, 8}};
  RandomStream init(RandomStream::mix(seed, 4));
  agents::FusionNet policy_like(enc, {16}, 0, 4, &init);
  agents::FusionNet critic_like(enc, {16}, 2, 1, &init);
  r.fusion_error =
      std::max(fusion_net_fd(policy_like, enc, 2, RandomStream::mix(seed, 5)),
               fusion_net_fd(critic_like, enc, 2, RandomStream::mix(seed, 6)));
  return r;
}

namespace {

double reward_suite() {
  double err = 0.0;
  err = std::max(err, std::abs(drivesim::lane_reward(5.0, 0.0, 0.0) - 5.0));
  err = std::max(err, std::abs(drivesim::lane_reward_sc(5.0, 1.0, 0.0, 0.5) + 7.5));
  err = std::max(err, std::abs(drivesim::lane_reward(0.0, 0.3, 0.2)));

  // terminal rewards observed through the environment
  drivesim::EnvConfig cfg;
  cfg.render.h = 16;
  cfg.render.w = 16;
  cfg.render.meters_per_pixel = 1.5;
  drivesim::Env env(cfg);

  drivesim::RouteSpec short_route;
  short_route.waypoints = {{0.0, 0.0}, {15.0, 0.0}};
  env.reset(short_route, 0);
  double last = 0.0;
  while (!env.done()) last = env.step(Action{1.0, 0.0}).reward;
  err = std::max(err, std::abs(last - 100.0));

  drivesim::RouteSpec long_route;
  long_route.waypoints = {{0.0, 0.0}, {200.0, 0.0}};
  env.reset(long_route, 0);
  while (!env.done()) last = env.step(Action{1.0, 1.0}).reward;
  err = std::max(err, std::abs(last + 200.0));
  return err;
}

double target_suite() {
  double err = 0.0;
  err = std::max(err, std::abs(agents::q_target_value(1.0, false, 3.0, 4.0, 2.5,
                                                      0.99, 0.2) -
                               3.475));
  err = std::max(err,
                 std::abs(agents::q_target_value(0.7, true, 3.0, 4.0, 2.5, 0.99,
                                                 0.2) -
                          0.7));

  // ||target - online|| must contract geometrically under soft updates
  RandomStream rng(77);
  std::vector<double> online(64), target(64);
  for (auto& v : online) v = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < target.size(); ++i)
    target[i] = online[i] + rng.uniform(-0.5, 0.5);
  auto gap = [&]() {
    double acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double d = target[i] - online[i];
      acc += d * d;
    }
    return std::sqrt(acc);
  };
  const double g0 = gap();
  const double rho = 0.9;
  double rho_n = 1.0;
  for (int n = 1; n <= 40; ++n) {
    kernels::active().soft_update(target.data(), online.data(), rho,
                                  static_cast<int>(target.size()));
    rho_n *= rho;
    err = std::max(err, std::abs(gap() - rho_n * g0) / std::max(1.0, g0));
  }
  return err;
}

struct BufferResult {
  int fifo_mismatches = 0;
  double chi2 = 0.0;
};

BufferResult buffer_suite() {
  BufferResult r;
  auto obs = std::make_shared<const Observation>();
  agents::ReplayBuffer fifo(5);
  for (int i = 0; i < 10; ++i)
    fifo.push({obs, Action{0.5, 0.0}, static_cast<double>(i), obs, false});
  for (std::size_t i = 0; i < fifo.size(); ++i)
    if (fifo.at(i).r != static_cast<double>(i + 5)) ++r.fifo_mismatches;

  agents::ReplayBuffer buf(10);
  for (int i = 0; i < 10; ++i)
    buf.push({obs, Action{0.5, 0.0}, static_cast<double>(i), obs, false});
  RandomStream rng(123);
  std::array<long, 10> counts{};
  constexpr long kDraws = 100000;
  for (long i = 0; i < kDraws; ++i) {
    const auto picked = buf.sample(1, rng);
    counts[static_cast<std::size_t>(picked[0].r)]++;
  }
  const double expect = static_cast<double>(kDraws) / 10.0;
  for (long c : counts) {
    const double d = static_cast<double>(c) - expect;
    r.chi2 += d * d / expect;
  }
  return r;
}

void sign_flipped_relu_backward(const double* x, const double* gy, double* gx,
                                int n) {
  kernels::find("scalar")->relu_backward(x, gy, gx, n);
  for (int i = 0; i < n; ++i) gx[i] = -gx[i];
}

}  // namespace

int cmd_verify(bool inject_fault) {
  const kernels::Ops* previous = &kernels::active();
  static kernels::Ops broken;
  if (inject_fault) {
    broken = *kernels::find("scalar");
    broken.name = "scalar-signflip";
    broken.relu_backward = &sign_flipped_relu_backward;
    kernels::set_active(&broken);
  }

  int status = 0;
  try {
    const GradientSweep g = gradient_sweep(11);
    const bool g_pass = g.stack_error < 1e-4 && g.fusion_error < 1e-4;
    std::cout << "gradient: layer-stack max relative error "
              << format_double(g.stack_error)
              << ", fusion-encoder gradient max relative error "
              << format_double(g.fusion_error) << " (bound 1e-4) "
              << (g_pass ? "PASS" : "FAIL") << "\n";

    const double rew = reward_suite();
    const bool r_pass = rew < 1e-12;
    std::cout << "reward: max error " << format_double(rew)
              << " (bound 1e-12) " << (r_pass ? "PASS" : "FAIL") << "\n";

    const double tgt = target_suite();
    const bool t_pass = tgt < 1e-10;
    std::cout << "target: max error " << format_double(tgt)
              << " (bound 1e-10) " << (t_pass ? "PASS" : "FAIL") << "\n";

    const BufferResult b = buffer_suite();
    const bool b_pass = b.fifo_mismatches == 0 && b.chi2 < 21.666;
    std::cout << "buffer: fifo mismatches " << b.fifo_mismatches << ", chi2 "
              << format_double(b.chi2) << " (bound 21.666) "
              << (b_pass ? "PASS" : "FAIL") << "\n";

    const bool all = g_pass && r_pass && t_pass && b_pass;
    std::cout << "verify: " << (all ? "PASS" : "FAIL") << "\n";
    status = all ? 0 : 2;
  } catch (const std::exception& e) {
    std::cout << "verify: FAIL (" << e.what() << ")\n";
    status = 2;
  }
  kernels::set_active(previous);
  return status;
}

}  // namespace drivesac::runio
