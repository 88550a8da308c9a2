#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "drivesac/agents.hpp"
#include "drivesac/drivesim.hpp"
#include "drivesac/evalkit.hpp"
#include "json.hpp"

// Run plumbing: strict JSON run configuration, the deterministic training
// loop with its artifacts (config snapshot, reward CSV, checkpoints), route
// pool files, checkpoint evaluation, and the command entry points behind the
// CLI binary. Exit codes: 0 success, 1 contract/config error, 2 property
// suite failure.

namespace drivesac::runio {

// --- strict serializers (unknown keys rejected, absent keys take defaults) --
nlohmann::json to_json(const drivesim::EnvConfig& cfg);
drivesim::EnvConfig env_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const drivesim::RouteParams& p);
drivesim::RouteParams route_params_from_json(const nlohmann::json& j);

struct RunConfig {
  std::string algorithm = "sac";  // "sac" | "ddpg"
  agents::SacConfig sac;          // read when algorithm == "sac"
  agents::DdpgConfig ddpg;        // read when algorithm == "ddpg"
  drivesim::EnvConfig env;
  drivesim::RouteParams route_params;  // training pool generator settings
  int route_pool = 8;                  // number of pool routes
  std::uint64_t route_seed = 1000;     // seed of the first pool route
  int episodes = 400;

  // Also checks that the render size feeds the encoder exactly.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// --- route pools -----------------------------------------------------------
std::vector<drivesim::RouteSpec> generate_route_pool(
    std::uint64_t first_seed, int count, const drivesim::RouteParams& params);
void save_routes(const std::filesystem::path& path,
                 std::span<const drivesim::RouteSpec> routes);
// Accepts {"routes": [...]}, a bare array, or a single-route object.
std::vector<drivesim::RouteSpec> load_routes(const std::filesystem::path& path);

// --- training --------------------------------------------------------------
struct EpisodeRow {
  int episode = 0;
  long env_steps = 0;  // cumulative across the run
  double ret = 0.0;
  double q1_loss = 0.0, q2_loss = 0.0, policy_loss = 0.0, mean_target = 0.0;
  double avg_reward = 0.0;  // per-step mean, the smoothed-curve quantity
};

struct TrainResult {
  std::vector<EpisodeRow> rows;
  std::filesystem::path csv_path;
  std::filesystem::path latest_checkpoint;
  std::filesystem::path best_checkpoint;
  double best_return = 0.0;
};

// Single-threaded deterministic loop. Writes rewards.csv, checkpoint_latest
// and checkpoint_best under out_dir; a zero budget still writes the initial
// checkpoint and the CSV header. Does not write config.json (cmd_train
// snapshots the input file bytes).
TrainResult run_training(const RunConfig& cfg, std::uint64_t seed,
                         const std::filesystem::path& out_dir,
                         bool progress = false);

// Mean return of a uniform-random policy over the same pool and episode
// seeding as run_training; the smoke-test baseline.
double random_policy_mean_return(const RunConfig& cfg, std::uint64_t seed,
                                 int episodes);

// --- evaluation ------------------------------------------------------------
// Rebuilds the agent from checkpoint metadata, drives every route in
// deterministic mode on a noise-free copy of the stored environment, writes
// traces, routes, a checkpoint copy, report.json and report.csv to out_dir.
// Empty method label defaults to "<algorithm>-<modality>".
evalkit::EvalReport evaluate_checkpoint(
    const std::filesystem::path& checkpoint,
    const std::vector<drivesim::RouteSpec>& routes,
    const std::filesystem::path& out_dir, std::string method = "");

// --- reward-curve smoothing --------------------------------------------------
// s_0 = x_0, s_t = alpha*s_{t-1} + (1-alpha)*x_t; equal inputs are a fixed
// point bit for bit.
std::vector<double> ema(std::span<const double> xs, double alpha);

// --- command entry points ----------------------------------------------------
int cmd_train(const std::filesystem::path& config_path, std::uint64_t seed,
              const std::filesystem::path& out_dir);
// Exactly one of routes_file / seed_range ("a..b") may be non-empty.
int cmd_eval(const std::filesystem::path& checkpoint,
             const std::string& routes_file, const std::string& seed_range,
             const std::filesystem::path& out_dir);
// Full-parameter central-difference sweep of a FusionNet against its analytic
// backward pass. Returns the max relative error over all parameter entries
// whose loss is smooth across the probed interval: entries where the forward
// and backward one-sided differences disagree straddle a relu kink and are
// skipped (the skip rule uses forward passes only, so it cannot mask a broken
// backward rule).
double fusion_net_fd(agents::FusionNet& net, const fusion::EncoderConfig& enc,
                     int batch, std::uint64_t seed);

struct GradientSweep {
  double stack_error = 0.0;   // worst over the layer-kind stacks
  double fusion_error = 0.0;  // worst over policy-like and critic-like nets
};

// One pass of the gradient property at a given seed: stacks covering every
// layer kind (dense, tanh, conv, relu, flatten, residual block) plus full
// encoder+head networks in policy and critic arrangements.
GradientSweep gradient_sweep(std::uint64_t seed);

// Runs the gradient, reward, target, and buffer suites, printing a max-error
// line per suite. inject_fault swaps in a sign-flipped relu backward rule to
// prove the gradient suite can fail.
int cmd_verify(bool inject_fault = false);
int cmd_export_curve(const std::filesystem::path& run_dir, double alpha = 0.9);

}  // namespace drivesac::runio
