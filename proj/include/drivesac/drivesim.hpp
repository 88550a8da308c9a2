#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "drivesac/action.hpp"
#include "drivesac/observation.hpp"
#include "drivesac/rng.hpp"

// Deterministic 2D lane-following world: procedural waypoint routes, bicycle
// kinematics, an egocentric top-down camera, and the speed/alignment/offset
// reward. Replay of a (seed, action sequence) pair is bitwise identical.

namespace drivesac::drivesim {

struct VehicleState {
  double x = 0.0, y = 0.0;  // meters
  double heading = 0.0;     // radians, world frame
  double v = 0.0;           // m/s, nonnegative
};

struct VehicleParams {
  double a_max = 3.0;      // full-throttle acceleration, m/s^2
  double c_drag = 0.1;     // linear drag, 1/s
  double v_max = 15.0;     // speed clamp, m/s
  double wheelbase = 2.5;  // m
  double delta_max = 0.5;  // max steering angle, rad
  double dt = 0.05;        // integration step, s
};

// One integration step: speed and heading update from the current state, the
// position advances with the pre-update speed and heading.
VehicleState bicycle_step(const VehicleState& s, const Action& a,
                          const VehicleParams& p);

struct RouteSpec {
  std::vector<std::array<double, 2>> waypoints;  // ordered, meters
  double lane_half_width = 1.75;
  double goal_radius = 2.0;
  std::uint64_t seed = 0;  // generation seed, 0 for hand-built routes
};

enum class Difficulty { straight, gentle, curves };

struct RouteParams {
  Difficulty difficulty = Difficulty::curves;
  double min_length = 100.0;  // meters
  double max_length = 300.0;
  double spacing = 2.0;          // waypoint spacing
  double lane_half_width = 1.75;
  double goal_radius = 2.0;
  double max_curvature = 0.08;   // generator clamp; must stay <= 0.1
};

// Deterministic in the seed: a bounded-curvature heading random walk,
// re-drawn (with derived sub-seeds) until it is free of self-approach.
RouteSpec generate_route(std::uint64_t seed, const RouteParams& params);

void save_route(const std::filesystem::path& path, const RouteSpec& route);
RouteSpec load_route(const std::filesystem::path& path);

// Polyline queries: nearest point, signed lateral offset (left of the path
// positive), heading error, progress, and signed curvature by arclength.
class PathGeometry {
 public:
  explicit PathGeometry(const RouteSpec& route);

  struct Projection {
    double d = 0.0;         // signed lateral offset, m
    double s = 0.0;         // arclength of the nearest point, m
    double tx = 0.0, ty = 0.0;  // unit tangent of the nearest segment
    int segment = 0;
  };
  // Exhaustive scan over every segment; ties keep the earliest segment.
  Projection project(double x, double y) const;

  // Signed angle in (-pi, pi] between the vehicle heading and the tangent.
  static double heading_error(const Projection& p, double heading);

  double curvature_at(double s) const;  // linear in s between waypoints
  double total_length() const { return cum_.back(); }
  const RouteSpec& route() const { return route_; }

 private:
  RouteSpec route_;
  std::vector<double> cum_;    // cumulative arclength per waypoint
  std::vector<double> kappa_;  // signed curvature per waypoint
};

// Tracking vector layout: [v, sin phi, cos phi, d, kappa at +5 m, +10 m,
// +20 m of lookahead arclength, progress fraction].
std::array<double, kTrackingDim> observe_tracking(const VehicleState& s,
                                                  const PathGeometry& geo);

struct RenderConfig {
  int h = 64, w = 64;
  double meters_per_pixel = 0.375;  // 64 px -> 24 m of forward view
};

// Egocentric top-down view: vehicle at bottom-center, heading up, image x to
// the vehicle's right. Bright stripe on the lane boundaries, dim lane
// interior, centerline fading outward. Pure function of (state, route).
std::vector<double> render_image(const VehicleState& s, const PathGeometry& geo,
                                 const RenderConfig& rc);

// Per-step reward: |v cos phi| - |v sin phi| - |v||d|. The component form is
// the primitive (the tracking vector carries sin phi and cos phi directly);
// the angle form wraps it.
double lane_reward_sc(double v, double sin_phi, double cos_phi, double d);
double lane_reward(double v, double phi, double d);

enum class DoneReason { none, collision_or_lane_departure, goal_reached, timeout };
const char* to_string(DoneReason r);

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  DoneReason done_reason = DoneReason::none;
  // true (noise-free) diagnostics of the post-step state, for traces
  VehicleState state;
  double d = 0.0;
  double phi = 0.0;
  double progress = 0.0;
};

// Observation noise; zero everywhere by default. Applied to what the agent
// sees, never to the dynamics or the reward.
struct NoiseParams {
  double image = 0.0;  // per-pixel additive stddev, clamped back to [0,1]
  double v = 0.0;      // m/s
  double phi = 0.0;    // rad, applied before the sin/cos split
  double d = 0.0;      // m
  double kappa = 0.0;  // 1/m, per lookahead entry
};

struct EnvConfig {
  VehicleParams vehicle;
  NoiseParams noise;
  RenderConfig render;
  int timeout = 2000;  // maximum episode length in steps
};

class Env {
 public:
  explicit Env(EnvConfig cfg) : cfg_(std::move(cfg)) {}

  // Places the vehicle on the first waypoint, aligned with the first
  // segment, at rest. episode_seed drives only the observation noise stream.
  Observation reset(const RouteSpec& route, std::uint64_t episode_seed);

  // Advances one step. Terminal step rewards: lane departure -200, goal
  // +100, timeout 0 — each replacing that step's lane reward. The checks
  // apply in that order. Throws a state error once the episode is done.
  StepResult step(const Action& a);

  bool done() const { return done_; }
  int steps() const { return steps_; }
  const VehicleState& state() const { return state_; }
  const PathGeometry& geometry() const;
  const EnvConfig& config() const { return cfg_; }

 private:
  Observation observe();

  EnvConfig cfg_;
  std::unique_ptr<PathGeometry> geo_;
  VehicleState state_;
  RandomStream noise_rng_{0};
  int steps_ = 0;
  bool done_ = true;  // must reset before stepping
};

// Line-delimited JSON trace, one object per step with keys t, x, y, heading,
// v, throttle, steer, reward, d, phi.
class TraceWriter {
 public:
  explicit TraceWriter(const std::filesystem::path& path);
  ~TraceWriter();
  void write(int t, const VehicleState& s, const Action& a, double reward,
             double d, double phi);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace drivesac::drivesim
