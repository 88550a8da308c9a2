#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "drivesac/action.hpp"
#include "drivesac/drivesim.hpp"
#include "drivesac/observation.hpp"
#include "json.hpp"

// Route-tracking evaluation: densify a waypoint route into a reference
// polyline, score driven traces by cross-track RMSE, and aggregate per-route
// scores into mean / min / max / population-std rows.

namespace drivesac::evalkit {

// Piecewise-linear resampling of a route at a spacing no coarser than the
// requested resolution. Endpoints are preserved; consecutive duplicates are
// dropped, so arclength is strictly monotone along the points.
struct ReferencePath {
  std::vector<std::array<double, 2>> points;
  double total_length = 0.0;
};

ReferencePath interpolate_waypoints(const drivesim::RouteSpec& route,
                                    double resolution = 0.1);

// Minimum Euclidean distance from the point to any path segment.
double cross_track_error(double x, double y, const ReferencePath& path);

// sqrt(mean of squared cross-track errors) over the trace samples.
double route_rmse(std::span<const std::array<double, 2>> trace,
                  const ReferencePath& path);

struct Aggregates {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double std = 0.0;  // population convention
};

Aggregates aggregate(std::span<const double> rmses);

struct EvalReport {
  std::string method;
  std::vector<double> rmses;       // one entry per route
  std::vector<bool> completed;     // goal reached, same order
  double completion_rate = 0.0;
  Aggregates agg;
};

// Validates the shape invariants (matching lengths, min <= mean <= max).
EvalReport make_report(std::string method, std::vector<double> rmses,
                       std::vector<bool> completed);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// CSV: header "method,mean,min,max,std,completion_rate", one row per report.
// JSON: array of full reports including the per-route lists.
void write_reports_csv(const std::filesystem::path& path,
                       std::span<const EvalReport> reports);
void write_reports_json(const std::filesystem::path& path,
                        std::span<const EvalReport> reports);
std::vector<EvalReport> read_reports_json(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Driving a policy over a route.

struct RouteResult {
  std::vector<std::array<double, 2>> trace;  // position after every step
  double rmse = 0.0;
  bool completed = false;  // terminated by reaching the goal
  int steps = 0;
  double episode_return = 0.0;
};

// Rolls one episode on the route and scores the driven trace against the
// interpolated reference. The policy sees the observation and (for scripted
// reference controllers) the ground-truth vehicle state. A non-null trace
// writer receives one record per step.
using PolicyFn =
    std::function<Action(const Observation&, const drivesim::VehicleState&)>;

RouteResult run_route(drivesim::Env& env, const drivesim::RouteSpec& route,
                      std::uint64_t episode_seed, const PolicyFn& policy,
                      double resolution = 0.1,
                      drivesim::TraceWriter* trace = nullptr);

// Geometric reference controller: steers toward the path point one lookahead
// ahead of the current projection and regulates speed with a proportional
// throttle plus drag feedforward.
class PurePursuitController {
 public:
  PurePursuitController(const drivesim::RouteSpec& route,
                        const drivesim::VehicleParams& vp,
                        double lookahead = 3.0, double target_speed = 5.0);

  Action operator()(const Observation& obs, const drivesim::VehicleState& s) const;

 private:
  ReferencePath ref_;
  std::vector<double> cum_;  // arclength at each ref_ point
  drivesim::VehicleParams vp_;
  double lookahead_, target_speed_;
};

}  // namespace drivesac::evalkit
