#include "drivesac/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "drivesac/textio.hpp"

namespace drivesac::evalkit {

namespace {

double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  return std::sqrt(dx * dx + dy * dy);
}

void check_route(const drivesim::RouteSpec& route) {
  if (route.waypoints.size() < 2)
    throw std::invalid_argument("interpolate_waypoints: route needs at least two waypoints");
  for (const auto& w : route.waypoints)
    if (!std::isfinite(w[0]) || !std::isfinite(w[1]))
      throw std::invalid_argument("interpolate_waypoints: non-finite waypoint");
}

}  // namespace

ReferencePath interpolate_waypoints(const drivesim::RouteSpec& route,
                                    double resolution) {
  check_route(route);
  if (!std::isfinite(resolution) || resolution <= 0.0)
    throw std::invalid_argument("interpolate_waypoints: resolution must be positive");

  ReferencePath path;
  path.points.push_back(route.waypoints.front());
  for (std::size_t i = 1; i < route.waypoints.size(); ++i) {
    const auto& a = route.waypoints[i - 1];
    const auto& b = route.waypoints[i];
    const double len = dist(a, b);
    if (len == 0.0) continue;  // duplicate waypoint adds no arclength
    const int n = std::max(1, static_cast<int>(std::ceil(len / resolution)));
    for (int k = 1; k <= n; ++k) {
      // blend form lands exactly on b at t = 1
      const double t = static_cast<double>(k) / n;
      path.points.push_back({a[0] * (1.0 - t) + b[0] * t,
                             a[1] * (1.0 - t) + b[1] * t});
    }
  }
  if (path.points.size() < 2)
    throw std::invalid_argument("interpolate_waypoints: route has zero length");
  for (std::size_t i = 1; i < path.points.size(); ++i)
    path.total_length += dist(path.points[i - 1], path.points[i]);
  return path;
}

double cross_track_error(double x, double y, const ReferencePath& path) {
  if (path.points.size() < 2)
    throw std::invalid_argument("cross_track_error: path needs at least two points");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < path.points.size(); ++i) {
    const auto& a = path.points[i - 1];
    const auto& b = path.points[i];
    const double abx = b[0] - a[0], aby = b[1] - a[1];
    const double apx = x - a[0], apy = y - a[1];
    const double len2 = abx * abx + aby * aby;
    double t = (apx * abx + apy * aby) / len2;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = apx - t * abx, dy = apy - t * aby;
    best = std::min(best, dx * dx + dy * dy);
  }
  return std::sqrt(best);
}

double route_rmse(std::span<const std::array<double, 2>> trace,
                  const ReferencePath& path) {
  if (trace.empty())
    throw std::invalid_argument("route_rmse: empty trace");
  double acc = 0.0;
  for (const auto& p : trace) {
    const double e = cross_track_error(p[0], p[1], path);
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(trace.size()));
}

Aggregates aggregate(std::span<const double> rmses) {
  if (rmses.empty())
    throw std::invalid_argument("aggregate: empty input");
  Aggregates out;
  double sum = 0.0;
  out.min = rmses[0];
  out.max = rmses[0];
  for (double v : rmses) {
    if (!std::isfinite(v)) throw std::invalid_argument("aggregate: non-finite value");
    sum += v;
    out.min = std::min(out.min, v);
    out.max = std::max(out.max, v);
  }
  const double n = static_cast<double>(rmses.size());
  out.mean = sum / n;
  double ss = 0.0;
  for (double v : rmses) {
    const double d = v - out.mean;
    ss += d * d;
  }
  out.std = std::sqrt(ss / n);
  return out;
}

EvalReport make_report(std::string method, std::vector<double> rmses,
                       std::vector<bool> completed) {
  if (rmses.size() != completed.size())
    throw std::invalid_argument("make_report: rmses and completed lengths differ");
  EvalReport r;
  r.method = std::move(method);
  r.rmses = std::move(rmses);
  r.completed = std::move(completed);
  r.agg = aggregate(r.rmses);
  std::size_t done = 0;
  for (bool c : r.completed) done += c;
  r.completion_rate = static_cast<double>(done) / static_cast<double>(r.completed.size());
  return r;
}

nlohmann::json report_to_json(const EvalReport& r) {
  return nlohmann::json{{"method", r.method},
                        {"route_count", r.rmses.size()},
                        {"rmses", r.rmses},
                        {"completed", r.completed},
                        {"completion_rate", r.completion_rate},
                        {"mean", r.agg.mean},
                        {"min", r.agg.min},
                        {"max", r.agg.max},
                        {"std", r.agg.std}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r = make_report(j.at("method").get<std::string>(),
                             j.at("rmses").get<std::vector<double>>(),
                             j.at("completed").get<std::vector<bool>>());
  if (j.at("route_count").get<std::size_t>() != r.rmses.size())
    throw std::invalid_argument("report_from_json: route_count mismatch");
  return r;
}

void write_reports_csv(const std::filesystem::path& path,
                       std::span<const EvalReport> reports) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_reports_csv: cannot open " + path.string());
  out << "method,mean,min,max,std,completion_rate\n";
  for (const auto& r : reports) {
    out << r.method << ',' << format_double(r.agg.mean) << ','
        << format_double(r.agg.min) << ',' << format_double(r.agg.max) << ','
        << format_double(r.agg.std) << ',' << format_double(r.completion_rate)
        << '\n';
  }
  if (!out.flush()) throw std::runtime_error("write_reports_csv: write failed");
}

void write_reports_json(const std::filesystem::path& path,
                        std::span<const EvalReport> reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_reports_json: cannot open " + path.string());
  out << arr.dump(2) << '\n';
  if (!out.flush()) throw std::runtime_error("write_reports_json: write failed");
}

std::vector<EvalReport> read_reports_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_reports_json: cannot open " + path.string());
  nlohmann::json arr = nlohmann::json::parse(in);
  std::vector<EvalReport> out;
  for (const auto& j : arr) out.push_back(report_from_json(j));
  return out;
}

RouteResult run_route(drivesim::Env& env, const drivesim::RouteSpec& route,
                      std::uint64_t episode_seed, const PolicyFn& policy,
                      double resolution, drivesim::TraceWriter* trace) {
  const ReferencePath ref = interpolate_waypoints(route, resolution);
  RouteResult out;
  Observation obs = env.reset(route, episode_seed);
  while (!env.done()) {
    const Action a = policy(obs, env.state());
    drivesim::StepResult sr = env.step(a);
    out.trace.push_back({sr.state.x, sr.state.y});
    out.episode_return += sr.reward;
    if (trace) trace->write(out.steps, sr.state, a, sr.reward, sr.d, sr.phi);
    ++out.steps;
    if (sr.done) {
      out.completed = sr.done_reason == drivesim::DoneReason::goal_reached;
      break;
    }
    obs = std::move(sr.observation);
  }
  out.rmse = route_rmse(out.trace, ref);
  return out;
}

PurePursuitController::PurePursuitController(const drivesim::RouteSpec& route,
                                             const drivesim::VehicleParams& vp,
                                             double lookahead,
                                             double target_speed)
    : ref_(interpolate_waypoints(route, 0.1)),
      vp_(vp),
      lookahead_(lookahead),
      target_speed_(target_speed) {
  cum_.resize(ref_.points.size(), 0.0);
  for (std::size_t i = 1; i < ref_.points.size(); ++i)
    cum_[i] = cum_[i - 1] + dist(ref_.points[i - 1], ref_.points[i]);
}

Action PurePursuitController::operator()(const Observation&,
                                         const drivesim::VehicleState& s) const {
  // project onto the polyline to find the current arclength
  double best = std::numeric_limits<double>::infinity();
  double s_proj = 0.0;
  for (std::size_t i = 1; i < ref_.points.size(); ++i) {
    const auto& a = ref_.points[i - 1];
    const auto& b = ref_.points[i];
    const double abx = b[0] - a[0], aby = b[1] - a[1];
    const double apx = s.x - a[0], apy = s.y - a[1];
    const double len2 = abx * abx + aby * aby;
    double t = std::clamp((apx * abx + apy * aby) / len2, 0.0, 1.0);
    const double dx = apx - t * abx, dy = apy - t * aby;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best) {
      best = d2;
      s_proj = cum_[i - 1] + t * std::sqrt(len2);
    }
  }

  // target point one lookahead further along the path (clamped to the end)
  const double s_tgt = std::min(s_proj + lookahead_, cum_.back());
  const auto it = std::lower_bound(cum_.begin(), cum_.end(), s_tgt);
  std::size_t i = std::min<std::size_t>(it - cum_.begin(), cum_.size() - 1);
  std::array<double, 2> tgt = ref_.points[i];
  if (i > 0 && cum_[i] > cum_[i - 1]) {
    const double t = (s_tgt - cum_[i - 1]) / (cum_[i] - cum_[i - 1]);
    tgt = {ref_.points[i - 1][0] * (1.0 - t) + ref_.points[i][0] * t,
           ref_.points[i - 1][1] * (1.0 - t) + ref_.points[i][1] * t};
  }

  // pure-pursuit curvature in the vehicle frame (x forward, y left)
  const double ch = std::cos(s.heading), sh = std::sin(s.heading);
  const double rx = tgt[0] - s.x, ry = tgt[1] - s.y;
  const double fx = ch * rx + sh * ry;
  const double fy = -sh * rx + ch * ry;
  const double l2 = fx * fx + fy * fy;
  double steer = 0.0;
  if (l2 > 1e-12) {
    const double kappa = 2.0 * fy / l2;
    steer = std::clamp(std::atan(vp_.wheelbase * kappa) / vp_.delta_max, -1.0, 1.0);
  }

  // proportional speed control with drag feedforward
  const double feedfwd = vp_.c_drag * target_speed_ / vp_.a_max;
  const double throttle =
      std::clamp(0.5 * (target_speed_ - s.v) + feedfwd, 0.0, 1.0);
  return Action{throttle, steer};
}

}  // namespace drivesac::evalkit
