#include "drivesac/drivesim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace drivesac::drivesim {

VehicleState bicycle_step(const VehicleState& s, const Action& a,
                          const VehicleParams& p) {
  VehicleState n;
  n.x = s.x + s.v * std::cos(s.heading) * p.dt;
  n.y = s.y + s.v * std::sin(s.heading) * p.dt;
  n.heading = s.heading + (s.v / p.wheelbase) * std::tan(p.delta_max * a.steer) * p.dt;
  n.v = std::clamp(s.v + (p.a_max * a.throttle - p.c_drag * s.v) * p.dt, 0.0, p.v_max);
  return n;
}

namespace {

void validate_route(const RouteSpec& r) {
  if (r.waypoints.size() < 2)
    throw std::invalid_argument("route needs at least two waypoints");
  for (size_t i = 1; i < r.waypoints.size(); ++i) {
    const double dx = r.waypoints[i][0] - r.waypoints[i - 1][0];
    const double dy = r.waypoints[i][1] - r.waypoints[i - 1][1];
    if (dx * dx + dy * dy < 1e-12)
      throw std::invalid_argument("route has coincident consecutive waypoints");
  }
  if (r.lane_half_width <= 0.0 || r.goal_radius <= 0.0)
    throw std::invalid_argument("route lane half-width and goal radius must be positive");
}

}  // namespace

PathGeometry::PathGeometry(const RouteSpec& route) : route_(route) {
  validate_route(route_);
  const auto& wp = route_.waypoints;
  const size_t n = wp.size();
  cum_.resize(n);
  cum_[0] = 0.0;
  for (size_t i = 1; i < n; ++i) {
    const double dx = wp[i][0] - wp[i - 1][0];
    const double dy = wp[i][1] - wp[i - 1][1];
    cum_[i] = cum_[i - 1] + std::sqrt(dx * dx + dy * dy);
  }
  // signed curvature from the turning angle at interior waypoints
  kappa_.assign(n, 0.0);
  for (size_t i = 1; i + 1 < n; ++i) {
    const double ax = wp[i][0] - wp[i - 1][0], ay = wp[i][1] - wp[i - 1][1];
    const double bx = wp[i + 1][0] - wp[i][0], by = wp[i + 1][1] - wp[i][1];
    const double la = std::sqrt(ax * ax + ay * ay);
    const double lb = std::sqrt(bx * bx + by * by);
    const double cross = ax * by - ay * bx;
    const double dot = ax * bx + ay * by;
    kappa_[i] = std::atan2(cross, dot) / (0.5 * (la + lb));
  }
}

PathGeometry::Projection PathGeometry::project(double x, double y) const {
  const auto& wp = route_.waypoints;
  double best_d2 = std::numeric_limits<double>::infinity();
  double best_t = 0.0;
  size_t best = 0;
  for (size_t j = 0; j + 1 < wp.size(); ++j) {
    const double ex = wp[j + 1][0] - wp[j][0], ey = wp[j + 1][1] - wp[j][1];
    const double len2 = ex * ex + ey * ey;
    double t = ((x - wp[j][0]) * ex + (y - wp[j][1]) * ey) / len2;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = wp[j][0] + t * ex, cy = wp[j][1] + t * ey;
    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    if (d2 < best_d2) {  // strict: ties keep the earliest segment
      best_d2 = d2;
      best_t = t;
      best = j;
    }
  }
  Projection pr;
  const double ex = wp[best + 1][0] - wp[best][0], ey = wp[best + 1][1] - wp[best][1];
  const double len = std::sqrt(ex * ex + ey * ey);
  pr.tx = ex / len;
  pr.ty = ey / len;
  const double cx = wp[best][0] + best_t * ex, cy = wp[best][1] + best_t * ey;
  const double cross = pr.tx * (y - cy) - pr.ty * (x - cx);  // left of path > 0
  pr.d = std::copysign(std::sqrt(best_d2), cross);
  pr.s = cum_[best] + best_t * len;
  pr.segment = (int)best;
  return pr;
}

double PathGeometry::heading_error(const Projection& p, double heading) {
  const double hx = std::cos(heading), hy = std::sin(heading);
  return std::atan2(p.tx * hy - p.ty * hx, p.tx * hx + p.ty * hy);
}

double PathGeometry::curvature_at(double s) const {
  s = std::clamp(s, 0.0, cum_.back());
  size_t j = std::upper_bound(cum_.begin(), cum_.end(), s) - cum_.begin();
  j = std::min(std::max(j, size_t(1)), cum_.size() - 1) - 1;
  const double len = cum_[j + 1] - cum_[j];
  const double u = (s - cum_[j]) / len;
  return kappa_[j] * (1.0 - u) + kappa_[j + 1] * u;
}

std::array<double, kTrackingDim> observe_tracking(const VehicleState& s,
                                                  const PathGeometry& geo) {
  const auto pr = geo.project(s.x, s.y);
  const double hx = std::cos(s.heading), hy = std::sin(s.heading);
  const double sin_phi = pr.tx * hy - pr.ty * hx;
  const double cos_phi = pr.tx * hx + pr.ty * hy;
  return {s.v,
          sin_phi,
          cos_phi,
          pr.d,
          geo.curvature_at(pr.s + 5.0),
          geo.curvature_at(pr.s + 10.0),
          geo.curvature_at(pr.s + 20.0),
          std::clamp(pr.s / geo.total_length(), 0.0, 1.0)};
}

std::vector<double> render_image(const VehicleState& s, const PathGeometry& geo,
                                 const RenderConfig& rc) {
  const auto& wp = geo.route().waypoints;
  const double hw = geo.route().lane_half_width;
  const double stripe = 0.15;  // boundary stripe half-thickness, meters

  // Segments beyond every pixel's reach cannot light any pixel; prefilter by
  // endpoint distance. Spacing bounds how far a segment interior can stray
  // from its endpoints.
  double max_seg = 0.0;
  for (size_t j = 0; j + 1 < wp.size(); ++j) {
    const double dx = wp[j + 1][0] - wp[j][0], dy = wp[j + 1][1] - wp[j][1];
    max_seg = std::max(max_seg, dx * dx + dy * dy);
  }
  const double reach = rc.meters_per_pixel * (rc.h + rc.w) + hw + stripe +
                       std::sqrt(max_seg);
  std::vector<size_t> cand;
  for (size_t j = 0; j + 1 < wp.size(); ++j) {
    const double dx = wp[j][0] - s.x, dy = wp[j][1] - s.y;
    if (dx * dx + dy * dy <= reach * reach) cand.push_back(j);
  }

  const double hx = std::cos(s.heading), hy = std::sin(s.heading);
  std::vector<double> img((long)rc.h * rc.w, 0.0);
  for (int r = 0; r < rc.h; ++r) {
    const double f = (rc.h - r - 0.5) * rc.meters_per_pixel;  // forward, m
    for (int c = 0; c < rc.w; ++c) {
      const double u = (c + 0.5 - 0.5 * rc.w) * rc.meters_per_pixel;  // right, m
      const double px = s.x + f * hx + u * hy;
      const double py = s.y + f * hy - u * hx;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (size_t j : cand) {
        const double ex = wp[j + 1][0] - wp[j][0], ey = wp[j + 1][1] - wp[j][1];
        double t = ((px - wp[j][0]) * ex + (py - wp[j][1]) * ey) / (ex * ex + ey * ey);
        t = std::clamp(t, 0.0, 1.0);
        const double cx = wp[j][0] + t * ex, cy = wp[j][1] + t * ey;
        const double d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
        best_d2 = std::min(best_d2, d2);
      }
      const double dist = std::sqrt(best_d2);
      double value;
      if (std::abs(dist - hw) <= stripe)
        value = 1.0;  // lane boundary
      else
        value = (dist <= hw ? 0.3 : 0.0) + 0.7 * std::max(0.0, 1.0 - dist / hw);
      img[(long)r * rc.w + c] = value;
    }
  }
  return img;
}

double lane_reward_sc(double v, double sin_phi, double cos_phi, double d) {
  return std::abs(v * cos_phi) - std::abs(v * sin_phi) - std::abs(v) * std::abs(d);
}

double lane_reward(double v, double phi, double d) {
  return lane_reward_sc(v, std::sin(phi), std::cos(phi), d);
}

const char* to_string(DoneReason r) {
  switch (r) {
    case DoneReason::none: return "none";
    case DoneReason::collision_or_lane_departure: return "collision_or_lane_departure";
    case DoneReason::goal_reached: return "goal_reached";
    case DoneReason::timeout: return "timeout";
  }
  return "none";
}

RouteSpec generate_route(std::uint64_t seed, const RouteParams& prm) {
  if (prm.min_length < 10.0 || prm.max_length < prm.min_length)
    throw std::invalid_argument("route length bounds infeasible");
  if (prm.spacing <= 0.1 || prm.spacing > prm.min_length / 4.0)
    throw std::invalid_argument("waypoint spacing infeasible");
  if (prm.max_curvature <= 0.0 || prm.max_curvature > 0.1)
    throw std::invalid_argument("curvature limit outside the drivable range");
  if (prm.lane_half_width <= 0.0 || prm.goal_radius <= 0.0)
    throw std::invalid_argument("lane half-width and goal radius must be positive");

  double sigma = 0.0, theta = 1.0, kmax = 0.0;
  switch (prm.difficulty) {
    case Difficulty::straight: break;
    case Difficulty::gentle:
      sigma = 0.008;
      theta = 0.12;
      kmax = std::min(0.03, prm.max_curvature);
      break;
    case Difficulty::curves:
      sigma = 0.02;
      theta = 0.1;
      kmax = prm.max_curvature;
      break;
  }

  const double clearance = 2.5 * prm.lane_half_width;
  for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
    RandomStream rng(RandomStream::mix(seed, 0x726f757465ULL + attempt));
    const double target = rng.uniform(prm.min_length, prm.max_length);
    const int n = (int)std::ceil(target / prm.spacing) + 1;
    double x = rng.uniform(-100.0, 100.0);
    double y = rng.uniform(-100.0, 100.0);
    double h = rng.uniform(-std::numbers::pi, std::numbers::pi);
    double k = 0.0;

    RouteSpec route;
    route.lane_half_width = prm.lane_half_width;
    route.goal_radius = prm.goal_radius;
    route.seed = seed;
    route.waypoints.push_back({x, y});
    for (int i = 1; i < n; ++i) {
      k = std::clamp(k * (1.0 - theta) + sigma * rng.normal(), -kmax, kmax);
      h += k * prm.spacing;
      x += prm.spacing * std::cos(h);
      y += prm.spacing * std::sin(h);
      route.waypoints.push_back({x, y});
    }

    // reject self-approach: far-apart arcs must keep lateral clearance
    bool ok = true;
    const int gap = (int)std::ceil(4.0 * clearance / prm.spacing);
    for (size_t i = 0; i < route.waypoints.size() && ok; ++i) {
      for (size_t j = i + gap; j < route.waypoints.size(); ++j) {
        const double dx = route.waypoints[i][0] - route.waypoints[j][0];
        const double dy = route.waypoints[i][1] - route.waypoints[j][1];
        if (dx * dx + dy * dy < clearance * clearance) {
          ok = false;
          break;
        }
      }
    }
    if (ok) return route;
  }
  throw std::runtime_error("route generation exhausted its attempts");
}

void save_route(const std::filesystem::path& path, const RouteSpec& route) {
  nlohmann::json j;
  j["waypoints"] = nlohmann::json::array();
  for (const auto& p : route.waypoints) j["waypoints"].push_back({p[0], p[1]});
  j["lane_half_width"] = route.lane_half_width;
  j["goal_radius"] = route.goal_radius;
  j["seed"] = route.seed;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write route file: " + path.string());
  out << j.dump(2) << "\n";
}

RouteSpec load_route(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open route file: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  RouteSpec route;
  for (const auto& p : j.at("waypoints"))
    route.waypoints.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  route.lane_half_width = j.at("lane_half_width").get<double>();
  route.goal_radius = j.at("goal_radius").get<double>();
  route.seed = j.value("seed", 0ull);
  validate_route(route);
  return route;
}

Observation Env::reset(const RouteSpec& route, std::uint64_t episode_seed) {
  geo_ = std::make_unique<PathGeometry>(route);
  const auto& wp = route.waypoints;
  state_.x = wp[0][0];
  state_.y = wp[0][1];
  state_.heading = std::atan2(wp[1][1] - wp[0][1], wp[1][0] - wp[0][0]);
  state_.v = 0.0;
  steps_ = 0;
  done_ = false;
  noise_rng_ = RandomStream(RandomStream::mix(episode_seed, 0x6f6273ULL));
  return observe();
}

const PathGeometry& Env::geometry() const {
  if (!geo_) throw std::logic_error("environment was never reset");
  return *geo_;
}

StepResult Env::step(const Action& a) {
  if (done_ || !geo_) throw std::logic_error("step on a finished episode");
  state_ = bicycle_step(state_, a, cfg_.vehicle);
  ++steps_;

  const auto pr = geo_->project(state_.x, state_.y);
  const double hx = std::cos(state_.heading), hy = std::sin(state_.heading);
  const double sin_phi = pr.tx * hy - pr.ty * hx;
  const double cos_phi = pr.tx * hx + pr.ty * hy;

  StepResult res;
  res.state = state_;
  res.d = pr.d;
  res.phi = std::atan2(sin_phi, cos_phi);
  res.progress = std::clamp(pr.s / geo_->total_length(), 0.0, 1.0);
  res.reward = lane_reward_sc(state_.v, sin_phi, cos_phi, pr.d);

  const auto& goal = geo_->route().waypoints.back();
  const double gx = state_.x - goal[0], gy = state_.y - goal[1];
  if (std::abs(pr.d) > geo_->route().lane_half_width) {
    res.done = true;
    res.done_reason = DoneReason::collision_or_lane_departure;
    res.reward = -200.0;
  } else if (gx * gx + gy * gy <= geo_->route().goal_radius * geo_->route().goal_radius) {
    res.done = true;
    res.done_reason = DoneReason::goal_reached;
    res.reward = 100.0;
  } else if (steps_ >= cfg_.timeout) {
    res.done = true;
    res.done_reason = DoneReason::timeout;
    res.reward = 0.0;
  }
  done_ = res.done;
  res.observation = observe();
  return res;
}

Observation Env::observe() {
  Observation o;
  o.h = cfg_.render.h;
  o.w = cfg_.render.w;
  o.image = render_image(state_, *geo_, cfg_.render);
  if (cfg_.noise.image > 0.0)
    for (double& p : o.image)
      p = std::clamp(p + cfg_.noise.image * noise_rng_.normal(), 0.0, 1.0);

  auto tv = observe_tracking(state_, *geo_);
  if (cfg_.noise.v > 0.0) tv[0] = std::max(0.0, tv[0] + cfg_.noise.v * noise_rng_.normal());
  if (cfg_.noise.phi > 0.0) {
    const double phi = std::atan2(tv[1], tv[2]) + cfg_.noise.phi * noise_rng_.normal();
    tv[1] = std::sin(phi);
    tv[2] = std::cos(phi);
  }
  if (cfg_.noise.d > 0.0) tv[3] += cfg_.noise.d * noise_rng_.normal();
  if (cfg_.noise.kappa > 0.0)
    for (int i = 4; i <= 6; ++i) tv[i] += cfg_.noise.kappa * noise_rng_.normal();
  o.tracking = tv;
  return o;
}

struct TraceWriter::Impl {
  std::ofstream out;
};

TraceWriter::TraceWriter(const std::filesystem::path& path) : impl_(new Impl) {
  impl_->out.open(path, std::ios::trunc);
  if (!impl_->out) throw std::runtime_error("cannot open trace file: " + path.string());
}

TraceWriter::~TraceWriter() = default;

void TraceWriter::write(int t, const VehicleState& s, const Action& a,
                        double reward, double d, double phi) {
  nlohmann::json j{{"t", t},          {"x", s.x},
                   {"y", s.y},        {"heading", s.heading},
                   {"v", s.v},        {"throttle", a.throttle},
                   {"steer", a.steer},{"reward", reward},
                   {"d", d},          {"phi", phi}};
  impl_->out << j.dump() << "\n";
}

}  // namespace drivesac::drivesim
