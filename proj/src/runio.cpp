#include "drivesac/runio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "drivesac/diffnet.hpp"
#include "drivesac/fusion.hpp"
#include "drivesac/kernels.hpp"
#include "drivesac/rng.hpp"
#include "drivesac/textio.hpp"

namespace drivesac::runio {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kLoopTag = 0x6c6f6f70;         // route pick stream
constexpr std::uint64_t kEpisodeTag = 0x65700000;      // + episode index
constexpr std::uint64_t kRandomPolicyTag = 0x72616e64;

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const char* where) {
  if (!j.is_object())
    throw std::invalid_argument(std::string(where) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok)
      throw std::invalid_argument(std::string(where) + ": unknown key \"" + key + "\"");
  }
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
}

const char* difficulty_to_string(drivesim::Difficulty d) {
  switch (d) {
    case drivesim::Difficulty::straight: return "straight";
    case drivesim::Difficulty::gentle: return "gentle";
    case drivesim::Difficulty::curves: return "curves";
  }
  throw std::invalid_argument("unknown difficulty");
}

drivesim::Difficulty difficulty_from_string(const std::string& s) {
  if (s == "straight") return drivesim::Difficulty::straight;
  if (s == "gentle") return drivesim::Difficulty::gentle;
  if (s == "curves") return drivesim::Difficulty::curves;
  throw std::invalid_argument("difficulty must be straight|gentle|curves, got \"" + s + "\"");
}

nlohmann::json route_to_json(const drivesim::RouteSpec& r) {
  nlohmann::json j;
  j["waypoints"] = nlohmann::json::array();
  for (const auto& p : r.waypoints) j["waypoints"].push_back({p[0], p[1]});
  j["lane_half_width"] = r.lane_half_width;
  j["goal_radius"] = r.goal_radius;
  j["seed"] = r.seed;
  return j;
}

drivesim::RouteSpec route_from_json(const nlohmann::json& j) {
  check_keys(j, {"waypoints", "lane_half_width", "goal_radius", "seed"}, "route");
  drivesim::RouteSpec r;
  for (const auto& p : j.at("waypoints"))
    r.waypoints.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  r.lane_half_width = j.value("lane_half_width", r.lane_half_width);
  r.goal_radius = j.value("goal_radius", r.goal_radius);
  r.seed = j.value("seed", std::uint64_t{0});
  return r;
}

std::unique_ptr<agents::Agent> make_agent(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.algorithm == "sac") return std::make_unique<agents::SacAgent>(cfg.sac, seed);
  if (cfg.algorithm == "ddpg") return std::make_unique<agents::DdpgAgent>(cfg.ddpg, seed);
  throw std::invalid_argument("algorithm must be sac or ddpg, got \"" + cfg.algorithm + "\"");
}

}  // namespace

// --------------------------------------------------------------------------
// Serializers.

nlohmann::json to_json(const drivesim::EnvConfig& cfg) {
  return nlohmann::json{
      {"vehicle",
       {{"a_max", cfg.vehicle.a_max},
        {"c_drag", cfg.vehicle.c_drag},
        {"v_max", cfg.vehicle.v_max},
        {"wheelbase", cfg.vehicle.wheelbase},
        {"delta_max", cfg.vehicle.delta_max},
        {"dt", cfg.vehicle.dt}}},
      {"noise",
       {{"image", cfg.noise.image},
        {"v", cfg.noise.v},
        {"phi", cfg.noise.phi},
        {"d", cfg.noise.d},
        {"kappa", cfg.noise.kappa}}},
      {"render",
       {{"h", cfg.render.h},
        {"w", cfg.render.w},
        {"meters_per_pixel", cfg.render.meters_per_pixel}}},
      {"timeout", cfg.timeout}};
}

drivesim::EnvConfig env_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"vehicle", "noise", "render", "timeout"}, "env");
  drivesim::EnvConfig cfg;
  if (j.contains("vehicle")) {
    const auto& v = j.at("vehicle");
    check_keys(v, {"a_max", "c_drag", "v_max", "wheelbase", "delta_max", "dt"},
               "env.vehicle");
    cfg.vehicle.a_max = v.value("a_max", cfg.vehicle.a_max);
    cfg.vehicle.c_drag = v.value("c_drag", cfg.vehicle.c_drag);
    cfg.vehicle.v_max = v.value("v_max", cfg.vehicle.v_max);
    cfg.vehicle.wheelbase = v.value("wheelbase", cfg.vehicle.wheelbase);
    cfg.vehicle.delta_max = v.value("delta_max", cfg.vehicle.delta_max);
    cfg.vehicle.dt = v.value("dt", cfg.vehicle.dt);
  }
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    check_keys(n, {"image", "v", "phi", "d", "kappa"}, "env.noise");
    cfg.noise.image = n.value("image", 0.0);
    cfg.noise.v = n.value("v", 0.0);
    cfg.noise.phi = n.value("phi", 0.0);
    cfg.noise.d = n.value("d", 0.0);
    cfg.noise.kappa = n.value("kappa", 0.0);
  }
  if (j.contains("render")) {
    const auto& r = j.at("render");
    check_keys(r, {"h", "w", "meters_per_pixel"}, "env.render");
    cfg.render.h = r.value("h", cfg.render.h);
    cfg.render.w = r.value("w", cfg.render.w);
    cfg.render.meters_per_pixel = r.value("meters_per_pixel", cfg.render.meters_per_pixel);
  }
  cfg.timeout = j.value("timeout", cfg.timeout);
  return cfg;
}

nlohmann::json to_json(const drivesim::RouteParams& p) {
  return nlohmann::json{{"difficulty", difficulty_to_string(p.difficulty)},
                        {"min_length", p.min_length},
                        {"max_length", p.max_length},
                        {"spacing", p.spacing},
                        {"lane_half_width", p.lane_half_width},
                        {"goal_radius", p.goal_radius},
                        {"max_curvature", p.max_curvature}};
}

drivesim::RouteParams route_params_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"difficulty", "min_length", "max_length", "spacing",
              "lane_half_width", "goal_radius", "max_curvature"},
             "routes");
  drivesim::RouteParams p;
  if (j.contains("difficulty"))
    p.difficulty = difficulty_from_string(j.at("difficulty").get<std::string>());
  p.min_length = j.value("min_length", p.min_length);
  p.max_length = j.value("max_length", p.max_length);
  p.spacing = j.value("spacing", p.spacing);
  p.lane_half_width = j.value("lane_half_width", p.lane_half_width);
  p.goal_radius = j.value("goal_radius", p.goal_radius);
  p.max_curvature = j.value("max_curvature", p.max_curvature);
  return p;
}

void RunConfig::validate() const {
  if (algorithm != "sac" && algorithm != "ddpg")
    throw std::invalid_argument("algorithm must be sac or ddpg, got \"" + algorithm + "\"");
  if (algorithm == "sac") sac.validate(); else ddpg.validate();
  if (episodes < 0) throw std::invalid_argument("episodes must be >= 0");
  if (route_pool < 1) throw std::invalid_argument("route pool must hold at least one route");
  if (env.timeout < 1) throw std::invalid_argument("env timeout must be >= 1 step");
  const fusion::EncoderConfig& enc = algorithm == "ddpg" ? ddpg.encoder : sac.encoder;
  if (env.render.h != enc.image_h || env.render.w != enc.image_w)
    throw std::invalid_argument(
        "render size must match the encoder input (render " +
        std::to_string(env.render.h) + "x" + std::to_string(env.render.w) +
        ", encoder " + std::to_string(enc.image_h) + "x" +
        std::to_string(enc.image_w) + ")");
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json routes = to_json(cfg.route_params);
  routes["pool"] = cfg.route_pool;
  routes["first_seed"] = cfg.route_seed;
  return nlohmann::json{
      {"algorithm", cfg.algorithm},
      {"agent", cfg.algorithm == "ddpg" ? agents::to_json(cfg.ddpg)
                                        : agents::to_json(cfg.sac)},
      {"env", to_json(cfg.env)},
      {"routes", routes},
      {"episodes", cfg.episodes}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"algorithm", "agent", "env", "routes", "episodes"}, "config");
  RunConfig cfg;
  cfg.algorithm = j.value("algorithm", cfg.algorithm);
  if (j.contains("agent")) {
    if (cfg.algorithm == "ddpg")
      cfg.ddpg = agents::ddpg_config_from_json(j.at("agent"));
    else
      cfg.sac = agents::sac_config_from_json(j.at("agent"));
  }
  if (j.contains("env")) cfg.env = env_config_from_json(j.at("env"));
  if (j.contains("routes")) {
    nlohmann::json routes = j.at("routes");
    check_keys(routes,
               {"pool", "first_seed", "difficulty", "min_length", "max_length",
                "spacing", "lane_half_width", "goal_radius", "max_curvature"},
               "routes");
    cfg.route_pool = routes.value("pool", cfg.route_pool);
    cfg.route_seed = routes.value("first_seed", cfg.route_seed);
    routes.erase("pool");
    routes.erase("first_seed");
    cfg.route_params = route_params_from_json(routes);
  }
  cfg.episodes = j.value("episodes", cfg.episodes);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  return run_config_from_json(nlohmann::json::parse(in));
}

// --------------------------------------------------------------------------
// Route pools.

std::vector<drivesim::RouteSpec> generate_route_pool(
    std::uint64_t first_seed, int count, const drivesim::RouteParams& params) {
  if (count < 1) throw std::invalid_argument("route pool needs at least one route");
  std::vector<drivesim::RouteSpec> routes;
  routes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    routes.push_back(drivesim::generate_route(first_seed + static_cast<std::uint64_t>(i), params));
  return routes;
}

void save_routes(const fs::path& path, std::span<const drivesim::RouteSpec> routes) {
  nlohmann::json j;
  j["routes"] = nlohmann::json::array();
  for (const auto& r : routes) j["routes"].push_back(route_to_json(r));
  write_text_file(path, j.dump(2) + "\n");
}

std::vector<drivesim::RouteSpec> load_routes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open routes file: " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  std::vector<drivesim::RouteSpec> out;
  if (j.is_array()) {
    for (const auto& r : j) out.push_back(route_from_json(r));
  } else if (j.contains("routes")) {
    check_keys(j, {"routes"}, "routes file");
    for (const auto& r : j.at("routes")) out.push_back(route_from_json(r));
  } else {
    out.push_back(route_from_json(j));  // single-route file
  }
  if (out.empty()) throw std::invalid_argument("routes file holds no routes");
  return out;
}

// --------------------------------------------------------------------------
// Training.

namespace {

std::string csv_row(const EpisodeRow& r) {
  std::string line = std::to_string(r.episode);
  line += ',';
  line += std::to_string(r.env_steps);
  for (double v : {r.ret, r.q1_loss, r.q2_loss, r.policy_loss, r.mean_target,
                   r.avg_reward}) {
    line += ',';
    line += format_double(v);
  }
  line += '\n';
  return line;
}

constexpr char kCsvHeader[] =
    "episode,env_steps,return,q1_loss,q2_loss,policy_loss,mean_target,avg_reward\n";

}  // namespace

TrainResult run_training(const RunConfig& cfg, std::uint64_t seed,
                         const fs::path& out_dir, bool progress) {
  cfg.validate();
  fs::create_directories(out_dir);
  const auto routes = generate_route_pool(cfg.route_seed, cfg.route_pool, cfg.route_params);
  save_routes(out_dir / "routes.json", routes);

  std::unique_ptr<agents::Agent> agent = make_agent(cfg, seed);
  const agents::TrainSchedule sched = agent->schedule();
  agents::ReplayBuffer buf(sched.replay_capacity);
  drivesim::Env env(cfg.env);
  RandomStream loop_rng(RandomStream::mix(seed, kLoopTag));

  TrainResult res;
  res.csv_path = out_dir / "rewards.csv";
  res.latest_checkpoint = out_dir / "checkpoint_latest.ckpt";
  res.best_return = -std::numeric_limits<double>::infinity();

  std::ofstream csv(res.csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + res.csv_path.string());
  csv << kCsvHeader;
  csv.flush();

  auto meta = [&](int episodes_done, long env_steps, double best_return) {
    nlohmann::json m;
    m["seed"] = seed;
    m["env"] = to_json(cfg.env);
    m["routes"] = to_json(cfg.route_params);
    m["routes"]["pool"] = cfg.route_pool;
    m["routes"]["first_seed"] = cfg.route_seed;
    m["episodes_done"] = episodes_done;
    m["env_steps"] = env_steps;
    m["best_return"] = best_return;
    return m;
  };
  agent->save(res.latest_checkpoint, meta(0, 0, 0.0));

  long total_steps = 0;
  double grad_accum = 0.0;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const std::size_t pick = loop_rng.randint(routes.size());
    Observation first = env.reset(
        routes[pick], RandomStream::mix(seed, kEpisodeTag + static_cast<std::uint64_t>(ep)));
    auto cur = std::make_shared<const Observation>(std::move(first));

    EpisodeRow row;
    row.episode = ep;
    long grad_steps = 0;
    double q1 = 0.0, q2 = 0.0, pol = 0.0, tgt = 0.0;
    int ep_steps = 0;
    while (!env.done()) {
      const Action a = agent->act(*cur, /*deterministic=*/false);
      drivesim::StepResult sr = env.step(a);
      auto nxt = std::make_shared<const Observation>(std::move(sr.observation));
      // timeouts bootstrap: only collision/goal are value-terminal states
      const bool terminal =
          sr.done && sr.done_reason != drivesim::DoneReason::timeout;
      buf.push({cur, a, sr.reward, nxt, terminal});
      cur = std::move(nxt);
      row.ret += sr.reward;
      ++ep_steps;
      ++total_steps;
      if (total_steps >= sched.warmup_steps &&
          buf.size() >= static_cast<std::size_t>(sched.batch_size)) {
        grad_accum += sched.grad_steps_per_env_step;
        while (grad_accum >= 1.0) {
          const agents::TrainStats st = agent->train_step(buf);
          q1 += st.q1_loss;
          q2 += st.q2_loss;
          pol += st.policy_loss;
          tgt += st.mean_target;
          ++grad_steps;
          grad_accum -= 1.0;
        }
      }
    }
    row.env_steps = total_steps;
    if (grad_steps > 0) {
      row.q1_loss = q1 / static_cast<double>(grad_steps);
      row.q2_loss = q2 / static_cast<double>(grad_steps);
      row.policy_loss = pol / static_cast<double>(grad_steps);
      row.mean_target = tgt / static_cast<double>(grad_steps);
    }
    row.avg_reward = row.ret / static_cast<double>(ep_steps);
    csv << csv_row(row);
    csv.flush();
    res.rows.push_back(row);

    if (row.ret > res.best_return) {
      res.best_return = row.ret;
      res.best_checkpoint = out_dir / "checkpoint_best.ckpt";
      agent->save(res.best_checkpoint, meta(ep + 1, total_steps, res.best_return));
    }
    if (progress && (ep % 25 == 24 || ep + 1 == cfg.episodes))
      std::fprintf(stderr, "episode %d/%d return %.2f steps %d\n", ep + 1,
                   cfg.episodes, row.ret, ep_steps);
  }
  agent->save(res.latest_checkpoint,
              meta(cfg.episodes, total_steps,
                   res.rows.empty() ? 0.0 : res.best_return));
  return res;
}

double random_policy_mean_return(const RunConfig& cfg, std::uint64_t seed,
                                 int episodes) {
  cfg.validate();
  if (episodes < 1) throw std::invalid_argument("baseline needs at least one episode");
  const auto routes = generate_route_pool(cfg.route_seed, cfg.route_pool, cfg.route_params);
  drivesim::Env env(cfg.env);
  RandomStream loop_rng(RandomStream::mix(seed, kLoopTag));
  RandomStream act_rng(RandomStream::mix(seed, kRandomPolicyTag));
  double total = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    const std::size_t pick = loop_rng.randint(routes.size());
    env.reset(routes[pick],
              RandomStream::mix(seed, kEpisodeTag + static_cast<std::uint64_t>(ep)));
    while (!env.done()) {
      const Action a{act_rng.u01(), act_rng.uniform(-1.0, 1.0)};
      total += env.step(a).reward;
    }
  }
  return total / static_cast<double>(episodes);
}

// --------------------------------------------------------------------------
// Evaluation.

evalkit::EvalReport evaluate_checkpoint(const fs::path& checkpoint,
                                        const std::vector<drivesim::RouteSpec>& routes,
                                        const fs::path& out_dir, std::string method) {
  if (routes.empty()) throw std::invalid_argument("evaluation needs at least one route");
  const diffnet::CheckpointData ck = diffnet::read_checkpoint(checkpoint);
  std::unique_ptr<agents::Agent> agent = agents::load_agent(checkpoint, 0);

  drivesim::EnvConfig env_cfg;
  if (ck.meta.contains("env")) {
    env_cfg = env_config_from_json(ck.meta.at("env"));
  } else if (ck.meta.contains("config") && ck.meta.at("config").contains("encoder")) {
    // no stored environment: fit the render to the encoder, 24 m of view
    const auto& enc = ck.meta.at("config").at("encoder");
    env_cfg.render.h = enc.value("image_h", env_cfg.render.h);
    env_cfg.render.w = enc.value("image_w", env_cfg.render.w);
    env_cfg.render.meters_per_pixel = 24.0 / env_cfg.render.h;
  }
  env_cfg.noise = drivesim::NoiseParams{};  // measurement runs on clean sensors

  if (method.empty()) {
    method = ck.meta.value("algorithm", "agent");
    if (ck.meta.contains("config") && ck.meta.at("config").contains("modality"))
      method += "-" + ck.meta.at("config").at("modality").get<std::string>();
  }

  fs::create_directories(out_dir);
  drivesim::Env env(env_cfg);
  std::vector<double> rmses;
  std::vector<bool> completed;
  for (std::size_t i = 0; i < routes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "trace_%03zu.jsonl", i);
    drivesim::TraceWriter trace(out_dir / name);
    const evalkit::RouteResult rr = evalkit::run_route(
        env, routes[i], /*episode_seed=*/i,
        [&](const Observation& obs, const drivesim::VehicleState&) {
          return agent->act(obs, /*deterministic=*/true);
        },
        0.1, &trace);
    rmses.push_back(rr.rmse);
    completed.push_back(rr.completed);
  }

  const evalkit::EvalReport report =
      evalkit::make_report(std::move(method), std::move(rmses), std::move(completed));
  save_routes(out_dir / "routes.json", routes);
  const fs::path ck_copy = out_dir / "checkpoint.ckpt";
  if (!(fs::exists(ck_copy) && fs::equivalent(ck_copy, checkpoint)))
    fs::copy_file(checkpoint, ck_copy, fs::copy_options::overwrite_existing);
  const std::vector<evalkit::EvalReport> reports = {report};
  evalkit::write_reports_json(out_dir / "report.json", reports);
  evalkit::write_reports_csv(out_dir / "report.csv", reports);
  return report;
}

// --------------------------------------------------------------------------
// Reward-curve smoothing.

std::vector<double> ema(std::span<const double> xs, double alpha) {
  if (!std::isfinite(alpha) || alpha < 0.0 || alpha >= 1.0)
    throw std::invalid_argument("smoothing factor must lie in [0, 1)");
  std::vector<double> out;
  out.reserve(xs.size());
  if (xs.empty()) return out;
  double s = xs[0];
  out.push_back(s);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    // equal input is a bitwise fixed point
    s = xs[i] == s ? s : alpha * s + (1.0 - alpha) * xs[i];
    out.push_back(s);
  }
  return out;
}

// --------------------------------------------------------------------------
// Commands.

int cmd_train(const fs::path& config_path, std::uint64_t seed, const fs::path& out_dir) {
  try {
    const std::string text = read_text_file(config_path);
    const RunConfig cfg = run_config_from_json(nlohmann::json::parse(text));
    fs::create_directories(out_dir);
    const fs::path snapshot = out_dir / "config.json";
    if (fs::exists(snapshot)) {
      if (read_text_file(snapshot) != text) {
        std::cerr << "refusing to reuse " << out_dir.string()
                  << ": existing config.json differs from " << config_path.string()
                  << "\n";
        return 1;
      }
    } else {
      write_text_file(snapshot, text);
    }
    const TrainResult res = run_training(cfg, seed, out_dir, /*progress=*/true);
    double tail_mean = 0.0;
    const std::size_t tail = std::min<std::size_t>(res.rows.size(), 50);
    for (std::size_t i = res.rows.size() - tail; i < res.rows.size(); ++i)
      tail_mean += res.rows[i].ret;
    if (tail > 0) tail_mean /= static_cast<double>(tail);
    std::cout << "trained " << res.rows.size() << " episodes, final-"
              << tail << " mean return " << format_double(tail_mean)
              << ", artifacts in " << out_dir.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(const fs::path& checkpoint, const std::string& routes_file,
             const std::string& seed_range, const fs::path& out_dir) {
  try {
    if (routes_file.empty() == seed_range.empty()) {
      std::cerr << "eval: provide exactly one of --routes and --seeds\n";
      return 1;
    }
    std::vector<drivesim::RouteSpec> routes;
    if (!routes_file.empty()) {
      routes = load_routes(routes_file);
    } else {
      const auto dots = seed_range.find("..");
      const std::uint64_t a = std::stoull(seed_range.substr(0, dots));
      const std::uint64_t b = dots == std::string::npos
                                  ? a
                                  : std::stoull(seed_range.substr(dots + 2));
      if (b < a || b - a >= 10000)
        throw std::invalid_argument("seed range must be ascending and modest: " + seed_range);
      const drivesim::RouteParams params;
      for (std::uint64_t s = a; s <= b; ++s)
        routes.push_back(drivesim::generate_route(s, params));
    }
    const evalkit::EvalReport r = evaluate_checkpoint(checkpoint, routes, out_dir);
    std::cout << r.method << ": " << r.rmses.size() << " routes, rmse mean "
              << format_double(r.agg.mean) << " min " << format_double(r.agg.min)
              << " max " << format_double(r.agg.max) << " std "
              << format_double(r.agg.std) << ", completion "
              << format_double(r.completion_rate) << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "eval: " << e.what() << "\n";
    return 1;
  }
}

int cmd_export_curve(const fs::path& run_dir, double alpha) {
  try {
    const fs::path csv_path = run_dir / "rewards.csv";
    if (!fs::exists(csv_path)) {
      std::cerr << "export-curve: no rewards.csv under " << run_dir.string() << "\n";
      return 1;
    }
    std::ifstream in(csv_path, std::ios::binary);
    std::string header;
    if (!std::getline(in, header))
      throw std::runtime_error("rewards.csv is empty: " + csv_path.string());
    // locate the return and avg_reward columns
    std::vector<std::string> cols;
    {
      std::istringstream hs(header);
      std::string c;
      while (std::getline(hs, c, ',')) cols.push_back(c);
    }
    const auto col_index = [&](const std::string& name) {
      for (std::size_t i = 0; i < cols.size(); ++i)
        if (cols[i] == name) return i;
      throw std::runtime_error("rewards.csv lacks column \"" + name + "\"");
    };
    const std::size_t ret_col = col_index("return");
    const std::size_t avg_col = col_index("avg_reward");

    std::vector<std::string> lines;
    std::vector<double> rets, avgs;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> fields;
      std::istringstream ls(line);
      std::string f;
      while (std::getline(ls, f, ',')) fields.push_back(f);
      if (fields.size() != cols.size())
        throw std::runtime_error("malformed rewards.csv row: " + line);
      rets.push_back(std::stod(fields[ret_col]));
      avgs.push_back(std::stod(fields[avg_col]));
      lines.push_back(line);
    }
    const std::vector<double> ret_s = ema(rets, alpha);
    const std::vector<double> avg_s = ema(avgs, alpha);

    std::ofstream out(run_dir / "rewards_smoothed.csv", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write rewards_smoothed.csv");
    out << header << ",return_smoothed,avg_reward_smoothed\n";
    for (std::size_t i = 0; i < lines.size(); ++i)
      out << lines[i] << ',' << format_double(ret_s[i]) << ','
          << format_double(avg_s[i]) << '\n';
    if (!out.flush()) throw std::runtime_error("write failed: rewards_smoothed.csv");
    std::cout << "smoothed " << lines.size() << " rows (factor "
              << format_double(alpha) << ") -> "
              << (run_dir / "rewards_smoothed.csv").string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "export-curve: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace drivesac::runio
