#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drivesac/action.hpp"
#include "drivesac/fusion.hpp"
#include "drivesac/rng.hpp"
#include "json.hpp"

// Off-policy actor-critic learners over the fusion encoder: a stochastic
// twin-critic agent with an entropy bonus, and a deterministic-policy
// baseline with a single critic. Both draw uniformly from a FIFO replay
// ring and smooth their target networks geometrically. Every random draw
// comes from an explicit stream in a pinned order, so training is bitwise
// reproducible.

namespace drivesac::agents {

// ---------------------------------------------------------------------------
// Distribution and target math (pure functions, unit-tested directly).

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kLn2 = 0.6931471805599453094;
inline constexpr double kHalfLn2Pi = 0.9189385332046727418;  // 0.5*ln(2*pi)

// Shannon entropy -sum p ln p with 0*ln 0 := 0. The weights must be
// nonnegative and sum to 1 within 1e-9.
double entropy(std::span<const double> p);

// log(1 - tanh(u)^2) evaluated as 2*(ln 2 - u - softplus(-2u)), which stays
// finite for |u| far beyond where 1 - tanh^2 underflows.
double log1m_tanh_sq(double u);

// Log-density of N(mean, exp(logstd)^2) at x.
double gaussian_log_density(double x, double mean, double logstd);

// The action squash: throttle maps through an affine tanh onto [0,1], steer
// through plain tanh onto [-1,1].
inline double squash_throttle(double u) { return (std::tanh(u) + 1.0) * 0.5; }
inline double squash_steer(double u) { return std::tanh(u); }

// Log-density of the squashed action at pre-squash values u, under the
// diagonal Gaussian with the given (already clamped) log-stds. Includes the
// tanh change-of-variables terms and the ln(1/2) throttle rescaling constant.
double squashed_log_prob(double u_throttle, double u_steer, const double mean[2],
                         const double logstd[2]);

struct ActionSample {
  Action action;
  double log_prob = 0.0;
};

// The emission path shared by the agents: clamp the raw log-stds to
// [kLogStdMin, kLogStdMax], form u = mean + exp(logstd)*eps, squash, and
// report the log-density of the result.
ActionSample sample_squashed(const double mean[2], const double logstd_raw[2],
                             const double eps[2]);

// Per-element critic regression target: r when the transition terminated,
// else r + gamma*(min(q1, q2) - alpha*log_pi).
double q_target_value(double r, bool done, double q1, double q2, double log_pi,
                      double gamma, double alpha);

// Deterministic-policy variant: r, or r + gamma*q_next.
double ddpg_target_value(double r, bool done, double q_next, double gamma);

// ---------------------------------------------------------------------------
// Replay memory.

struct Transition {
  std::shared_ptr<const Observation> s;
  Action a;
  double r = 0.0;
  std::shared_ptr<const Observation> s_next;
  bool done = false;  // s_next is terminal
};

// Fixed-capacity ring; pushes evict strictly oldest-first, samples are
// i.i.d. uniform with replacement over current contents.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1'000'000);

  void push(Transition t);  // rejects non-finite reward or null observations
  std::size_t size() const { return store_.size(); }
  std::size_t capacity() const { return cap_; }
  std::uint64_t pushed() const { return count_; }

  // index 0 is the oldest element currently held
  const Transition& at(std::size_t i) const;

  // n >= 1 draws; throws when the buffer is empty
  std::vector<Transition> sample(int n, RandomStream& rng) const;

 private:
  std::vector<Transition> store_;
  std::size_t cap_;
  std::uint64_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Configuration.

// Input ablation: "image" zeroes the tracking branch input, "sensor" zeroes
// the image branch input. The architecture (and checkpoint shape) never
// changes, so the variants differ only in information content.
enum class Modality { fusion, image, sensor };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);

struct SacConfig {
  double gamma = 0.99;
  double alpha = 0.2;
  double rho = 0.995;  // target smoothing; 1 freezes targets, 0 copies
  int batch_size = 64;
  double learning_rate = 1e-4;
  double grad_steps_per_env_step = 1.0;
  int warmup_steps = 1000;
  std::size_t replay_capacity = 1'000'000;
  fusion::EncoderConfig encoder;
  std::vector<int> hidden = {64, 64};
  Modality modality = Modality::fusion;

  void validate() const;  // throws std::invalid_argument with the field name
};

struct DdpgConfig {
  double gamma = 0.99;
  double rho = 0.995;
  int batch_size = 64;
  double learning_rate = 1e-4;
  double grad_steps_per_env_step = 1.0;
  int warmup_steps = 1000;
  double noise_sigma = 0.1;  // exploration noise in squashed action space
  std::size_t replay_capacity = 1'000'000;
  fusion::EncoderConfig encoder;
  std::vector<int> hidden = {64, 64};
  Modality modality = Modality::fusion;

  void validate() const;
};

// Strict JSON round-trips: parsing rejects unknown keys, so config typos
// fail loudly instead of silently reverting to defaults.
nlohmann::json to_json(const SacConfig& cfg);
SacConfig sac_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DdpgConfig& cfg);
DdpgConfig ddpg_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Networks.

// Encoder plus dense head owning its parameters. The head input is the
// 116-dim state representation, optionally with extra feature rows (the
// action, for critics) appended after the encoder output.
class FusionNet {
 public:
  // hidden: sizes of the relu-activated dense layers between the head input
  // and the linear output. Parameter names live under encoder/... and
  // head/....
  FusionNet(const fusion::EncoderConfig& enc_cfg, const std::vector<int>& hidden,
            int extra_inputs, int outputs, RandomStream* init_rng);

  FusionNet(const FusionNet&) = delete;
  FusionNet& operator=(const FusionNet&) = delete;

  // image/track are batch-inner buffers (h*w rows and 8 rows wide B); extra
  // supplies extra_inputs additional rows. Returns outputs x B, valid until
  // the next forward of this net.
  const double* forward(const double* image, const double* track,
                        const double* extra, int B);

  // When with_param_grads is set, backpropagates through head and encoder and
  // fills this net's parameter gradients. Otherwise only the head input
  // gradient is formed, and g_extra (extra_inputs x B, may be null) receives
  // the slice for the appended rows — the path used when differentiating a
  // frozen critic with respect to the action alone.
  void backward(const double* g_out, double* g_extra, int B, bool with_param_grads);

  diffnet::ParamStore& params() { return store_; }
  const diffnet::ParamStore& params() const { return store_; }
  int outputs() const { return outputs_; }
  int extra_inputs() const { return extra_; }

  // copies values (not grads) from a structurally identical net
  void copy_values_from(const FusionNet& o);

 private:
  diffnet::ParamStore store_;
  std::unique_ptr<fusion::FusionEncoder> enc_;
  diffnet::Stack head_;
  int extra_ = 0, outputs_ = 0;
  std::vector<double> head_in_, g_head_in_;
};

// ---------------------------------------------------------------------------
// Agents.

struct TrainStats {
  double q1_loss = 0.0;
  double q2_loss = 0.0;
  double policy_loss = 0.0;
  double mean_target = 0.0;
};

struct TrainSchedule {
  int batch_size = 0;
  int warmup_steps = 0;
  double grad_steps_per_env_step = 0.0;
  std::size_t replay_capacity = 0;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual const char* algorithm() const = 0;
  virtual Action act(const Observation& obs, bool deterministic) = 0;
  virtual TrainStats train_step(ReplayBuffer& buf) = 0;
  virtual TrainSchedule schedule() const = 0;
  virtual void save(const std::filesystem::path& path,
                    const nlohmann::json& extra_meta) const = 0;
  virtual void load(const std::filesystem::path& path) = 0;
};

// Stochastic twin-critic agent. One gradient step runs, in order: target
// computation (next actions freshly resampled), descent on both critics,
// policy ascent through the reparameterized sample, then target smoothing.
// The stream consumption order per step is pinned: batch_size index draws,
// 2*batch_size normals for the next-state resample, 2*batch_size normals for
// the policy sample (throttle before steer within each element).
class SacAgent : public Agent {
 public:
  SacAgent(const SacConfig& cfg, std::uint64_t seed);

  const char* algorithm() const override { return "sac"; }
  const SacConfig& config() const { return cfg_; }
  RandomStream& rng() { return rng_; }

  ActionSample sample(const Observation& obs, bool deterministic);
  Action act(const Observation& obs, bool deterministic) override {
    return sample(obs, deterministic).action;
  }

  TrainStats train_step(ReplayBuffer& buf) override;
  TrainSchedule schedule() const override;

  // --- evaluation seams (also the internals of train_step) ---
  // Regression targets for a batch, with eps_next (2 normals per element)
  // driving the next-action resample.
  std::vector<double> q_targets(const std::vector<Transition>& batch,
                                std::span<const double> eps_next);
  // Mean half-squared residual of critic i in {1,2} against fixed targets y;
  // pure evaluation, no gradients.
  double critic_loss(int i, const std::vector<Transition>& batch,
                     const std::vector<double>& y);
  // Policy objective mean(alpha*log_pi - min_i Q_i) at frozen noise; pure
  // evaluation.
  double policy_objective(const std::vector<Transition>& batch,
                          std::span<const double> eps);
  // Same computation, but fills the policy parameter gradients (critic
  // parameters stay untouched). No optimizer step.
  double policy_grads(const std::vector<Transition>& batch,
                      std::span<const double> eps);

  double q_value(int i, const Observation& obs, const Action& a);

  void save(const std::filesystem::path& path,
            const nlohmann::json& extra_meta) const override;
  void load(const std::filesystem::path& path) override;

  diffnet::ParamStore& policy_params() { return policy_->params(); }
  diffnet::ParamStore& critic_params(int i);
  diffnet::ParamStore& target_params(int i);

 private:
  double update_critic(int i, const std::vector<Transition>& batch,
                       const std::vector<double>& y);
  double policy_eval(const std::vector<Transition>& batch,
                     std::span<const double> eps, bool with_grads);
  void soft_update_targets();
  void pack_batch(const std::vector<Transition>& batch, bool next);
  const double* policy_head(const std::vector<Transition>& batch, bool next, int B);

  SacConfig cfg_;
  RandomStream rng_;
  std::unique_ptr<FusionNet> policy_, q1_, q2_, q1_t_, q2_t_;
  std::unique_ptr<diffnet::AdamState> opt_policy_, opt_q1_, opt_q2_;
  std::vector<double> img_, trk_;  // packed batch workspace
};

// Deterministic-policy baseline: single critic plus target, target actor,
// additive Gaussian exploration noise clipped to the action ranges. Stream
// order per gradient step: batch_size index draws only (targets use the
// deterministic target actor).
class DdpgAgent : public Agent {
 public:
  DdpgAgent(const DdpgConfig& cfg, std::uint64_t seed);

  const char* algorithm() const override { return "ddpg"; }
  const DdpgConfig& config() const { return cfg_; }
  RandomStream& rng() { return rng_; }

  Action act(const Observation& obs, bool deterministic) override;
  TrainStats train_step(ReplayBuffer& buf) override;
  TrainSchedule schedule() const override;

  double q_value(const Observation& obs, const Action& a);

  void save(const std::filesystem::path& path,
            const nlohmann::json& extra_meta) const override;
  void load(const std::filesystem::path& path) override;

  diffnet::ParamStore& actor_params() { return actor_->params(); }
  diffnet::ParamStore& critic_params() { return critic_->params(); }
  diffnet::ParamStore& target_actor_params() { return actor_t_->params(); }
  diffnet::ParamStore& target_critic_params() { return critic_t_->params(); }

 private:
  void pack_batch(const std::vector<Transition>& batch, bool next);

  DdpgConfig cfg_;
  RandomStream rng_;
  std::unique_ptr<FusionNet> actor_, actor_t_, critic_, critic_t_;
  std::unique_ptr<diffnet::AdamState> opt_actor_, opt_critic_;
  std::vector<double> img_, trk_;
};

// Reconstructs an agent of the algorithm recorded in a checkpoint's metadata
// and loads the stored parameters into it.
std::unique_ptr<Agent> load_agent(const std::filesystem::path& path,
                                  std::uint64_t seed);

}  // namespace drivesac::agents
