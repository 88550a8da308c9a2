#include "drivesac/agents.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "drivesac/kernels.hpp"

namespace drivesac::agents {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974ULL;  // net initialization
constexpr std::uint64_t kActTag = 0x61637473ULL;   // sampling + batching

void mask_buffers(Modality m, std::vector<double>& img, std::vector<double>& trk) {
  if (m == Modality::image)
    std::fill(trk.begin(), trk.end(), 0.0);
  else if (m == Modality::sensor)
    std::fill(img.begin(), img.end(), 0.0);
}

void check_obs_dims(const Observation& o, const fusion::EncoderConfig& enc) {
  if (o.h != enc.image_h || o.w != enc.image_w ||
      (long)o.image.size() != (long)o.h * o.w)
    throw std::invalid_argument("observation size does not match encoder");
}

void pack_masked(const std::vector<Transition>& batch, bool next,
                 const fusion::EncoderConfig& enc, Modality m,
                 std::vector<double>& img, std::vector<double>& trk) {
  std::vector<const Observation*> ptrs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ptrs[i] = next ? batch[i].s_next.get() : batch[i].s.get();
    check_obs_dims(*ptrs[i], enc);
  }
  pack_observations(ptrs, img, trk);
  mask_buffers(m, img, trk);
}

const double* single_forward(FusionNet& net, const Observation& obs,
                             const double* extra, const fusion::EncoderConfig& enc,
                             Modality m, std::vector<double>& img,
                             std::vector<double>& trk) {
  check_obs_dims(obs, enc);
  std::array<const Observation*, 1> one{&obs};
  pack_observations(one, img, trk);
  mask_buffers(m, img, trk);
  return net.forward(img.data(), trk.data(), extra, 1);
}

void soft_update_store(diffnet::ParamStore& target, diffnet::ParamStore& online,
                       double rho) {
  const kernels::Ops& ops = kernels::active();
  auto& tp = target.all();
  auto& op = online.all();
  for (std::size_t i = 0; i < tp.size(); ++i)
    ops.soft_update(tp[i]->value.data(), op[i]->value.data(), rho,
                    (long)tp[i]->value.size());
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                const char* what) {
  if (!j.is_object())
    throw std::invalid_argument(std::string(what) + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known)
      throw std::invalid_argument(std::string("unknown key \"") + item.key() +
                                  "\" in " + what);
  }
}

fusion::EncoderConfig encoder_from_json(const nlohmann::json& j) {
  fusion::EncoderConfig c;
  check_keys(j, {"image_h", "image_w", "channels"}, "encoder config");
  c.image_h = j.value("image_h", c.image_h);
  c.image_w = j.value("image_w", c.image_w);
  c.channels = j.value("channels", c.channels);
  return c;
}

nlohmann::json encoder_to_json(const fusion::EncoderConfig& c) {
  return {{"image_h", c.image_h}, {"image_w", c.image_w}, {"channels", c.channels}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Distribution and target math.

double entropy(std::span<const double> p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("weights must be nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("weights must sum to 1");
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double log1m_tanh_sq(double u) {
  const double x = -2.0 * u;
  const double softplus = std::fmax(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  return 2.0 * (kLn2 - u - softplus);
}

double gaussian_log_density(double x, double mean, double logstd) {
  const double z = (x - mean) * std::exp(-logstd);
  return -kHalfLn2Pi - logstd - 0.5 * z * z;
}

double squashed_log_prob(double u_throttle, double u_steer, const double mean[2],
                         const double logstd[2]) {
  // -log|da/du|: the throttle squash scales tanh's derivative by 1/2, which
  // contributes the constant +ln 2.
  return gaussian_log_density(u_throttle, mean[0], logstd[0]) +
         gaussian_log_density(u_steer, mean[1], logstd[1]) -
         log1m_tanh_sq(u_throttle) + kLn2 - log1m_tanh_sq(u_steer);
}

ActionSample sample_squashed(const double mean[2], const double logstd_raw[2],
                             const double eps[2]) {
  const double ls[2] = {std::clamp(logstd_raw[0], kLogStdMin, kLogStdMax),
                        std::clamp(logstd_raw[1], kLogStdMin, kLogStdMax)};
  const double u_t = mean[0] + std::exp(ls[0]) * eps[0];
  const double u_s = mean[1] + std::exp(ls[1]) * eps[1];
  ActionSample s;
  s.action = Action::checked(squash_throttle(u_t), squash_steer(u_s));
  s.log_prob = -2.0 * kHalfLn2Pi - ls[0] - ls[1] -
               0.5 * (eps[0] * eps[0] + eps[1] * eps[1]) -
               log1m_tanh_sq(u_t) + kLn2 - log1m_tanh_sq(u_s);
  return s;
}

double q_target_value(double r, bool done, double q1, double q2, double log_pi,
                      double gamma, double alpha) {
  if (done) return r;
  return r + gamma * (std::min(q1, q2) - alpha * log_pi);
}

double ddpg_target_value(double r, bool done, double q_next, double gamma) {
  if (done) return r;
  return r + gamma * q_next;
}

// ---------------------------------------------------------------------------
// Replay memory.

ReplayBuffer::ReplayBuffer(std::size_t capacity) : cap_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (!std::isfinite(t.r)) throw std::invalid_argument("non-finite reward");
  if (!t.s || !t.s_next) throw std::invalid_argument("transition missing an observation");
  if (store_.size() < cap_)
    store_.push_back(std::move(t));
  else
    store_[count_ % cap_] = std::move(t);
  ++count_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= store_.size()) throw std::out_of_range("replay index out of range");
  if (store_.size() < cap_) return store_[i];
  return store_[(count_ + i) % cap_];  // count_ % cap_ is the oldest slot
}

std::vector<Transition> ReplayBuffer::sample(int n, RandomStream& rng) const {
  if (store_.empty()) throw std::logic_error("sampling from an empty replay buffer");
  if (n < 1) throw std::invalid_argument("sample size must be >= 1");
  std::vector<Transition> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) out.push_back(at(rng.randint(store_.size())));
  return out;
}

// ---------------------------------------------------------------------------
// Configuration.

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::fusion: return "fusion";
    case Modality::image: return "image";
    case Modality::sensor: return "sensor";
  }
  throw std::invalid_argument("unknown modality");
}

Modality modality_from_string(std::string_view s) {
  if (s == "fusion") return Modality::fusion;
  if (s == "image") return Modality::image;
  if (s == "sensor") return Modality::sensor;
  throw std::invalid_argument("modality must be fusion, image, or sensor");
}

namespace {

void validate_common(double gamma, double rho, int batch_size, double lr,
                     double grad_ratio, int warmup, std::size_t capacity,
                     const fusion::EncoderConfig& enc, const std::vector<int>& hidden) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("gamma must lie in (0,1)");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw std::invalid_argument("rho must lie in [0,1]");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!std::isfinite(lr) || lr < 0.0)
    throw std::invalid_argument("learning_rate must be finite and >= 0");
  if (!std::isfinite(grad_ratio) || grad_ratio < 0.0)
    throw std::invalid_argument("grad_steps_per_env_step must be finite and >= 0");
  if (warmup < 0) throw std::invalid_argument("warmup_steps must be >= 0");
  if (capacity < (std::size_t)batch_size)
    throw std::invalid_argument("replay_capacity must hold at least one batch");
  if (enc.image_h < 8 || enc.image_w < 8)
    throw std::invalid_argument("encoder image must be at least 8x8");
  for (int c : enc.channels)
    if (c < 1) throw std::invalid_argument("encoder channels must be positive");
  if (hidden.empty())
    throw std::invalid_argument("hidden must name at least one layer width");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("hidden widths must be positive");
}

}  // namespace

void SacConfig::validate() const {
  validate_common(gamma, rho, batch_size, learning_rate, grad_steps_per_env_step,
                  warmup_steps, replay_capacity, encoder, hidden);
  if (!std::isfinite(alpha) || alpha < 0.0)
    throw std::invalid_argument("alpha must be finite and >= 0");
}

void DdpgConfig::validate() const {
  validate_common(gamma, rho, batch_size, learning_rate, grad_steps_per_env_step,
                  warmup_steps, replay_capacity, encoder, hidden);
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0)
    throw std::invalid_argument("noise_sigma must be finite and >= 0");
}

nlohmann::json to_json(const SacConfig& c) {
  return {{"gamma", c.gamma},
          {"alpha", c.alpha},
          {"rho", c.rho},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"grad_steps_per_env_step", c.grad_steps_per_env_step},
          {"warmup_steps", c.warmup_steps},
          {"replay_capacity", c.replay_capacity},
          {"encoder", encoder_to_json(c.encoder)},
          {"hidden", c.hidden},
          {"modality", to_string(c.modality)}};
}

SacConfig sac_config_from_json(const nlohmann::json& j) {
  SacConfig c;
  check_keys(j,
             {"gamma", "alpha", "rho", "batch_size", "learning_rate",
              "grad_steps_per_env_step", "warmup_steps", "replay_capacity",
              "encoder", "hidden", "modality"},
             "agent config");
  c.gamma = j.value("gamma", c.gamma);
  c.alpha = j.value("alpha", c.alpha);
  c.rho = j.value("rho", c.rho);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_steps_per_env_step = j.value("grad_steps_per_env_step", c.grad_steps_per_env_step);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.replay_capacity = j.value("replay_capacity", (std::uint64_t)c.replay_capacity);
  if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"));
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("modality"))
    c.modality = modality_from_string(j.at("modality").get<std::string>());
  c.validate();
  return c;
}

nlohmann::json to_json(const DdpgConfig& c) {
  return {{"gamma", c.gamma},
          {"rho", c.rho},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"grad_steps_per_env_step", c.grad_steps_per_env_step},
          {"warmup_steps", c.warmup_steps},
          {"noise_sigma", c.noise_sigma},
          {"replay_capacity", c.replay_capacity},
          {"encoder", encoder_to_json(c.encoder)},
          {"hidden", c.hidden},
          {"modality", to_string(c.modality)}};
}

DdpgConfig ddpg_config_from_json(const nlohmann::json& j) {
  DdpgConfig c;
  check_keys(j,
             {"gamma", "rho", "batch_size", "learning_rate",
              "grad_steps_per_env_step", "warmup_steps", "noise_sigma",
              "replay_capacity", "encoder", "hidden", "modality"},
             "agent config");
  c.gamma = j.value("gamma", c.gamma);
  c.rho = j.value("rho", c.rho);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_steps_per_env_step = j.value("grad_steps_per_env_step", c.grad_steps_per_env_step);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.replay_capacity = j.value("replay_capacity", (std::uint64_t)c.replay_capacity);
  if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"));
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("modality"))
    c.modality = modality_from_string(j.at("modality").get<std::string>());
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// FusionNet.

FusionNet::FusionNet(const fusion::EncoderConfig& enc_cfg,
                     const std::vector<int>& hidden, int extra_inputs, int outputs,
                     RandomStream* init_rng)
    : extra_(extra_inputs), outputs_(outputs) {
  enc_ = std::make_unique<fusion::FusionEncoder>(store_, "encoder", enc_cfg, init_rng);
  int width = fusion::kStateFeatures + extra_;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const std::string name = "head/fc" + std::to_string(i + 1);
    head_.add(std::make_unique<diffnet::Dense>(store_, name, width, hidden[i], init_rng));
    head_.add(std::make_unique<diffnet::ReLU>(diffnet::Shape{hidden[i]}));
    width = hidden[i];
  }
  head_.add(std::make_unique<diffnet::Dense>(store_, "head/out", width, outputs_, init_rng));
}

const double* FusionNet::forward(const double* image, const double* track,
                                 const double* extra, int B) {
  const double* state = enc_->forward(image, track, B);
  const double* head_in = state;
  if (extra_ > 0) {
    head_in_.resize((std::size_t)(fusion::kStateFeatures + extra_) * B);
    diffnet::concat_rows(state, fusion::kStateFeatures, extra, extra_,
                         head_in_.data(), B);
    head_in = head_in_.data();
  }
  return head_.forward(head_in, B);
}

void FusionNet::backward(const double* g_out, double* g_extra, int B,
                         bool with_param_grads) {
  g_head_in_.resize((std::size_t)(fusion::kStateFeatures + extra_) * B);
  head_.backward(g_out, g_head_in_.data(), B, with_param_grads);
  if (g_extra && extra_ > 0)
    std::memcpy(g_extra, g_head_in_.data() + (std::size_t)fusion::kStateFeatures * B,
                sizeof(double) * (std::size_t)extra_ * B);
  // rows are state-first, so the leading 116*B entries are the encoder slice
  if (with_param_grads) enc_->backward(g_head_in_.data(), nullptr, nullptr, B, true);
}

void FusionNet::copy_values_from(const FusionNet& o) {
  auto mine = store_.all();
  auto theirs = o.store_.all();
  if (mine.size() != theirs.size())
    throw std::logic_error("parameter count mismatch in copy");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i]->name != theirs[i]->name || mine[i]->shape != theirs[i]->shape)
      throw std::logic_error("parameter layout mismatch in copy");
    store_.at(mine[i]->name).value = theirs[i]->value;
  }
}

// ---------------------------------------------------------------------------
// SacAgent.

SacAgent::SacAgent(const SacConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(RandomStream::mix(seed, kActTag)) {
  cfg_.validate();
  RandomStream init(RandomStream::mix(seed, kInitTag));
  policy_ = std::make_unique<FusionNet>(cfg_.encoder, cfg_.hidden, 0, 4, &init);
  q1_ = std::make_unique<FusionNet>(cfg_.encoder, cfg_.hidden, 2, 1, &init);
  q2_ = std::make_unique<FusionNet>(cfg_.encoder, cfg_.hidden, 2, 1, &init);
  q1_t_ = std::make_unique<FusionNet>(cfg_.encoder, cfg_.hidden, 2, 1, nullptr);
  q2_t_ = std::make_unique<FusionNet>(cfg_.encoder, cfg_.hidden, 2, 1, nullptr);
  q1_t_->copy_values_from(*q1_);
  q2_t_->copy_values_from(*q2_);
  diffnet::AdamConfig ac;
  ac.lr = cfg_.learning_rate;
  opt_policy_ = std::make_unique<diffnet::AdamState>(policy_->params(), ac);
  opt_q1_ = std::make_unique<diffnet::AdamState>(q1_->params(), ac);
  opt_q2_ = std::make_unique<diffnet::AdamState>(q2_->params(), ac);
}

diffnet::ParamStore& SacAgent::critic_params(int i) {
  if (i != 1 && i != 2) throw std::invalid_argument("critic index must be 1 or 2");
  return (i == 1 ? q1_ : q2_)->params();
}

diffnet::ParamStore& SacAgent::target_params(int i) {
  if (i != 1 && i != 2) throw std::invalid_argument("critic index must be 1 or 2");
  return (i == 1 ? q1_t_ : q2_t_)->params();
}

TrainSchedule SacAgent::schedule() const {
  return {cfg_.batch_size, cfg_.warmup_steps, cfg_.grad_steps_per_env_step,
          cfg_.replay_capacity};
}

ActionSample SacAgent::sample(const Observation& obs, bool deterministic) {
  const double* h =
      single_forward(*policy_, obs, nullptr, cfg_.encoder, cfg_.modality, img_, trk_);
  for (int k = 0; k < 4; ++k)
    if (!std::isfinite(h[k]))
      throw std::runtime_error("policy head produced a non-finite output");
  const double mean[2] = {h[0], h[1]};
  const double logstd[2] = {h[2], h[3]};
  double eps[2] = {0.0, 0.0};
  if (!deterministic) {
    eps[0] = rng_.normal();
    eps[1] = rng_.normal();
  }
  return sample_squashed(mean, logstd, eps);
}

void SacAgent::pack_batch(const std::vector<Transition>& batch, bool next) {
  pack_masked(batch, next, cfg_.encoder, cfg_.modality, img_, trk_);
}

const double* SacAgent::policy_head(const std::vector<Transition>& batch, bool next,
                                    int B) {
  pack_batch(batch, next);
  return policy_->forward(img_.data(), trk_.data(), nullptr, B);
}

std::vector<double> SacAgent::q_targets(const std::vector<Transition>& batch,
                                        std::span<const double> eps_next) {
  const int B = (int)batch.size();
  if ((int)eps_next.size() != 2 * B)
    throw std::invalid_argument("expected two noise draws per batch element");
  const double* p = policy_head(batch, /*next=*/true, B);

  std::vector<double> act_rows(2 * (std::size_t)B), logp(B);
  for (int b = 0; b < B; ++b) {
    const double mean[2] = {p[0 * B + b], p[1 * B + b]};
    const double logstd[2] = {p[2 * B + b], p[3 * B + b]};
    const ActionSample s = sample_squashed(mean, logstd, &eps_next[2 * b]);
    act_rows[0 * B + b] = s.action.throttle;
    act_rows[1 * B + b] = s.action.steer;
    logp[b] = s.log_prob;
  }

  // img_/trk_ still hold the packed next observations
  const double* t1 = q1_t_->forward(img_.data(), trk_.data(), act_rows.data(), B);
  std::vector<double> q1v(t1, t1 + B);
  const double* t2 = q2_t_->forward(img_.data(), trk_.data(), act_rows.data(), B);

  std::vector<double> y(B);
  for (int b = 0; b < B; ++b)
    y[b] = q_target_value(batch[b].r, batch[b].done, q1v[b], t2[b], logp[b],
                          cfg_.gamma, cfg_.alpha);
  return y;
}

double SacAgent::critic_loss(int i, const std::vector<Transition>& batch,
                             const std::vector<double>& y) {
  const int B = (int)batch.size();
  if ((int)y.size() != B) throw std::invalid_argument("target count mismatch");
  pack_batch(batch, false);
  std::vector<double> act_rows(2 * (std::size_t)B);
  for (int b = 0; b < B; ++b) {
    act_rows[0 * B + b] = batch[b].a.throttle;
    act_rows[1 * B + b] = batch[b].a.steer;
  }
  FusionNet& q = i == 1 ? *q1_ : *q2_;
  if (i != 1 && i != 2) throw std::invalid_argument("critic index must be 1 or 2");
  const double* qv = q.forward(img_.data(), trk_.data(), act_rows.data(), B);
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const double r = qv[b] - y[b];
    loss += 0.5 * r * r;
  }
  return loss / B;
}

double SacAgent::update_critic(int i, const std::vector<Transition>& batch,
                               const std::vector<double>& y) {
  const int B = (int)batch.size();
  pack_batch(batch, false);
  std::vector<double> act_rows(2 * (std::size_t)B);
  for (int b = 0; b < B; ++b) {
    act_rows[0 * B + b] = batch[b].a.throttle;
    act_rows[1 * B + b] = batch[b].a.steer;
  }
  FusionNet& q = i == 1 ? *q1_ : *q2_;
  const double* qv = q.forward(img_.data(), trk_.data(), act_rows.data(), B);
  double loss = 0.0;
  std::vector<double> g(B);
  for (int b = 0; b < B; ++b) {
    const double r = qv[b] - y[b];
    loss += 0.5 * r * r;
    g[b] = r / B;
  }
  q.backward(g.data(), nullptr, B, /*with_param_grads=*/true);
  (i == 1 ? opt_q1_ : opt_q2_)->step();
  return loss / B;
}

// Shared body of policy_objective / policy_grads. The objective is
// mean_b(alpha*log_pi_b - min_i Q_i(s_b, a_b)) with a_b the reparameterized
// squashed sample at frozen eps. The analytic gradient below threads three
// paths into the raw head outputs:
//   d a/d u through the critic's action input,
//   d log_pi/d u = 2*tanh(u) from the change-of-variables term,
//   d log_pi/d logstd = -1 plus the u-path factor std*eps,
// with the logstd rows masked to zero wherever the clamp saturated.
double SacAgent::policy_eval(const std::vector<Transition>& batch,
                             std::span<const double> eps, bool with_grads) {
  const int B = (int)batch.size();
  if ((int)eps.size() != 2 * B)
    throw std::invalid_argument("expected two noise draws per batch element");
  const double* p = policy_head(batch, /*next=*/false, B);

  std::vector<double> th(2 * (std::size_t)B), sd(2 * (std::size_t)B),
      mask(2 * (std::size_t)B), act_rows(2 * (std::size_t)B), logp(B);
  for (int b = 0; b < B; ++b) {
    for (int d = 0; d < 2; ++d) {
      const double raw = p[(2 + d) * B + b];
      const double ls = std::clamp(raw, kLogStdMin, kLogStdMax);
      mask[d * B + b] = (raw >= kLogStdMin && raw <= kLogStdMax) ? 1.0 : 0.0;
      const double s = std::exp(ls);
      const double u = p[d * B + b] + s * eps[2 * b + d];
      const double t = std::tanh(u);
      sd[d * B + b] = s;
      th[d * B + b] = t;
      act_rows[d * B + b] = d == 0 ? (t + 1.0) * 0.5 : t;
      logp[b] += -kHalfLn2Pi - ls - 0.5 * eps[2 * b + d] * eps[2 * b + d] -
                 log1m_tanh_sq(u) + (d == 0 ? kLn2 : 0.0);
    }
  }

  const double* q1p = q1_->forward(img_.data(), trk_.data(), act_rows.data(), B);
  std::vector<double> q1v(q1p, q1p + B);
  const double* q2v = q2_->forward(img_.data(), trk_.data(), act_rows.data(), B);

  double loss = 0.0;
  for (int b = 0; b < B; ++b)
    loss += cfg_.alpha * logp[b] - std::min(q1v[b], q2v[b]);
  loss /= B;
  if (!with_grads) return loss;

  // backprop through the elementwise minimum: each element uses exactly one
  // critic, the other's output gradient is zero for that column
  std::vector<double> g1(B, 0.0), g2(B, 0.0);
  for (int b = 0; b < B; ++b)
    (q1v[b] <= q2v[b] ? g1 : g2)[b] = -1.0 / B;
  std::vector<double> ga(2 * (std::size_t)B), gb(2 * (std::size_t)B);
  q1_->backward(g1.data(), ga.data(), B, /*with_param_grads=*/false);
  q2_->backward(g2.data(), gb.data(), B, /*with_param_grads=*/false);

  std::vector<double> ghead(4 * (std::size_t)B);
  const double w = cfg_.alpha / B;
  for (int b = 0; b < B; ++b) {
    for (int d = 0; d < 2; ++d) {
      const double t = th[d * B + b];
      const double dadu = d == 0 ? (1.0 - t * t) * 0.5 : 1.0 - t * t;
      const double g_a = ga[d * B + b] + gb[d * B + b];
      const double g_u = g_a * dadu + w * 2.0 * t;
      ghead[d * B + b] = g_u;
      ghead[(2 + d) * B + b] =
          mask[d * B + b] * (g_u * sd[d * B + b] * eps[2 * b + d] - w);
    }
  }
  policy_->backward(ghead.data(), nullptr, B, /*with_param_grads=*/true);
  return loss;
}

double SacAgent::policy_objective(const std::vector<Transition>& batch,
                                  std::span<const double> eps) {
  return policy_eval(batch, eps, false);
}

double SacAgent::policy_grads(const std::vector<Transition>& batch,
                              std::span<const double> eps) {
  return policy_eval(batch, eps, true);
}

void SacAgent::soft_update_targets() {
  soft_update_store(q1_t_->params(), q1_->params(), cfg_.rho);
  soft_update_store(q2_t_->params(), q2_->params(), cfg_.rho);
}

TrainStats SacAgent::train_step(ReplayBuffer& buf) {
  const int B = cfg_.batch_size;
  if ((int)buf.size() < B)
    throw std::logic_error("replay buffer holds fewer transitions than one batch");
  const std::vector<Transition> batch = buf.sample(B, rng_);
  std::vector<double> eps_next(2 * (std::size_t)B), eps_pi(2 * (std::size_t)B);
  for (double& e : eps_next) e = rng_.normal();
  for (double& e : eps_pi) e = rng_.normal();

  TrainStats stats;
  const std::vector<double> y = q_targets(batch, eps_next);
  for (double v : y) stats.mean_target += v;
  stats.mean_target /= B;
  stats.q1_loss = update_critic(1, batch, y);
  stats.q2_loss = update_critic(2, batch, y);
  stats.policy_loss = policy_grads(batch, eps_pi);
  opt_policy_->step();
  soft_update_targets();
  return stats;
}

double SacAgent::q_value(int i, const Observation& obs, const Action& a) {
  if (i != 1 && i != 2) throw std::invalid_argument("critic index must be 1 or 2");
  const double extra[2] = {a.throttle, a.steer};
  const double* v = single_forward(i == 1 ? *q1_ : *q2_, obs, extra, cfg_.encoder,
                                   cfg_.modality, img_, trk_);
  return v[0];
}

namespace {

void merge_declare(diffnet::ParamStore& merged, const char* prefix,
                   const diffnet::ParamStore& store, bool with_values) {
  for (const diffnet::Param* p : store.all()) {
    diffnet::Param& q = merged.create(std::string(prefix) + "/" + p->name, p->shape);
    if (with_values) q.value = p->value;
  }
}

void merge_fetch(const diffnet::ParamStore& merged, const char* prefix,
                 diffnet::ParamStore& store) {
  for (diffnet::Param* p : store.all())
    p->value = merged.at(std::string(prefix) + "/" + p->name).value;
}

}  // namespace

void SacAgent::save(const std::filesystem::path& path,
                    const nlohmann::json& extra_meta) const {
  diffnet::ParamStore merged;
  merge_declare(merged, "policy", policy_->params(), true);
  merge_declare(merged, "q1", q1_->params(), true);
  merge_declare(merged, "q2", q2_->params(), true);
  merge_declare(merged, "q1_target", q1_t_->params(), true);
  merge_declare(merged, "q2_target", q2_t_->params(), true);
  nlohmann::json meta =
      extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  meta["algorithm"] = "sac";
  meta["config"] = to_json(cfg_);
  diffnet::save_checkpoint(path, merged, meta);
}

void SacAgent::load(const std::filesystem::path& path) {
  diffnet::ParamStore merged;
  merge_declare(merged, "policy", policy_->params(), false);
  merge_declare(merged, "q1", q1_->params(), false);
  merge_declare(merged, "q2", q2_->params(), false);
  merge_declare(merged, "q1_target", q1_t_->params(), false);
  merge_declare(merged, "q2_target", q2_t_->params(), false);
  diffnet::load_checkpoint(path, merged);  // strict name/shape matching
  merge_fetch(merged, "policy", policy_->params());
  merge_fetch(merged, "q1", q1_->params());
  merge_fetch(merged, "q2", q2_->params());
  merge_fetch(merged, "q1_target", q1_t_->params());
  merge_fetch(merged, "q2_target", q2_t_->params());
}

// ---------------------------------------------------------------------------
// DdpgAgent.

DdpgAgent::DdpgAgent(const DdpgConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(RandomStream::mix(seed, kActTag)) {
  cfg_.validate();
  RandomStream init(RandomStream::mix(seed, kInitTag));
  actor_ = std::make_unique<FusionNet>(cfg_.encoder, cfg_.hidden, 0, 2, &init);
  critic_ = std::make_unique<FusionNet>(cfg_.encoder, cfg_.hidden, 2, 1, &init);
  actor_t_ = std::make_unique<FusionNet>(cfg_.encoder, cfg_.hidden, 0, 2, nullptr);
  critic_t_ = std::make_unique<FusionNet>(cfg_.encoder, cfg_.hidden, 2, 1, nullptr);
  actor_t_->copy_values_from(*actor_);
  critic_t_->copy_values_from(*critic_);
  diffnet::AdamConfig ac;
  ac.lr = cfg_.learning_rate;
  opt_actor_ = std::make_unique<diffnet::AdamState>(actor_->params(), ac);
  opt_critic_ = std::make_unique<diffnet::AdamState>(critic_->params(), ac);
}

TrainSchedule DdpgAgent::schedule() const {
  return {cfg_.batch_size, cfg_.warmup_steps, cfg_.grad_steps_per_env_step,
          cfg_.replay_capacity};
}

Action DdpgAgent::act(const Observation& obs, bool deterministic) {
  const double* u =
      single_forward(*actor_, obs, nullptr, cfg_.encoder, cfg_.modality, img_, trk_);
  for (int k = 0; k < 2; ++k)
    if (!std::isfinite(u[k]))
      throw std::runtime_error("actor head produced a non-finite output");
  double throttle = squash_throttle(u[0]);
  double steer = squash_steer(u[1]);
  if (!deterministic) {
    throttle = std::clamp(throttle + cfg_.noise_sigma * rng_.normal(), 0.0, 1.0);
    steer = std::clamp(steer + cfg_.noise_sigma * rng_.normal(), -1.0, 1.0);
  }
  return Action::checked(throttle, steer);
}

void DdpgAgent::pack_batch(const std::vector<Transition>& batch, bool next) {
  pack_masked(batch, next, cfg_.encoder, cfg_.modality, img_, trk_);
}

TrainStats DdpgAgent::train_step(ReplayBuffer& buf) {
  const int B = cfg_.batch_size;
  if ((int)buf.size() < B)
    throw std::logic_error("replay buffer holds fewer transitions than one batch");
  const std::vector<Transition> batch = buf.sample(B, rng_);
  TrainStats stats;

  // critic targets from the target actor/critic pair
  pack_batch(batch, /*next=*/true);
  const double* un = actor_t_->forward(img_.data(), trk_.data(), nullptr, B);
  std::vector<double> act_rows(2 * (std::size_t)B);
  for (int b = 0; b < B; ++b) {
    act_rows[0 * B + b] = squash_throttle(un[0 * B + b]);
    act_rows[1 * B + b] = squash_steer(un[1 * B + b]);
  }
  const double* qt = critic_t_->forward(img_.data(), trk_.data(), act_rows.data(), B);
  std::vector<double> y(B);
  for (int b = 0; b < B; ++b) {
    y[b] = ddpg_target_value(batch[b].r, batch[b].done, qt[b], cfg_.gamma);
    stats.mean_target += y[b];
  }
  stats.mean_target /= B;

  // critic descent on stored actions
  pack_batch(batch, /*next=*/false);
  for (int b = 0; b < B; ++b) {
    act_rows[0 * B + b] = batch[b].a.throttle;
    act_rows[1 * B + b] = batch[b].a.steer;
  }
  const double* qv = critic_->forward(img_.data(), trk_.data(), act_rows.data(), B);
  std::vector<double> g(B);
  for (int b = 0; b < B; ++b) {
    const double r = qv[b] - y[b];
    stats.q1_loss += 0.5 * r * r;
    g[b] = r / B;
  }
  stats.q1_loss /= B;
  critic_->backward(g.data(), nullptr, B, /*with_param_grads=*/true);
  opt_critic_->step();

  // actor ascent through the frozen critic's action input
  const double* u = actor_->forward(img_.data(), trk_.data(), nullptr, B);
  std::vector<double> th(2 * (std::size_t)B);
  for (int b = 0; b < B; ++b) {
    for (int d = 0; d < 2; ++d) {
      const double t = std::tanh(u[d * B + b]);
      th[d * B + b] = t;
      act_rows[d * B + b] = d == 0 ? (t + 1.0) * 0.5 : t;
    }
  }
  const double* qpi = critic_->forward(img_.data(), trk_.data(), act_rows.data(), B);
  for (int b = 0; b < B; ++b) stats.policy_loss -= qpi[b];
  stats.policy_loss /= B;
  std::vector<double> gq(B, -1.0 / B), g_act(2 * (std::size_t)B);
  critic_->backward(gq.data(), g_act.data(), B, /*with_param_grads=*/false);
  std::vector<double> ghead(2 * (std::size_t)B);
  for (int b = 0; b < B; ++b) {
    for (int d = 0; d < 2; ++d) {
      const double t = th[d * B + b];
      const double dadu = d == 0 ? (1.0 - t * t) * 0.5 : 1.0 - t * t;
      ghead[d * B + b] = g_act[d * B + b] * dadu;
    }
  }
  actor_->backward(ghead.data(), nullptr, B, /*with_param_grads=*/true);
  opt_actor_->step();

  soft_update_store(critic_t_->params(), critic_->params(), cfg_.rho);
  soft_update_store(actor_t_->params(), actor_->params(), cfg_.rho);
  return stats;
}

double DdpgAgent::q_value(const Observation& obs, const Action& a) {
  const double extra[2] = {a.throttle, a.steer};
  const double* v =
      single_forward(*critic_, obs, extra, cfg_.encoder, cfg_.modality, img_, trk_);
  return v[0];
}

void DdpgAgent::save(const std::filesystem::path& path,
                     const nlohmann::json& extra_meta) const {
  diffnet::ParamStore merged;
  merge_declare(merged, "actor", actor_->params(), true);
  merge_declare(merged, "critic", critic_->params(), true);
  merge_declare(merged, "actor_target", actor_t_->params(), true);
  merge_declare(merged, "critic_target", critic_t_->params(), true);
  nlohmann::json meta =
      extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  meta["algorithm"] = "ddpg";
  meta["config"] = to_json(cfg_);
  diffnet::save_checkpoint(path, merged, meta);
}

void DdpgAgent::load(const std::filesystem::path& path) {
  diffnet::ParamStore merged;
  merge_declare(merged, "actor", actor_->params(), false);
  merge_declare(merged, "critic", critic_->params(), false);
  merge_declare(merged, "actor_target", actor_t_->params(), false);
  merge_declare(merged, "critic_target", critic_t_->params(), false);
  diffnet::load_checkpoint(path, merged);
  merge_fetch(merged, "actor", actor_->params());
  merge_fetch(merged, "critic", critic_->params());
  merge_fetch(merged, "actor_target", actor_t_->params());
  merge_fetch(merged, "critic_target", critic_t_->params());
}

// ---------------------------------------------------------------------------

std::unique_ptr<Agent> load_agent(const std::filesystem::path& path,
                                  std::uint64_t seed) {
  const diffnet::CheckpointData data = diffnet::read_checkpoint(path);
  const std::string alg = data.meta.value("algorithm", "");
  if (alg == "sac") {
    auto agent = std::make_unique<SacAgent>(
        sac_config_from_json(data.meta.at("config")), seed);
    agent->load(path);
    return agent;
  }
  if (alg == "ddpg") {
    auto agent = std::make_unique<DdpgAgent>(
        ddpg_config_from_json(data.meta.at("config")), seed);
    agent->load(path);
    return agent;
  }
  throw std::runtime_error("checkpoint metadata names no known algorithm");
}

}  // namespace drivesac::agents
