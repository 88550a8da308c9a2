#include "drivesac/diffnet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace drivesac::diffnet {

using kernels::active;

std::string Shape::str() const {
  std::string s;
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(dims[i]);
  }
  return s.empty() ? "(empty)" : s;
}

Param& ParamStore::create(const std::string& name, Shape shape) {
  if (index_.count(name))
    throw std::invalid_argument("parameter already exists: " + name);
  if (shape.count() <= 0)
    throw std::invalid_argument("parameter " + name + " has empty shape " + shape.str());
  storage_.push_back(Param{name, std::move(shape), {}, {}, false});
  Param& p = storage_.back();
  p.value.assign(p.shape.count(), 0.0);
  p.grad.assign(p.shape.count(), 0.0);
  order_.push_back(&p);
  index_.emplace(name, &p);
  return p;
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
  return *it->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
  return *it->second;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) != 0; }

std::vector<const Param*> ParamStore::all() const {
  return {order_.begin(), order_.end()};
}

long ParamStore::total_count() const {
  long n = 0;
  for (const Param* p : order_) n += p->shape.count();
  return n;
}

void ParamStore::clear_grads() {
  for (Param* p : order_) {
    std::fill(p->grad.begin(), p->grad.end(), 0.0);
    p->grad_set = false;
  }
}

namespace {

void xavier_init(Param& w, long fan_in, long fan_out, RandomStream* rng) {
  if (!rng) return;
  const double limit = std::sqrt(6.0 / (double)(fan_in + fan_out));
  for (double& x : w.value) x = rng->uniform(-limit, limit);
}

}  // namespace

Dense::Dense(ParamStore& store, const std::string& name, int in, int out,
             RandomStream* rng)
    : in_shape_{in}, out_shape_{out} {
  if (in <= 0 || out <= 0)
    throw std::invalid_argument("dense " + name + " has non-positive width");
  w_ = &store.create(name + "/w", Shape{out, in});
  b_ = &store.create(name + "/b", Shape{out});
  xavier_init(*w_, in, out, rng);
}

void Dense::forward(const double* x, double* y, double*, int B) {
  active().dense_forward(w_->value.data(), b_->value.data(), x, y,
                         out_shape_.dims[0], in_shape_.dims[0], B);
}

void Dense::backward(const double* x, const double*, double*, const double* gy,
                     double* gx, int B, bool with_param_grads) {
  const int O = out_shape_.dims[0], I = in_shape_.dims[0];
  if (gx) active().dense_backward_input(w_->value.data(), gy, gx, O, I, B);
  if (with_param_grads) {
    active().dense_grad_params(x, gy, w_->grad.data(), b_->grad.data(), O, I, B);
    w_->grad_set = b_->grad_set = true;
  }
}

Conv2d::Conv2d(ParamStore& store, const std::string& name,
               kernels::ConvShape geom, RandomStream* rng)
    : geom_(geom),
      in_shape_{geom.cin, geom.hin, geom.win},
      out_shape_{geom.cout, geom.hout(), geom.wout()} {
  if (geom.cin <= 0 || geom.cout <= 0 || geom.k <= 0 || geom.stride <= 0 ||
      geom.hout() <= 0 || geom.wout() <= 0)
    throw std::invalid_argument("conv2d " + name + " has degenerate geometry");
  w_ = &store.create(name + "/w", Shape{geom.cout, geom.cin, geom.k, geom.k});
  b_ = &store.create(name + "/b", Shape{geom.cout});
  xavier_init(*w_, (long)geom.cin * geom.k * geom.k, (long)geom.cout * geom.k * geom.k, rng);
}

void Conv2d::forward(const double* x, double* y, double*, int B) {
  active().conv2d_forward(w_->value.data(), b_->value.data(), x, y, geom_, B);
}

void Conv2d::backward(const double* x, const double*, double*, const double* gy,
                      double* gx, int B, bool with_param_grads) {
  if (gx) active().conv2d_backward_input(w_->value.data(), gy, gx, geom_, B);
  if (with_param_grads) {
    active().conv2d_grad_params(x, gy, w_->grad.data(), b_->grad.data(), geom_, B);
    w_->grad_set = b_->grad_set = true;
  }
}

void ReLU::forward(const double* x, double* y, double*, int B) {
  active().relu_forward(x, y, (int)(shape_.count() * B));
}

void ReLU::backward(const double* x, const double*, double*, const double* gy,
                    double* gx, int B, bool) {
  if (gx) active().relu_backward(x, gy, gx, (int)(shape_.count() * B));
}

void Tanh::forward(const double* x, double* y, double*, int B) {
  const long n = shape_.count() * B;
  for (long i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void Tanh::backward(const double*, const double* y, double*, const double* gy,
                    double* gx, int B, bool) {
  if (!gx) return;
  const long n = shape_.count() * B;
  for (long i = 0; i < n; ++i) gx[i] = gy[i] * (1.0 - y[i] * y[i]);
}

void Flatten::forward(const double* x, double* y, double*, int B) {
  std::memcpy(y, x, sizeof(double) * in_shape_.count() * B);
}

void Flatten::backward(const double*, const double*, double*, const double* gy,
                       double* gx, int B, bool) {
  if (gx) std::memcpy(gx, gy, sizeof(double) * in_shape_.count() * B);
}

ResidualBlock::ResidualBlock(ParamStore& store, const std::string& name, int cin,
                             int cout, int hin, int win, int stride,
                             RandomStream* rng)
    : in_shape_{cin, hin, win} {
  conv1_ = std::make_unique<Conv2d>(
      store, name + "/conv1", kernels::ConvShape{cin, hin, win, cout, 3, stride, 1}, rng);
  const Shape mid = conv1_->output_shape();
  conv2_ = std::make_unique<Conv2d>(
      store, name + "/conv2",
      kernels::ConvShape{cout, mid.dims[1], mid.dims[2], cout, 3, 1, 1}, rng);
  proj_ = std::make_unique<Conv2d>(
      store, name + "/proj", kernels::ConvShape{cin, hin, win, cout, 1, stride, 0}, rng);
  out_shape_ = conv2_->output_shape();
  if (proj_->output_shape() != out_shape_)
    throw std::invalid_argument("residual-block " + name + " path shapes differ: " +
                                out_shape_.str() + " vs " + proj_->output_shape().str());
}

long ResidualBlock::scratch_count(int B) const {
  // y1 (conv1 out), r1 (relu out), one spare block, one input-sized block
  return 3 * out_shape_.count() * B + in_shape_.count() * B;
}

void ResidualBlock::forward(const double* x, double* y, double* scratch, int B) {
  const long n2 = out_shape_.count() * B;
  double* y1 = scratch;
  double* r1 = scratch + n2;
  double* p = scratch + 2 * n2;
  conv1_->forward(x, y1, nullptr, B);
  active().relu_forward(y1, r1, (int)n2);
  conv2_->forward(r1, y, nullptr, B);
  proj_->forward(x, p, nullptr, B);
  active().add(y, p, y, (int)n2);
}

void ResidualBlock::backward(const double* x, const double*, double* scratch,
                             const double* gy, double* gx, int B,
                             bool with_param_grads) {
  const long n2 = out_shape_.count() * B;
  double* y1 = scratch;
  double* r1 = scratch + n2;
  double* g_r1 = scratch + 2 * n2;  // overwrites the projection output
  double* g_in = scratch + 3 * n2;
  // conv path: gy -> conv2 -> relu -> conv1
  conv2_->backward(r1, nullptr, nullptr, gy, g_r1, B, with_param_grads);
  double* g_y1 = r1;  // conv2's input grad done; reuse r1's block
  active().relu_backward(y1, g_r1, g_y1, (int)n2);
  conv1_->backward(x, nullptr, nullptr, g_y1, gx, B, with_param_grads);
  // projection path adds into the input gradient
  proj_->backward(x, nullptr, nullptr, gy, gx ? g_in : nullptr, B, with_param_grads);
  if (gx) active().add(gx, g_in, gx, (int)(in_shape_.count() * B));
}

const Shape& Stack::input_shape() const {
  if (layers_.empty()) throw std::logic_error("empty stack has no input shape");
  return layers_.front()->input_shape();
}

const Shape& Stack::output_shape() const {
  if (layers_.empty()) throw std::logic_error("empty stack has no output shape");
  return layers_.back()->output_shape();
}

void Stack::add(std::unique_ptr<Layer> layer) {
  if (!layers_.empty() && layer->input_shape() != layers_.back()->output_shape())
    throw std::invalid_argument(std::string("layer ") + layer->kind() + " expects input " +
                                layer->input_shape().str() + " but previous layer yields " +
                                layers_.back()->output_shape().str());
  layers_.push_back(std::move(layer));
  acts_.resize(layers_.size() + 1);
  scratch_.resize(layers_.size());
}

const double* Stack::forward(const double* x, int B) {
  if (layers_.empty()) throw std::logic_error("forward on empty stack");
  if (B <= 0) throw std::invalid_argument("batch size must be positive");
  acts_[0].assign(x, x + input_shape().count() * B);
  for (size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = *layers_[i];
    acts_[i + 1].resize(l.output_shape().count() * B);
    scratch_[i].resize(l.scratch_count(B));
    l.forward(acts_[i].data(), acts_[i + 1].data(),
              scratch_[i].empty() ? nullptr : scratch_[i].data(), B);
  }
  forward_batch_ = B;
  forward_pending_ = true;
  return acts_.back().data();
}

void Stack::backward(const double* gy, double* gx, int B, bool with_param_grads) {
  if (!forward_pending_)
    throw std::logic_error("backward without a pending forward");
  if (B != forward_batch_)
    throw std::invalid_argument("backward batch differs from forward batch");
  const double* cur = gy;
  for (size_t i = layers_.size(); i-- > 0;) {
    Layer& l = *layers_[i];
    double* target = nullptr;
    if (i == 0) {
      target = gx;
    } else {
      std::vector<double>& buf = (i % 2 == 0) ? grad_a_ : grad_b_;
      buf.resize(l.input_shape().count() * B);
      target = buf.data();
    }
    l.backward(acts_[i].data(), acts_[i + 1].data(),
               scratch_[i].empty() ? nullptr : scratch_[i].data(), cur, target, B,
               with_param_grads);
    if (i == 0) break;
    if (!target) throw std::logic_error("missing gradient buffer");
    cur = target;
  }
  forward_pending_ = false;
}

void concat_rows(const double* a, long rows_a, const double* b, long rows_b,
                 double* y, int B) {
  std::memcpy(y, a, sizeof(double) * rows_a * B);
  std::memcpy(y + rows_a * B, b, sizeof(double) * rows_b * B);
}

void split_rows(const double* y, long rows_a, long rows_b, double* a, double* b,
                int B) {
  std::memcpy(a, y, sizeof(double) * rows_a * B);
  std::memcpy(b, y + rows_a * B, sizeof(double) * rows_b * B);
}

AdamState::AdamState(ParamStore& params, AdamConfig cfg)
    : params_(&params), cfg_(cfg) {
  for (Param* p : params.all()) {
    m_.emplace_back(p->shape.count(), 0.0);
    v_.emplace_back(p->shape.count(), 0.0);
  }
}

void AdamState::step() {
  const auto& order = params_->all();
  if (order.size() != m_.size())
    throw std::logic_error("parameter store changed size after Adam state creation");
  for (const Param* p : order)
    if (!p->grad_set)
      throw std::logic_error("adam step with missing gradient: " + p->name);
  ++t_;
  b1pow_ *= cfg_.beta1;
  b2pow_ *= cfg_.beta2;
  const double bc1 = 1.0 / (1.0 - b1pow_);
  const double bc2 = 1.0 / (1.0 - b2pow_);
  for (size_t i = 0; i < order.size(); ++i) {
    Param& p = *order[i];
    active().adam_step(p.value.data(), p.grad.data(), m_[i].data(), v_[i].data(),
                       (int)p.shape.count(), cfg_.lr, cfg_.beta1, cfg_.beta2,
                       cfg_.eps, bc1, bc2);
  }
  params_->clear_grads();
}

double finite_difference_check(Stack& net, ParamStore& params,
                               const std::vector<double>& input, int B,
                               double eps, std::uint64_t probe_seed) {
  if (eps <= 0.0) throw std::invalid_argument("epsilon must be positive");
  const long out_n = net.output_shape().count() * B;
  RandomStream rng(probe_seed);
  std::vector<double> probe(out_n);
  for (double& w : probe) w = rng.uniform(-1.0, 1.0);

  auto loss = [&]() {
    const double* y = net.forward(input.data(), B);
    double acc = 0.0;
    for (long j = 0; j < out_n; ++j) {
      if (!std::isfinite(y[j]))
        throw std::runtime_error("non-finite intermediate in finite-difference check");
      acc += probe[j] * y[j];
    }
    return acc;
  };

  const double l0 = loss();  // base value; also populates activations
  net.backward(probe.data(), nullptr, B, true);

  double max_rel = 0.0;
  for (Param* p : params.all()) {
    if (!p->grad_set)
      throw std::logic_error("gradient missing after backward: " + p->name);
    for (long j = 0; j < p->shape.count(); ++j) {
      const double orig = p->value[j];
      p->value[j] = orig + eps;
      const double lp = loss();
      p->value[j] = orig - eps;
      const double lm = loss();
      p->value[j] = orig;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw std::runtime_error("non-finite loss in finite-difference check");
      const double analytic = p->grad[j];
      // One-sided differences isolate the slopes on each side of the current
      // value. If they disagree, a relu kink sits inside the probed interval
      // and no central-difference estimate is valid there; skip the entry.
      // The test uses forward passes only, so a broken backward rule cannot
      // suppress its own detection.
      const double f_d = (lp - l0) / eps;
      const double b_d = (l0 - lm) / eps;
      const double scale =
          std::max({std::abs(f_d), std::abs(b_d), std::abs(analytic), 1e-12});
      if (std::abs(f_d - b_d) > 1e-4 * scale) continue;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["format"] = "v1";
  manifest["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
  manifest["params"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Param* p : params.all()) {
    manifest["params"].push_back(
        {{"name", p->name}, {"shape", p->shape.dims}, {"offset", offset}});
    offset += p->shape.count() * sizeof(double);
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), (std::streamsize)text.size());
  for (const Param* p : params.all())
    out.write(reinterpret_cast<const char*>(p->value.data()),
              (std::streamsize)(p->value.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (1ull << 32))
    throw std::runtime_error("corrupt checkpoint header: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), (std::streamsize)len);
  if (!in) throw std::runtime_error("corrupt checkpoint manifest: " + path.string());
  nlohmann::json manifest = nlohmann::json::parse(text);
  if (manifest.value("format", "") != "v1")
    throw std::runtime_error("unsupported checkpoint format in " + path.string());

  const std::streampos blob_start = in.tellg();
  CheckpointData data;
  data.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest["params"]) {
    CheckpointEntry e;
    e.name = entry.at("name").get<std::string>();
    e.shape.dims = entry.at("shape").get<std::vector<int>>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    e.value.resize(e.shape.count());
    in.seekg(blob_start + (std::streamoff)offset);
    in.read(reinterpret_cast<char*>(e.value.data()),
            (std::streamsize)(e.value.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint blob truncated: " + path.string());
    data.params.push_back(std::move(e));
  }
  return data;
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& params) {
  CheckpointData data = read_checkpoint(path);
  std::string missing, unexpected, reshaped;
  std::unordered_map<std::string, CheckpointEntry*> by_name;
  for (auto& e : data.params) by_name.emplace(e.name, &e);

  for (Param* p : params.all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      missing += " " + p->name;
    } else if (it->second->shape != p->shape) {
      reshaped += " " + p->name + "(" + p->shape.str() + " vs " +
                  it->second->shape.str() + ")";
    }
  }
  for (auto& e : data.params)
    if (!params.contains(e.name)) unexpected += " " + e.name;

  if (!missing.empty() || !unexpected.empty() || !reshaped.empty())
    throw std::invalid_argument(
        "checkpoint does not match network;" +
        (missing.empty() ? "" : " absent from checkpoint:" + missing) +
        (unexpected.empty() ? "" : " unexpected in checkpoint:" + unexpected) +
        (reshaped.empty() ? "" : " shape mismatch:" + reshaped));

  for (Param* p : params.all()) p->value = by_name.at(p->name)->value;
}

}  // namespace drivesac::diffnet
