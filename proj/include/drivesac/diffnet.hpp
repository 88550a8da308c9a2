#pragma once

#include <deque>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "drivesac/kernels.hpp"
#include "drivesac/rng.hpp"
#include "json.hpp"

// Minimal reverse-mode network core over a fixed set of layer kinds. All
// tensors are 64-bit reals in batch-inner layout (see kernels.hpp). Layers are
// stateless; a Stack owns every activation and scratch buffer, so backward can
// replay the exact forward values. Backward overwrites gradients, never
// accumulates, and a second backward without a fresh forward is rejected.

namespace drivesac::diffnet {

struct Shape {
  std::vector<int> dims;  // {features} or {channels, height, width}

  Shape() = default;
  Shape(std::initializer_list<int> d) : dims(d) {}

  long count() const {
    long n = 1;
    for (int d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }
  bool operator==(const Shape& o) const { return dims == o.dims; }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const;
};

struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool grad_set = false;
};

// Named parameter arrays with deterministic (creation) iteration order.
class ParamStore {
 public:
  Param& create(const std::string& name, Shape shape);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<Param*>& all() { return order_; }
  std::vector<const Param*> all() const;
  long total_count() const;
  void clear_grads();  // zeroes gradient arrays and resets grad_set

 private:
  std::deque<Param> storage_;  // stable addresses
  std::vector<Param*> order_;
  std::unordered_map<std::string, Param*> index_;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  virtual const Shape& input_shape() const = 0;
  virtual const Shape& output_shape() const = 0;
  // Extra doubles forward must record (beyond x and y) for backward's use.
  virtual long scratch_count(int B) const {
    (void)B;
    return 0;
  }
  virtual void forward(const double* x, double* y, double* scratch, int B) = 0;
  // gy is the upstream gradient; gx receives d(loss)/d(input) and may be null
  // when the caller does not need it. scratch holds what forward recorded and
  // may be reused as workspace. Parameter gradients are written only when
  // with_param_grads is set.
  virtual void backward(const double* x, const double* y, double* scratch,
                        const double* gy, double* gx, int B,
                        bool with_param_grads) = 0;
};

class Dense : public Layer {
 public:
  // Creates <name>/w [out,in] and <name>/b [out] in the store. With an rng,
  // weights are uniform in +-sqrt(6/(fan_in+fan_out)) and biases zero.
  Dense(ParamStore& store, const std::string& name, int in, int out,
        RandomStream* rng);
  const char* kind() const override { return "dense"; }
  const Shape& input_shape() const override { return in_shape_; }
  const Shape& output_shape() const override { return out_shape_; }
  void forward(const double* x, double* y, double* scratch, int B) override;
  void backward(const double* x, const double* y, double* scratch,
                const double* gy, double* gx, int B,
                bool with_param_grads) override;

 private:
  Param* w_;
  Param* b_;
  Shape in_shape_, out_shape_;
};

class Conv2d : public Layer {
 public:
  // Geometry per kernels::ConvShape; creates <name>/w [cout,cin,k,k] and
  // <name>/b [cout].
  Conv2d(ParamStore& store, const std::string& name, kernels::ConvShape geom,
         RandomStream* rng);
  const char* kind() const override { return "conv2d"; }
  const Shape& input_shape() const override { return in_shape_; }
  const Shape& output_shape() const override { return out_shape_; }
  void forward(const double* x, double* y, double* scratch, int B) override;
  void backward(const double* x, const double* y, double* scratch,
                const double* gy, double* gx, int B,
                bool with_param_grads) override;

 private:
  Param* w_;
  Param* b_;
  kernels::ConvShape geom_;
  Shape in_shape_, out_shape_;
};

class ReLU : public Layer {
 public:
  explicit ReLU(Shape shape) : shape_(std::move(shape)) {}
  const char* kind() const override { return "relu"; }
  const Shape& input_shape() const override { return shape_; }
  const Shape& output_shape() const override { return shape_; }
  void forward(const double* x, double* y, double* scratch, int B) override;
  void backward(const double* x, const double* y, double* scratch,
                const double* gy, double* gx, int B,
                bool with_param_grads) override;

 private:
  Shape shape_;
};

class Tanh : public Layer {
 public:
  explicit Tanh(Shape shape) : shape_(std::move(shape)) {}
  const char* kind() const override { return "tanh"; }
  const Shape& input_shape() const override { return shape_; }
  const Shape& output_shape() const override { return shape_; }
  void forward(const double* x, double* y, double* scratch, int B) override;
  void backward(const double* x, const double* y, double* scratch,
                const double* gy, double* gx, int B,
                bool with_param_grads) override;

 private:
  Shape shape_;
};

// Shape reinterpretation only; under batch-inner layout the bytes are already
// in flattened order, so both directions are copies.
class Flatten : public Layer {
 public:
  explicit Flatten(Shape in) : in_shape_(std::move(in)), out_shape_{(int)in_shape_.count()} {}
  const char* kind() const override { return "flatten"; }
  const Shape& input_shape() const override { return in_shape_; }
  const Shape& output_shape() const override { return out_shape_; }
  void forward(const double* x, double* y, double* scratch, int B) override;
  void backward(const double* x, const double* y, double* scratch,
                const double* gy, double* gx, int B,
                bool with_param_grads) override;

 private:
  Shape in_shape_, out_shape_;
};

// conv(3x3, stride s, pad 1) -> relu -> conv(3x3, stride 1, pad 1), summed
// with a 1x1 stride-s projection of the input. No activation after the sum,
// so output == conv-path + projection-path holds exactly.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(ParamStore& store, const std::string& name, int cin, int cout,
                int hin, int win, int stride, RandomStream* rng);
  const char* kind() const override { return "residual-block"; }
  const Shape& input_shape() const override { return in_shape_; }
  const Shape& output_shape() const override { return out_shape_; }
  long scratch_count(int B) const override;
  void forward(const double* x, double* y, double* scratch, int B) override;
  void backward(const double* x, const double* y, double* scratch,
                const double* gy, double* gx, int B,
                bool with_param_grads) override;

 private:
  std::unique_ptr<Conv2d> conv1_, conv2_, proj_;
  Shape in_shape_, out_shape_;
};

// A linear chain of layers plus the buffers forward records for backward.
class Stack {
 public:
  void add(std::unique_ptr<Layer> layer);  // rejects shape-incompatible chains
  bool empty() const { return layers_.empty(); }
  const Shape& input_shape() const;
  const Shape& output_shape() const;

  // Returns the output buffer, valid until the next forward. Two calls with
  // the same params and input yield bitwise-identical outputs.
  const double* forward(const double* x, int B);
  // gx may be null when the input gradient is not needed. Throws a state
  // error unless a forward is pending; consumes that forward.
  void backward(const double* gy, double* gx, int B, bool with_param_grads = true);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::vector<double>> acts_;     // acts_[0] = input copy
  std::vector<std::vector<double>> scratch_;  // per layer
  std::vector<double> grad_a_, grad_b_;       // ping-pong gradient buffers
  int forward_batch_ = -1;
  bool forward_pending_ = false;
};

// Feature-axis concatenation helpers for batch-inner buffers: rows of a, then
// rows of b.
void concat_rows(const double* a, long rows_a, const double* b, long rows_b,
                 double* y, int B);
void split_rows(const double* y, long rows_a, long rows_b, double* a, double* b,
                int B);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction over every parameter of a store, in
// creation order. step() requires every gradient slot populated and clears
// them afterwards.
class AdamState {
 public:
  AdamState(ParamStore& params, AdamConfig cfg);
  void step();
  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.lr = lr; }

 private:
  ParamStore* params_;
  AdamConfig cfg_;
  long t_ = 0;
  double b1pow_ = 1.0, b2pow_ = 1.0;  // beta^t, maintained multiplicatively
  std::vector<std::vector<double>> m_, v_;
};

// Max over all parameters of |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-12) for the scalar loss sum_j probe_j * output_j with a
// seeded probe vector; central differences with the given epsilon. Throws a
// numeric error on non-finite intermediates.
double finite_difference_check(Stack& net, ParamStore& params,
                               const std::vector<double>& input, int B,
                               double eps, std::uint64_t probe_seed = 17);

// Checkpoint format "v1": one file holding a little-endian u64 manifest
// length, a JSON manifest {format, meta, params:[{name, shape, offset}]}, and
// a blob of little-endian 64-bit reals in manifest order. Round-trips are
// bitwise exact.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const nlohmann::json& meta);

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> value;
};
struct CheckpointData {
  nlohmann::json meta;
  std::vector<CheckpointEntry> params;  // manifest order
};
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Strict load: the checkpoint's name set and shapes must match the store
// exactly; the error lists missing / unexpected / reshaped names.
void load_checkpoint(const std::filesystem::path& path, ParamStore& params);

}  // namespace drivesac::diffnet
