#pragma once

#include <array>
#include <string>
#include <vector>

#include "drivesac/diffnet.hpp"
#include "drivesac/observation.hpp"

// Dual-branch sensor-fusion encoder. The image branch stacks three stride-2
// residual blocks (channels 4 -> 8 -> 16), flattens, and maps to 100
// features; the tracking branch maps the 8 raw scalars to 16 features. The
// state representation is the concatenation, image features first: 116 reals,
// or 118 with the action appended.

namespace drivesac::fusion {

inline constexpr int kImageFeatures = 100;
inline constexpr int kTrackFeatures = 16;
inline constexpr int kStateFeatures = kImageFeatures + kTrackFeatures;  // 116
inline constexpr int kStateActionFeatures = kStateFeatures + 2;         // 118

struct EncoderConfig {
  int image_h = 64, image_w = 64;
  std::array<int, 3> channels = {4, 8, 16};
};

class FusionEncoder {
 public:
  // Creates parameters under <prefix>/image/... and <prefix>/track/....
  FusionEncoder(diffnet::ParamStore& store, const std::string& prefix,
                const EncoderConfig& cfg, RandomStream* rng);

  const EncoderConfig& config() const { return cfg_; }

  // Batched forward over batch-inner buffers: image has h*w rows, track has 8
  // rows, the result (valid until the next forward) has 116 rows.
  const double* forward(const double* image, const double* track, int B);
  // g_state has 116 rows; either input gradient may be null.
  void backward(const double* g_state, double* g_image, double* g_track, int B,
                bool with_param_grads = true);

  // Single-observation conveniences.
  std::vector<double> encode(const Observation& obs);
  std::vector<double> encode_with_action(const Observation& obs, double throttle,
                                         double steer);

 private:
  EncoderConfig cfg_;
  diffnet::Stack image_stack_, track_stack_;
  std::vector<double> out_;
  std::vector<double> g_img_feat_, g_trk_feat_;
  std::vector<double> img_buf_, trk_buf_;
};

}  // namespace drivesac::fusion
