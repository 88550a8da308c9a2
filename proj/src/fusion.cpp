#include "drivesac/fusion.hpp"

#include <cassert>
#include <span>
#include <stdexcept>

namespace drivesac::fusion {

using namespace diffnet;

FusionEncoder::FusionEncoder(ParamStore& store, const std::string& prefix,
                             const EncoderConfig& cfg, RandomStream* rng)
    : cfg_(cfg) {
  if (cfg.image_h < 8 || cfg.image_w < 8)
    throw std::invalid_argument("image too small for three stride-2 blocks");
  int c = 1, h = cfg.image_h, w = cfg.image_w;
  for (int i = 0; i < 3; ++i) {
    auto block = std::make_unique<ResidualBlock>(
        store, prefix + "/image/block" + std::to_string(i + 1), c, cfg.channels[i],
        h, w, 2, rng);
    const Shape& out = block->output_shape();
    c = out.dims[0];
    h = out.dims[1];
    w = out.dims[2];
    image_stack_.add(std::move(block));
    image_stack_.add(std::make_unique<ReLU>(Shape{c, h, w}));
  }
  const int flat = c * h * w;
  image_stack_.add(std::make_unique<Flatten>(Shape{c, h, w}));
  image_stack_.add(std::make_unique<Dense>(store, prefix + "/image/fc", flat,
                                           kImageFeatures, rng));
  image_stack_.add(std::make_unique<ReLU>(Shape{kImageFeatures}));

  track_stack_.add(std::make_unique<Dense>(store, prefix + "/track/fc",
                                           kTrackingDim, kTrackFeatures, rng));
  track_stack_.add(std::make_unique<ReLU>(Shape{kTrackFeatures}));

  assert(image_stack_.output_shape().count() == kImageFeatures);
  assert(track_stack_.output_shape().count() == kTrackFeatures);
}

const double* FusionEncoder::forward(const double* image, const double* track,
                                     int B) {
  const double* img_feat = image_stack_.forward(image, B);
  const double* trk_feat = track_stack_.forward(track, B);
  assert(image_stack_.output_shape().count() == kImageFeatures);
  assert(track_stack_.output_shape().count() == kTrackFeatures);
  out_.resize((long)kStateFeatures * B);
  concat_rows(img_feat, kImageFeatures, trk_feat, kTrackFeatures, out_.data(), B);
  return out_.data();
}

void FusionEncoder::backward(const double* g_state, double* g_image,
                             double* g_track, int B, bool with_param_grads) {
  g_img_feat_.resize((long)kImageFeatures * B);
  g_trk_feat_.resize((long)kTrackFeatures * B);
  split_rows(g_state, kImageFeatures, kTrackFeatures, g_img_feat_.data(),
             g_trk_feat_.data(), B);
  image_stack_.backward(g_img_feat_.data(), g_image, B, with_param_grads);
  track_stack_.backward(g_trk_feat_.data(), g_track, B, with_param_grads);
}

std::vector<double> FusionEncoder::encode(const Observation& obs) {
  if (obs.h != cfg_.image_h || obs.w != cfg_.image_w ||
      (long)obs.image.size() != (long)obs.h * obs.w)
    throw std::invalid_argument("observation image dimensions do not match encoder");
  const Observation* one[] = {&obs};
  pack_observations(std::span<const Observation* const>(one), img_buf_, trk_buf_);
  const double* y = forward(img_buf_.data(), trk_buf_.data(), 1);
  std::vector<double> out(y, y + kStateFeatures);
  assert((int)out.size() == kStateFeatures);
  return out;
}

std::vector<double> FusionEncoder::encode_with_action(const Observation& obs,
                                                      double throttle,
                                                      double steer) {
  if (throttle < 0.0 || throttle > 1.0 || steer < -1.0 || steer > 1.0)
    throw std::invalid_argument("action outside [0,1]x[-1,1]");
  std::vector<double> out = encode(obs);
  out.push_back(throttle);
  out.push_back(steer);
  assert((int)out.size() == kStateActionFeatures);
  return out;
}

}  // namespace drivesac::fusion
