#pragma once

#include <array>
#include <vector>

// What the vehicle senses each step: a grayscale forward view and the raw
// tracking vector. Shared by the simulator (producer) and the encoder
// (consumer).

namespace drivesac {

inline constexpr int kTrackingDim = 8;

struct Observation {
  int h = 64, w = 64;
  std::vector<double> image;                    // h*w row-major, values in [0,1]
  std::array<double, kTrackingDim> tracking{};  // see drivesim's observe()
};

// Gather per-sample observations into batch-inner buffers: image pixels become
// h*w feature rows of width B, tracking becomes 8 rows of width B.
template <typename ObsPtrRange>
void pack_observations(const ObsPtrRange& batch, std::vector<double>& image_buf,
                       std::vector<double>& track_buf) {
  const int B = (int)batch.size();
  const Observation& first = *batch[0];
  const long pixels = (long)first.h * first.w;
  image_buf.resize(pixels * B);
  track_buf.resize((long)kTrackingDim * B);
  for (int b = 0; b < B; ++b) {
    const Observation& o = *batch[b];
    for (long p = 0; p < pixels; ++p) image_buf[p * B + b] = o.image[p];
    for (int t = 0; t < kTrackingDim; ++t) track_buf[(long)t * B + b] = o.tracking[t];
  }
}

}  // namespace drivesac
