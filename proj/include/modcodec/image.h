#pragma once

#include <cstdint>
#include <vector>

#include "modcodec/common.h"

namespace modcodec {

// One plane of signed 32-bit samples. hshift/vshift record how far the plane
// has been downsampled relative to the image grid.
struct Channel {
  uint32_t width = 0;
  uint32_t height = 0;
  int hshift = 0;
  int vshift = 0;
  std::vector<int32_t> samples;

  Channel() = default;
  Channel(uint32_t w, uint32_t h, int hs = 0, int vs = 0)
      : width(w), height(h), hshift(hs), vshift(vs),
        samples(size_t(w) * h, 0) {}

  int32_t* row(uint32_t y) { return samples.data() + size_t(y) * width; }
  const int32_t* row(uint32_t y) const {
    return samples.data() + size_t(y) * width;
  }
  int32_t at(uint32_t x, uint32_t y) const {
    return samples[size_t(y) * width + x];
  }
  int32_t& at(uint32_t x, uint32_t y) {
    return samples[size_t(y) * width + x];
  }
};

// A stack of channels. The first nb_meta_channels entries hold transform
// metadata (palettes) rather than pixels and always code before the rest.
struct Image {
  uint32_t width = 0;
  uint32_t height = 0;
  uint32_t bit_depth = 8;
  uint32_t nb_meta_channels = 0;
  std::vector<Channel> channels;
};

}  // namespace modcodec
