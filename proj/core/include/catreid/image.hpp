// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace catreid {

// Interleaved RGB, 8 bits per channel. Row-major, no padding.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // size = width * height * 3

  ImageU8() = default;
  ImageU8(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool empty() const { return pixels.empty(); }
};

// Planar CHW float image, values nominally in [0,1] until normalization.
struct ImageF {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // size = 3 * width * height, channel-major

  ImageF() = default;
  ImageF(int w, int h, float fill = 0.f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(width) * height; }
  float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const {
    return data[c * plane() + static_cast<std::size_t>(y) * width + x];
  }
};

inline ImageF to_float(const ImageU8& img) {
  ImageF out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = img.at(x, y, c) / 255.f;
  return out;
}

inline ImageU8 to_u8(const ImageF& img) {
  ImageU8 out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255.f));
      }
  return out;
}

}  // namespace catreid
