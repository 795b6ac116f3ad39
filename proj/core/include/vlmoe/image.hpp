// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vlmoe {

// Row-major H x W x C image of 64-bit values. Rendered scenes hold integer
// values in [0, 255]; edited images may carry fractional values.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> px;

  Image() = default;
  Image(int h, int w, int c = 3)
      : height(h), width(w), channels(c),
        px(static_cast<std::size_t>(h) * w * c, 0.0) {}

  double& at(int y, int x, int ch) {
    return px[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  double at(int y, int x, int ch) const {
    return px[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  std::size_t size() const { return px.size(); }
  bool in_bounds(int y, int x) const {
    return y >= 0 && y < height && x >= 0 && x < width;
  }
};

// Flat numeric array container:
//   magic "VIMG" | u32 version | u32 height | u32 width | u32 channels |
//   f64 data, row-major, little endian
void save_image(const Image& img, const std::string& path);
Image load_image(const std::string& path);

}  // namespace vlmoe
