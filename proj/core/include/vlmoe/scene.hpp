// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vlmoe/image.hpp"

namespace vlmoe {

// Axis-aligned box, pixel coordinates, x1 < x2 and y1 < y2.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double area() const { return (x2 - x1) * (y2 - y1); }
};

// intersection / union; degenerate boxes score 0 against everything
double iou(const BBox& a, const BBox& b);

// Integer pixel rectangle, end-exclusive. Object footprints are integer
// aligned; BBox is the continuous view used by metrics.
struct PixelRect {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int w() const { return x2 - x1; }
  int h() const { return y2 - y1; }
  BBox to_bbox() const {
    return {static_cast<double>(x1), static_cast<double>(y1),
            static_cast<double>(x2), static_cast<double>(y2)};
  }
};

// 3x3 position grid over the image, equal thirds: "top left", "top", ...
extern const std::array<std::string, 9> kCellNames;
std::string cell_of_point(double cx, double cy, int image_size);
int cell_index(const std::string& name);
// centers of the nine cells, in cell_index order
std::pair<double, double> cell_center(int cell, int image_size);

struct ObjectInstance {
  std::string class_name;
  PixelRect bbox;
  // h x w within bbox, row-major; true marks object pixels
  std::vector<uint8_t> mask;
  std::string color_attr;
  std::string position_phrase;

  bool mask_at(int y, int x) const {  // bbox-local coordinates
    return mask[static_cast<std::size_t>(y) * bbox.w() + x] != 0;
  }
};

struct SceneAnnotation {
  std::string id;
  std::string background_class;
  uint64_t seed = 0;
  Image image;
  std::vector<ObjectInstance> objects;

  std::map<std::string, int> class_counts() const;
  int count_class(const std::string& class_name) const;
};

// Recomputes the position phrase from the bbox center.
std::string derive_position_phrase(const PixelRect& bbox, int image_size);

// Counts visible objects of a class by mask inspection: an object counts as
// visible when its mask pixels are non-zero in the image. Used as the
// independent recount oracle after cutout.
int recount_visible(const SceneAnnotation& scene, const std::string& class_name);

}  // namespace vlmoe
