// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/scene.hpp"

#include <algorithm>

#include "vlmoe/errors.hpp"

namespace vlmoe {

double iou(const BBox& a, const BBox& b) {
  if (a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2)
    return 1.0;  // identical boxes, degenerate ones included
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

const std::array<std::string, 9> kCellNames = {
    "top left", "top",    "top right", "left",        "center",
    "right",    "bottom left", "bottom", "bottom right"};

std::string cell_of_point(double cx, double cy, int image_size) {
  const double third = image_size / 3.0;
  int col = std::min(2, static_cast<int>(cx / third));
  int row = std::min(2, static_cast<int>(cy / third));
  return kCellNames[static_cast<std::size_t>(row * 3 + col)];
}

int cell_index(const std::string& name) {
  for (int i = 0; i < 9; ++i)
    if (kCellNames[static_cast<std::size_t>(i)] == name) return i;
  throw ValueError("unknown grid cell: " + name);
}

std::pair<double, double> cell_center(int cell, int image_size) {
  const double third = image_size / 3.0;
  const int row = cell / 3, col = cell % 3;
  return {(col + 0.5) * third, (row + 0.5) * third};
}

std::string derive_position_phrase(const PixelRect& bbox, int image_size) {
  return cell_of_point(0.5 * (bbox.x1 + bbox.x2), 0.5 * (bbox.y1 + bbox.y2),
                       image_size);
}

std::map<std::string, int> SceneAnnotation::class_counts() const {
  std::map<std::string, int> counts;
  for (const auto& obj : objects) ++counts[obj.class_name];
  return counts;
}

int SceneAnnotation::count_class(const std::string& class_name) const {
  int n = 0;
  for (const auto& obj : objects)
    if (obj.class_name == class_name) ++n;
  return n;
}

int recount_visible(const SceneAnnotation& scene,
                    const std::string& class_name) {
  int n = 0;
  for (const auto& obj : scene.objects) {
    if (obj.class_name != class_name) continue;
    bool visible = false;
    for (int y = 0; y < obj.bbox.h() && !visible; ++y) {
      for (int x = 0; x < obj.bbox.w() && !visible; ++x) {
        if (!obj.mask_at(y, x)) continue;
        for (int ch = 0; ch < scene.image.channels; ++ch) {
          if (scene.image.at(obj.bbox.y1 + y, obj.bbox.x1 + x, ch) != 0.0) {
            visible = true;
            break;
          }
        }
      }
    }
    if (visible) ++n;
  }
  return n;
}

}  // namespace vlmoe
