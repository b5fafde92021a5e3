#pragma once

#include <algorithm>

namespace uavpd {

struct BoundingBox {
  float x = 0.0f;  // left
  float y = 0.0f;  // top
  float w = 0.0f;
  float h = 0.0f;

  float x2() const { return x + w; }
  float y2() const { return y + h; }
  float area() const { return w * h; }
  bool valid() const { return w > 0.0f && h > 0.0f; }
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  float ix = std::max(a.x, b.x);
  float iy = std::max(a.y, b.y);
  float ix2 = std::min(a.x2(), b.x2());
  float iy2 = std::min(a.y2(), b.y2());
  float iw = ix2 - ix, ih = iy2 - iy;
  if (iw <= 0.0f || ih <= 0.0f) return 0.0;
  double inter = double(iw) * ih;
  double uni = double(a.area()) + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline BoundingBox clip_box(const BoundingBox& b, float width, float height) {
  float x1 = std::clamp(b.x, 0.0f, width);
  float y1 = std::clamp(b.y, 0.0f, height);
  float x2 = std::clamp(b.x2(), 0.0f, width);
  float y2 = std::clamp(b.y2(), 0.0f, height);
  return {x1, y1, x2 - x1, y2 - y1};
}

}  // namespace uavpd
