#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uavpd/geometry.hpp"
#include "uavpd/tensor.hpp"

namespace uavpd {

struct ClassSet {
  std::vector<std::string> names;

  int size() const { return static_cast<int>(names.size()); }
  int id_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
  const std::string& name_of(int id) const { return names[static_cast<size_t>(id)]; }

  static ClassSet default_vehicles() { return {{"Car", "Van", "Bus", "Truck"}}; }
};

struct Annotation {
  BoundingBox box;
  int class_id = 0;
  // Ignore regions are excluded from patching, training losses and metrics
  // but kept so they do not distort images or absorb false positives.
  bool ignore = false;
};

struct ImageSample {
  Tensor image;  // HWC, values in [-1,1], H == W == canonical input size
  std::vector<Annotation> annotations;
  std::string source_id;
  std::pair<int, int> original_size{0, 0};  // (width, height) before resizing
};

struct Detection {
  BoundingBox box;
  int class_id = 0;
  float confidence = 0.0f;
};

inline int count_targets(const std::vector<Annotation>& anns) {
  int n = 0;
  for (const auto& a : anns)
    if (!a.ignore) ++n;
  return n;
}

}  // namespace uavpd
