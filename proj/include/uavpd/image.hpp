#pragma once

#include <filesystem>

#include "uavpd/tensor.hpp"

namespace uavpd {

// Images are HWC float tensors. Canonical pipeline images live in [-1,1];
// textures and patches in [0,1]. Conversion happens at the patch application
// site only.

// Decodes any OpenCV-readable file to RGB in [0,1]. Throws IoError.
Tensor load_image_rgb01(const std::filesystem::path& path);

// Lossless 16-bit PNG. Input must be in [0,1].
void save_image_rgb01(const std::filesystem::path& path, const Tensor& img);

Tensor resize_image_bilinear(const Tensor& hwc, int out_h, int out_w);
Tensor center_crop_square(const Tensor& hwc);

inline Tensor canonical_from_01(const Tensor& img01) {
  Tensor out = img01;
  for (auto& v : out.vec()) v = 2.0f * v - 1.0f;
  return out;
}
inline Tensor img01_from_canonical(const Tensor& img) {
  Tensor out = img;
  for (auto& v : out.vec()) v = 0.5f * (v + 1.0f);
  return out;
}

}  // namespace uavpd
