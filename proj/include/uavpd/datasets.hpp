#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uavpd/rng.hpp"
#include "uavpd/types.hpp"

namespace uavpd {

// VisDrone annotation line: left,top,width,height,score,category,truncation,occlusion.
// Categories absent from class_map become ignore regions; zero-size boxes are
// dropped. Throws ParseError naming the offending line.
std::vector<Annotation> load_annotations(const std::filesystem::path& path,
                                         const std::map<int, int>& class_map);

// Default VisDrone category -> class-id map for {Car, Van, Bus, Truck}.
std::map<int, int> default_visdrone_class_map();

// Removes annotations whose area fraction (relative to the pre-resize image
// area) is strictly below min_frac; drops images left without any non-ignored
// annotation. Idempotent.
std::vector<ImageSample> filter_small_objects(std::vector<ImageSample> samples,
                                              double min_frac = 0.001);

struct TextureBank {
  std::vector<Tensor> textures;  // square, [0,1], side >= 64
  std::vector<std::string> ids;
  bool empty() const { return textures.empty(); }
  size_t size() const { return textures.size(); }
};

// Recursively loads every readable image under dir (sorted by path), center-
// cropped square and upscaled to at least 64 px. Throws ConfigError when no
// readable image is found.
TextureBank load_texture_bank(const std::filesystem::path& dir);

struct ToySceneConfig {
  int canvas = 96;
  int n_objects_min = 2;
  int n_objects_max = 5;
  double area_frac_min = 0.006;  // must stay above the dataset filter threshold
  double area_frac_max = 0.030;
  int n_classes = 4;
  int background_style = 0;  // 0 speckle, 1 coarse blocks, 2 gradient
  double min_area_filter = 0.001;
  // Per-class body colors and length/width aspect ratios; defaults cover the
  // standard vehicle palette.
  std::vector<std::array<float, 3>> palette = {
      {0.82f, 0.12f, 0.10f}, {0.15f, 0.30f, 0.85f}, {0.95f, 0.78f, 0.10f}, {0.10f, 0.65f, 0.25f}};
  std::vector<float> aspects = {2.0f, 1.45f, 3.3f, 2.6f};
};

// Deterministic synthetic top-down scene; annotation boxes exactly bound the
// rendered rectangles. Throws ConfigError when the size range can produce
// objects below min_area_filter.
ImageSample generate_toy_scene(uint64_t seed, const ToySceneConfig& cfg);

// Resize to target_size x target_size (bilinear), map [0,255] -> [-1,1] via
// v/127.5 - 1, rescale and clip boxes, keep the original size.
ImageSample to_canonical(const Tensor& raw_hwc_255, std::vector<Annotation> annotations,
                         int target_size, std::string source_id);

// On-disk dataset layout: <root>/images/*.png + <root>/annotations/*.txt with
// matching stems, VisDrone text format.
void save_sample(const std::filesystem::path& root, const ImageSample& sample,
                 const std::map<int, int>& class_map);
std::vector<ImageSample> load_dataset_dir(const std::filesystem::path& root,
                                          const std::map<int, int>& class_map, int input_size);

// Procedural texture images for the toy texture bank (checkers, stripes,
// value noise, gradients, dots), written as PNG files.
void write_procedural_textures(const std::filesystem::path& dir, int count, int side,
                               uint64_t seed);

}  // namespace uavpd
