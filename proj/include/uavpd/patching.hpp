#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uavpd/autodiff.hpp"
#include "uavpd/datasets.hpp"
#include "uavpd/rng.hpp"
#include "uavpd/types.hpp"

namespace uavpd {

enum class PatchSourceKind { Gray, Random, Texture, Adversarial };

std::string to_string(PatchSourceKind k);
PatchSourceKind patch_source_from_string(const std::string& s);

struct Patch {
  Tensor pixels;  // s0 x s0 x 3 in [0,1]
  PatchSourceKind source = PatchSourceKind::Gray;
  std::string id;
};

// One concrete draw of the stochastic patch transformations. All fields are
// drawn independently and uniformly from their configured ranges.
struct TransformSample {
  bool flip_h = false;
  bool flip_v = false;
  float hue_shift = 0.0f;     // fraction of the hue circle
  float contrast = 1.0f;
  float saturation = 1.0f;
  float brightness = 0.0f;
  Tensor noise;               // s x s x 3 additive field; empty means zero
  float rotation_deg = 0.0f;
  float scale_frac = 0.2f;    // patch area as a fraction of the box area
  float off_u = 0.5f;         // fractional placement among valid positions
  float off_v = 0.5f;

  static TransformSample identity() { return {}; }
};

struct TransformRanges {
  float hue = 0.08f;
  float contrast_min = 0.5f, contrast_max = 1.5f;
  float saturation_min = 0.5f, saturation_max = 1.5f;
  float brightness = 0.3f;
  float noise = 0.1f;
  float rotation_deg = 20.0f;
  float scale_min = 0.15f, scale_max = 0.35f;
  float scale_eval = 0.20f;
};

enum class PatchMode { Train, Eval };

// Eval mode fixes the patch area at scale_eval and centers the placement but
// keeps all photometric and geometric draws.
TransformSample sample_transform(Rng& rng, PatchMode mode, int noise_side,
                                 const TransformRanges& ranges = {});

// floor(sqrt(scale_frac * w * h)); 0 means "skip this object" (side < 2 or
// side exceeding min(w, h)).
int patch_size_for(const BoundingBox& box, double scale_frac);

// Applies flips, hue rotation, saturation, contrast, brightness, per-pixel
// noise, a single clamp to [0,1], bilinear resize to target_side and rotation
// (in that order). The mask marks pixels inside the rotated footprint.
std::pair<ad::Var, Tensor> apply_transform(const ad::Var& patch01, const TransformSample& t,
                                           int target_side);

// Integer placement of a side x side footprint inside the box interior at the
// fractional offset. Throws ContractViolation when the footprint cannot fit.
std::pair<int, int> patch_placement(const BoundingBox& box, int side, float off_u, float off_v);

// Writes the transformed grid (converted to [-1,1]) over the image where
// mask == 1; everything else stays bit-identical.
ad::Var place_patch(const ad::Var& image, const ad::Var& grid01, const Tensor& mask,
                    const BoundingBox& box, float off_u, float off_v);

struct PatchApplication {
  int ann_index = -1;
  TransformSample transform;
  int side = 0;
  int y0 = 0, x0 = 0;
  Tensor mask;  // side x side footprint validity
};

// Patch source for patch_objects: a fixed patch, fresh textures, gray or
// fresh uniform noise per object.
struct ObjectPatchSource {
  PatchSourceKind kind = PatchSourceKind::Gray;
  const Patch* fixed = nullptr;
  const TextureBank* textures = nullptr;
  int side = 64;

  static ObjectPatchSource gray(int side = 64) { return {PatchSourceKind::Gray, nullptr, nullptr, side}; }
  static ObjectPatchSource random(int side = 64) { return {PatchSourceKind::Random, nullptr, nullptr, side}; }
  static ObjectPatchSource texture(const TextureBank& bank, int side = 64) {
    return {PatchSourceKind::Texture, nullptr, &bank, side};
  }
  static ObjectPatchSource fixed_patch(const Patch& p) {
    return {p.source, &p, nullptr, p.pixels.dim(0)};
  }
};

struct PatchedSample {
  ImageSample sample;
  std::vector<PatchApplication> applications;
  int skipped_objects = 0;
};

// One independent transform draw per non-ignored annotation; objects too
// small to host a patch are skipped and counted.
PatchedSample patch_objects(const ImageSample& sample, const ObjectPatchSource& source, Rng& rng,
                            PatchMode mode, const TransformRanges& ranges = {});

// Differentiable variant for the attack: gradients flow into patch01.
struct PatchedVar {
  ad::Var image;  // HWC, [-1,1]
  std::vector<PatchApplication> applications;
  int skipped_objects = 0;
};
PatchedVar patch_objects_var(const ImageSample& sample, const ad::Var& patch01, Rng& rng,
                             PatchMode mode, const TransformRanges& ranges = {});

// Patch artifact: lossless image plus a JSON sidecar with provenance.
void save_patch(const std::filesystem::path& png_path, const Patch& patch,
                const std::string& sidecar_json);
Patch load_patch(const std::filesystem::path& png_path);

}  // namespace uavpd
