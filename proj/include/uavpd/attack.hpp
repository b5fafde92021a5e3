#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "uavpd/detector.hpp"
#include "uavpd/patching.hpp"

namespace uavpd {

struct PrintableColorSet {
  std::vector<std::array<float, 3>> colors;

  // File format: one "r,g,b" line per color, components in [0,1].
  static PrintableColorSet load(const std::filesystem::path& path);
  // Black, white and the RGB/CMY primaries; enough for desk-scale runs.
  static PrintableColorSet basic();
};

enum class LrSchedule { Constant, Cosine };

// Plain gradient descent is the default; sign / normalized steps are
// available because the downscaling that maps the stored patch onto small
// objects dilutes raw gradient magnitudes.
enum class GradMode { Plain, Sign, Normalized };

struct AttackConfig {
  int patch_side = 64;
  int steps = 600;
  int batch_size = 6;
  float learning_rate = 0.05f;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  GradMode grad_mode = GradMode::Plain;
  float weight_nps = 0.01f;
  float weight_tv = 2.5f;
  TransformRanges ranges;  // scale range [0.15, 0.35] during optimization
  uint64_t seed = 5;
  bool normalized_losses = true;  // raw sums behind this flag
};

// Mean over pixels (or raw sum) of the minimum Euclidean RGB distance to the
// printable set.
double nps(const Patch& patch, const PrintableColorSet& colors, bool normalized = true);
// Anisotropic total variation, normalized by pixel count by default.
double total_variation(const Patch& patch, bool normalized = true);

// Mean over all non-ignored objects of the detector's maximum confidence
// attributable to each object. Errors when the batch holds no target object.
double detection_score(const DetectorContract& det, const std::vector<ImageSample>& patched_batch);

struct LossTraceRow {
  int step = 0;
  float total = 0.0f, score = 0.0f, nps = 0.0f, tv = 0.0f;
  float lr = 0.0f;
};

struct AttackResult {
  Patch patch;
  std::vector<LossTraceRow> trace;
};

// Gradient-descent patch optimization against the detector through the
// stochastic application pipeline; the patch is projected back to [0,1]
// after every step.
AttackResult optimize_patch(const DetectorContract& det, const std::vector<ImageSample>& dataset,
                            const AttackConfig& cfg, const PrintableColorSet& colors,
                            const std::function<void(int, const LossTraceRow&)>& progress = {});

void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<LossTraceRow>& rows);

}  // namespace uavpd
