#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uavpd/defense.hpp"
#include "uavpd/detector.hpp"
#include "uavpd/eval.hpp"
#include "uavpd/patching.hpp"

namespace uavpd {

// Evaluation of one attack x defense condition over a test set:
// [patch] -> [preprocess] -> detect, repeated `runs` times with fresh
// transform draws; ASR is measured against the undefended clean run.
struct ConditionSpec {
  std::string attack = "none";   // none | gray | random | adversarial
  std::string defense = "none";  // none | restore | mask
  int runs = 5;
  uint64_t seed = 1;
  int patch_side = 64;
  TransformRanges ranges;
};

struct ConditionEvalResult {
  EvalReport report;
  std::vector<std::pair<std::string, std::vector<Detection>>> clean_dets;
  std::vector<std::vector<std::pair<std::string, std::vector<Detection>>>> run_dets;
};

ConditionEvalResult evaluate_condition(const DetectorContract& det,
                                       const std::vector<ImageSample>& test,
                                       const ConditionSpec& spec, const Patch* adv_patch,
                                       const RestorationModel* restore_model,
                                       const RestorationModel* mask_model,
                                       const TextureBank* textures = nullptr);

}  // namespace uavpd
