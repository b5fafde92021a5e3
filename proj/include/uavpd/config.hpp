#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "uavpd/attack.hpp"
#include "uavpd/datasets.hpp"
#include "uavpd/defense.hpp"
#include "uavpd/detector.hpp"
#include "uavpd/patching.hpp"

namespace uavpd {

// Declarative run configuration: one file, stage-scoped sections. Override
// precedence is flag > environment (UAVPD_SEED, UAVPD_OUT) > file > default.
struct RunConfig {
  uint64_t seed = 0;  // mandatory in the file
  std::filesystem::path out_dir;

  // dataset
  std::string dataset_type = "toy";  // toy | visdrone
  std::filesystem::path visdrone_root;
  ClassSet classes = ClassSet::default_vehicles();
  std::map<int, int> class_map = default_visdrone_class_map();
  int input_size = 96;
  double filter_min_frac = 0.001;
  bool filter_test_split = true;
  ToySceneConfig toy;
  int toy_train = 320, toy_val = 48, toy_test = 64;
  int toy_textures = 25;

  // patch transforms
  TransformRanges ranges;
  int patch_side = 64;

  // attack
  AttackConfig attack;
  std::filesystem::path colors_file;

  // detector
  TinyDetectorConfig detector;
  DetectorTrainConfig detector_train;

  // defense (shared by restoration and masking baseline)
  DefenseTrainConfig defense;
  bool defense_attention = true;
  std::string pretrained_encoder;

  // eval
  int eval_runs = 5;
  bool dump_detections = true;
  bool with_timing = false;
  int timing_repetitions = 3;

  static RunConfig from_file(const std::filesystem::path& path);
  // Effective values serialized deterministically; hashed into manifests.
  nlohmann::ordered_json to_json() const;
  std::string config_hash() const;
};

}  // namespace uavpd
