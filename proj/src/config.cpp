#include "uavpd/config.hpp"

#include <cstdlib>
#include <fstream>

#include "uavpd/errors.hpp"
#include "uavpd/manifest.hpp"

namespace uavpd {

namespace {

// Typed JSON access with path-to-key error messages.
class Cursor {
 public:
  Cursor(const nlohmann::json* j, std::string path) : j_(j), path_(std::move(path)) {}

  Cursor at(const std::string& key) const {
    if (!j_ || !j_->is_object() || !j_->contains(key)) return Cursor(nullptr, path_ + "." + key);
    return Cursor(&j_->at(key), path_ + "." + key);
  }
  bool present() const { return j_ != nullptr; }

  template <typename T>
  T get_or(const std::string& key, T fallback) const {
    Cursor c = at(key);
    if (!c.present()) return fallback;
    try {
      return c.j_->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(c.path_ + ": invalid value type");
    }
  }

  template <typename T>
  std::pair<T, T> get_range_or(const std::string& key, T lo, T hi) const {
    Cursor c = at(key);
    if (!c.present()) return {lo, hi};
    if (!c.j_->is_array() || c.j_->size() != 2)
      throw ConfigError(c.path_ + ": expected a [min, max] pair");
    try {
      return {c.j_->at(0).get<T>(), c.j_->at(1).get<T>()};
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(c.path_ + ": invalid range values");
    }
  }

  const nlohmann::json* raw() const { return j_; }
  const std::string& path() const { return path_; }

 private:
  const nlohmann::json* j_;
  std::string path_;
};

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);  // comments allowed
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse failure in " + path.string() + ": " + e.what());
  }
  Cursor root(&j, "config");
  RunConfig c;
  if (!root.at("seed").present()) throw ConfigError("config.seed: mandatory key missing");
  c.seed = root.get_or<uint64_t>("seed", 0);
  c.out_dir = root.get_or<std::string>("out_dir", "runs/out");

  Cursor ds = root.at("dataset");
  if (ds.present()) {
    c.dataset_type = ds.get_or<std::string>("type", c.dataset_type);
    c.visdrone_root = ds.get_or<std::string>("visdrone_root", "");
    c.input_size = ds.get_or<int>("input_size", c.input_size);
    c.filter_min_frac = ds.get_or<double>("filter_min_frac", c.filter_min_frac);
    c.filter_test_split = ds.get_or<bool>("filter_test_split", c.filter_test_split);
    if (ds.at("classes").present())
      c.classes = ClassSet{ds.get_or<std::vector<std::string>>("classes", {})};
    if (ds.at("class_map").present()) {
      c.class_map.clear();
      for (const auto& [k, v] : ds.at("class_map").raw()->items()) {
        try {
          c.class_map[std::stoi(k)] = v.get<int>();
        } catch (const std::exception&) {
          throw ConfigError(ds.path() + ".class_map: keys must be integer category codes");
        }
      }
    }
    Cursor toy = ds.at("toy");
    if (toy.present()) {
      c.toy.canvas = toy.get_or<int>("canvas", c.input_size);
      c.toy.n_objects_min = toy.get_or<int>("n_objects_min", c.toy.n_objects_min);
      c.toy.n_objects_max = toy.get_or<int>("n_objects_max", c.toy.n_objects_max);
      c.toy.area_frac_min = toy.get_or<double>("area_frac_min", c.toy.area_frac_min);
      c.toy.area_frac_max = toy.get_or<double>("area_frac_max", c.toy.area_frac_max);
      c.toy.background_style = toy.get_or<int>("background_style", c.toy.background_style);
      c.toy_train = toy.get_or<int>("train", c.toy_train);
      c.toy_val = toy.get_or<int>("val", c.toy_val);
      c.toy_test = toy.get_or<int>("test", c.toy_test);
      c.toy_textures = toy.get_or<int>("textures", c.toy_textures);
    }
  }
  c.toy.canvas = c.input_size;
  c.toy.min_area_filter = c.filter_min_frac;
  c.toy.n_classes = c.classes.size();

  Cursor p = root.at("patch");
  if (p.present()) {
    c.patch_side = p.get_or<int>("side", c.patch_side);
    c.ranges.hue = p.get_or<float>("hue", c.ranges.hue);
    std::tie(c.ranges.contrast_min, c.ranges.contrast_max) =
        p.get_range_or<float>("contrast", c.ranges.contrast_min, c.ranges.contrast_max);
    std::tie(c.ranges.saturation_min, c.ranges.saturation_max) =
        p.get_range_or<float>("saturation", c.ranges.saturation_min, c.ranges.saturation_max);
    c.ranges.brightness = p.get_or<float>("brightness", c.ranges.brightness);
    c.ranges.noise = p.get_or<float>("noise", c.ranges.noise);
    c.ranges.rotation_deg = p.get_or<float>("rotation_deg", c.ranges.rotation_deg);
    std::tie(c.ranges.scale_min, c.ranges.scale_max) =
        p.get_range_or<float>("scale", c.ranges.scale_min, c.ranges.scale_max);
    c.ranges.scale_eval = p.get_or<float>("scale_eval", c.ranges.scale_eval);
  }

  Cursor a = root.at("attack");
  if (a.present()) {
    c.attack.steps = a.get_or<int>("steps", c.attack.steps);
    c.attack.batch_size = a.get_or<int>("batch_size", c.attack.batch_size);
    c.attack.learning_rate = a.get_or<float>("learning_rate", c.attack.learning_rate);
    std::string sched = a.get_or<std::string>("lr_schedule", "cosine");
    if (sched == "cosine") c.attack.lr_schedule = LrSchedule::Cosine;
    else if (sched == "constant") c.attack.lr_schedule = LrSchedule::Constant;
    else throw ConfigError("config.attack.lr_schedule: expected cosine|constant");
    std::string gmode = a.get_or<std::string>("grad_mode", "plain");
    if (gmode == "plain") c.attack.grad_mode = GradMode::Plain;
    else if (gmode == "sign") c.attack.grad_mode = GradMode::Sign;
    else if (gmode == "normalized") c.attack.grad_mode = GradMode::Normalized;
    else throw ConfigError("config.attack.grad_mode: expected plain|sign|normalized");
    c.attack.weight_nps = a.get_or<float>("weight_nps", c.attack.weight_nps);
    c.attack.weight_tv = a.get_or<float>("weight_tv", c.attack.weight_tv);
    c.attack.normalized_losses = a.get_or<bool>("normalized_losses", true);
    c.colors_file = a.get_or<std::string>("colors_file", "");
  }
  c.attack.patch_side = c.patch_side;
  c.attack.ranges = c.ranges;
  c.attack.seed = c.seed;
  if (c.attack.weight_nps < 0.0f || c.attack.weight_tv < 0.0f)
    throw ConfigError("config.attack: loss weights must be >= 0");
  if (c.attack.steps < 1) throw ConfigError("config.attack.steps: must be >= 1");

  Cursor d = root.at("detector");
  if (d.present()) {
    c.detector.conf_threshold = d.get_or<float>("conf_threshold", c.detector.conf_threshold);
    c.detector.nms_iou = d.get_or<float>("nms_iou", c.detector.nms_iou);
    c.detector.score_obj_times_class =
        d.get_or<bool>("score_obj_times_class", c.detector.score_obj_times_class);
    c.detector.anchor_sizes_s8 =
        d.get_or<std::vector<float>>("anchor_sizes_s8", c.detector.anchor_sizes_s8);
    c.detector.anchor_sizes_s16 =
        d.get_or<std::vector<float>>("anchor_sizes_s16", c.detector.anchor_sizes_s16);
    c.detector_train.steps = d.get_or<int>("steps", c.detector_train.steps);
    c.detector_train.batch_size = d.get_or<int>("batch_size", c.detector_train.batch_size);
    c.detector_train.lr = d.get_or<float>("lr", c.detector_train.lr);
    c.detector_train.momentum = d.get_or<float>("momentum", c.detector_train.momentum);
  }
  c.detector.input_size = c.input_size;
  c.detector.num_classes = c.classes.size();
  c.detector.init_seed = c.seed;
  c.detector_train.seed = c.seed;

  Cursor f = root.at("defense");
  if (f.present()) {
    c.defense.epochs = f.get_or<int>("epochs", c.defense.epochs);
    c.defense.batch_size = f.get_or<int>("batch_size", c.defense.batch_size);
    c.defense.momentum = f.get_or<float>("momentum", c.defense.momentum);
    c.defense.base_lr = f.get_or<float>("base_lr", c.defense.base_lr);
    c.defense.mask_pos_weight = f.get_or<float>("mask_pos_weight", c.defense.mask_pos_weight);
    c.defense_attention = f.get_or<bool>("attention", true);
    c.pretrained_encoder = f.get_or<std::string>("pretrained_encoder", "");
  }
  if (c.defense.epochs < 1) throw ConfigError("config.defense.epochs: must be >= 1");
  if (c.defense.batch_size < 1) throw ConfigError("config.defense.batch_size: must be >= 1");
  c.defense.seed = c.seed;
  c.defense.ranges = c.ranges;

  Cursor e = root.at("eval");
  if (e.present()) {
    c.eval_runs = e.get_or<int>("runs", c.eval_runs);
    c.dump_detections = e.get_or<bool>("dump_detections", c.dump_detections);
    c.with_timing = e.get_or<bool>("with_timing", c.with_timing);
    c.timing_repetitions = e.get_or<int>("timing_repetitions", c.timing_repetitions);
  }

  // Environment overrides (flags are applied later by the CLI).
  if (const char* env = std::getenv("UAVPD_SEED")) c.seed = std::strtoull(env, nullptr, 10);
  if (const char* env = std::getenv("UAVPD_OUT")) c.out_dir = env;

  if (c.input_size % 16 != 0)
    throw ConfigError("config.dataset.input_size: must be a multiple of 16");
  if (c.dataset_type != "toy" && c.dataset_type != "visdrone")
    throw ConfigError("config.dataset.type: expected toy|visdrone");
  if (c.dataset_type == "visdrone" && c.visdrone_root.empty())
    throw ConfigError("config.dataset.visdrone_root: required for visdrone datasets");
  return c;
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir.string();
  nlohmann::ordered_json ds;
  ds["type"] = dataset_type;
  ds["visdrone_root"] = visdrone_root.string();
  ds["input_size"] = input_size;
  ds["filter_min_frac"] = filter_min_frac;
  ds["filter_test_split"] = filter_test_split;
  ds["classes"] = classes.names;
  nlohmann::ordered_json cm = nlohmann::ordered_json::object();
  for (const auto& [k, v] : class_map) cm[std::to_string(k)] = v;
  ds["class_map"] = cm;
  nlohmann::ordered_json toyj;
  toyj["canvas"] = toy.canvas;
  toyj["n_objects_min"] = toy.n_objects_min;
  toyj["n_objects_max"] = toy.n_objects_max;
  toyj["area_frac_min"] = toy.area_frac_min;
  toyj["area_frac_max"] = toy.area_frac_max;
  toyj["background_style"] = toy.background_style;
  toyj["train"] = toy_train;
  toyj["val"] = toy_val;
  toyj["test"] = toy_test;
  toyj["textures"] = toy_textures;
  ds["toy"] = toyj;
  j["dataset"] = ds;
  nlohmann::ordered_json pj;
  pj["side"] = patch_side;
  pj["hue"] = ranges.hue;
  pj["contrast"] = {ranges.contrast_min, ranges.contrast_max};
  pj["saturation"] = {ranges.saturation_min, ranges.saturation_max};
  pj["brightness"] = ranges.brightness;
  pj["noise"] = ranges.noise;
  pj["rotation_deg"] = ranges.rotation_deg;
  pj["scale"] = {ranges.scale_min, ranges.scale_max};
  pj["scale_eval"] = ranges.scale_eval;
  j["patch"] = pj;
  nlohmann::ordered_json aj;
  aj["steps"] = attack.steps;
  aj["batch_size"] = attack.batch_size;
  aj["learning_rate"] = attack.learning_rate;
  aj["lr_schedule"] = attack.lr_schedule == LrSchedule::Cosine ? "cosine" : "constant";
  aj["grad_mode"] = attack.grad_mode == GradMode::Sign
                        ? "sign"
                        : (attack.grad_mode == GradMode::Normalized ? "normalized" : "plain");
  aj["weight_nps"] = attack.weight_nps;
  aj["weight_tv"] = attack.weight_tv;
  aj["normalized_losses"] = attack.normalized_losses;
  aj["colors_file"] = colors_file.string();
  j["attack"] = aj;
  nlohmann::ordered_json dj;
  dj["conf_threshold"] = detector.conf_threshold;
  dj["nms_iou"] = detector.nms_iou;
  dj["score_obj_times_class"] = detector.score_obj_times_class;
  dj["anchor_sizes_s8"] = detector.anchor_sizes_s8;
  dj["anchor_sizes_s16"] = detector.anchor_sizes_s16;
  dj["steps"] = detector_train.steps;
  dj["batch_size"] = detector_train.batch_size;
  dj["lr"] = detector_train.lr;
  dj["momentum"] = detector_train.momentum;
  j["detector"] = dj;
  nlohmann::ordered_json fj;
  fj["epochs"] = defense.epochs;
  fj["batch_size"] = defense.batch_size;
  fj["momentum"] = defense.momentum;
  fj["base_lr"] = defense.base_lr;
  fj["mask_pos_weight"] = defense.mask_pos_weight;
  fj["attention"] = defense_attention;
  fj["pretrained_encoder"] = pretrained_encoder;
  j["defense"] = fj;
  nlohmann::ordered_json ej;
  ej["runs"] = eval_runs;
  ej["dump_detections"] = dump_detections;
  ej["with_timing"] = with_timing;
  ej["timing_repetitions"] = timing_repetitions;
  j["eval"] = ej;
  return j;
}

std::string RunConfig::config_hash() const { return sha256_hex(to_json().dump()); }

}  // namespace uavpd
