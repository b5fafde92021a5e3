#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "uavpd/attack.hpp"
#include "uavpd/config.hpp"
#include "uavpd/datasets.hpp"
#include "uavpd/defense.hpp"
#include "uavpd/detector.hpp"
#include "uavpd/errors.hpp"
#include "uavpd/eval.hpp"
#include "uavpd/manifest.hpp"
#include "uavpd/workbench.hpp"

namespace fs = std::filesystem;
using namespace uavpd;

namespace {

struct CliOverrides {
  std::string config_path;
  int64_t seed = -1;
  std::string out;
  std::string attack = "adversarial";
  std::string defense = "none";
  int runs = -1;
  std::string device = "cpu";
  bool with_timing = false;
};

RunConfig load_config(const CliOverrides& o) {
  RunConfig cfg = RunConfig::from_file(o.config_path);
  // Flag > env > file > default.
  if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.runs > 0) cfg.eval_runs = o.runs;
  if (o.with_timing) cfg.with_timing = true;
  if (o.device != "cpu" && o.device != "auto")
    throw ConfigError("--device: only 'cpu' is available in this build");
  // Stage seeds follow the master seed.
  cfg.attack.seed = cfg.seed;
  cfg.detector.init_seed = cfg.seed;
  cfg.detector_train.seed = cfg.seed;
  cfg.defense.seed = cfg.seed;
  return cfg;
}

fs::path data_root(const RunConfig& cfg) {
  return cfg.dataset_type == "visdrone" ? cfg.visdrone_root : cfg.out_dir / "data";
}

std::vector<ImageSample> load_split(const RunConfig& cfg, const std::string& split, bool filter) {
  fs::path root = data_root(cfg) / split;
  auto samples = load_dataset_dir(root, cfg.class_map, cfg.input_size);
  if (filter) samples = filter_small_objects(std::move(samples), cfg.filter_min_frac);
  return samples;
}

void require_artifact(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    throw MissingArtifactError("missing artifact " + p.string() + " (run '" + producer +
                               "' first)");
}

int cmd_prepare_data(const RunConfig& cfg) {
  if (cfg.dataset_type == "visdrone") {
    for (const char* split : {"train", "val", "test"})
      if (!fs::is_directory(cfg.visdrone_root / split / "images"))
        throw MissingArtifactError("visdrone split missing: " +
                                   (cfg.visdrone_root / split / "images").string());
    std::cout << "visdrone dataset validated at " << cfg.visdrone_root << "\n";
    return 0;
  }
  fs::path root = cfg.out_dir / "data";
  DirLock lock(root);
  RunManifest m;
  m.command = "prepare-data";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  struct Split {
    const char* name;
    int count;
    uint64_t salt;
  };
  for (const Split& sp : {Split{"train", cfg.toy_train, 0x11}, Split{"val", cfg.toy_val, 0x22},
                          Split{"test", cfg.toy_test, 0x33}}) {
    fs::path sr = root / sp.name;
    for (int i = 0; i < sp.count; ++i) {
      ImageSample s = generate_toy_scene(cfg.seed * 1000003ull + sp.salt * 10007ull + i, cfg.toy);
      s.source_id = std::string(sp.name) + "_" + std::to_string(i);
      save_sample(sr, s, cfg.class_map);
    }
    // Digest a whole split via its sorted file list.
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(sr))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += sha256_file(f);
    m.outputs.emplace_back(sp.name, sha256_hex(acc));
  }
  write_procedural_textures(root / "textures", cfg.toy_textures, 96, cfg.seed ^ 0x7e57);
  {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root / "textures"))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += sha256_file(f);
    m.outputs.emplace_back("textures", sha256_hex(acc));
  }
  m.write(root / "manifest.json");
  std::cout << "prepared toy dataset under " << root << "\n";
  return 0;
}

int cmd_train_detector(const RunConfig& cfg) {
  auto train = load_split(cfg, "train", true);
  auto val = load_split(cfg, "val", true);
  fs::path dir = cfg.out_dir / "detector";
  DirLock lock(dir);
  auto [det, report] = train_tiny_detector(train, val, cfg.detector, cfg.detector_train,
                                           [](int step, float loss) {
                                             std::cout << "step " << step << " loss " << loss
                                                       << "\n";
                                           });
  det->save(dir / "detector.ckpt");
  {
    std::ofstream f(dir / "history.csv");
    f << "step,loss\n";
    for (size_t i = 0; i < report.loss_trace.size(); ++i)
      f << i << "," << report.loss_trace[i] << "\n";
  }
  RunManifest m;
  m.command = "train-detector";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.add_output("detector.ckpt", dir / "detector.ckpt");
  m.add_output("history.csv", dir / "history.csv");
  m.write(dir / "manifest.json");
  std::cout << "holdout AP@0.5: " << report.holdout_ap << "\n";
  return 0;
}

int cmd_gen_patch(const RunConfig& cfg) {
  fs::path det_path = cfg.out_dir / "detector" / "detector.ckpt";
  require_artifact(det_path, "train-detector");
  auto det = TinyDetector::load(det_path);
  auto train = load_split(cfg, "train", true);
  PrintableColorSet colors =
      cfg.colors_file.empty() ? PrintableColorSet::basic() : PrintableColorSet::load(cfg.colors_file);
  fs::path dir = cfg.out_dir / "patch";
  DirLock lock(dir);
  auto result = optimize_patch(*det, train, cfg.attack, colors,
                               [](int step, const LossTraceRow& r) {
                                 if (step % 50 == 0)
                                   std::cout << "step " << step << " total " << r.total
                                             << " score " << r.score << "\n";
                               });
  nlohmann::ordered_json sidecar;
  sidecar["source"] = to_string(result.patch.source);
  sidecar["id"] = result.patch.id;
  sidecar["config"] = nlohmann::ordered_json::object();
  sidecar["config"]["steps"] = cfg.attack.steps;
  sidecar["config"]["batch_size"] = cfg.attack.batch_size;
  sidecar["config"]["learning_rate"] = cfg.attack.learning_rate;
  sidecar["config"]["weight_nps"] = cfg.attack.weight_nps;
  sidecar["config"]["weight_tv"] = cfg.attack.weight_tv;
  sidecar["config"]["seed"] = cfg.attack.seed;
  sidecar["config"]["patch_side"] = cfg.attack.patch_side;
  save_patch(dir / "patch.png", result.patch, sidecar.dump(2));
  write_loss_trace_csv(dir / "trace.csv", result.trace);
  RunManifest m;
  m.command = "gen-patch";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.add_input("detector.ckpt", det_path);
  m.add_output("patch.png", dir / "patch.png");
  m.add_output("patch.json", dir / "patch.json");
  m.add_output("trace.csv", dir / "trace.csv");
  m.write(dir / "manifest.json");
  std::cout << "patch written to " << (dir / "patch.png") << "\n";
  return 0;
}

int cmd_train_defense(const RunConfig& cfg, bool masking) {
  auto train = load_split(cfg, "train", true);
  auto val = load_split(cfg, "val", true);
  fs::path texdir = data_root(cfg) / "textures";
  require_artifact(texdir, "prepare-data");
  TextureBank textures = load_texture_bank(texdir);
  fs::path dir = cfg.out_dir / (masking ? "mask" : "defense");
  DirLock lock(dir);
  RestorationModelConfig mc;
  mc.attention = cfg.defense_attention;
  mc.init_seed = cfg.seed;
  mc.pretrained_encoder = cfg.pretrained_encoder;
  if (masking) {
    mc.out_channels = 1;
    mc.tanh_output = false;
  }
  RestorationModel model(mc);
  std::cout << (masking ? "segmentation" : "restoration") << " model: " << model.param_count()
            << " parameters\n";
  auto progress = [](const HistoryRow& r) {
    std::cout << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss
              << " lr " << r.lr << "\n";
  };
  TrainHistory history =
      masking ? train_masking_baseline(model, train, val, textures, cfg.defense, progress)
              : train_defense(model, train, val, textures, cfg.defense, progress);
  fs::path ckpt = dir / (masking ? "mask.ckpt" : "defense.ckpt");
  model.save(ckpt);
  write_history_csv(dir / "history.csv", history);
  RunManifest m;
  m.command = masking ? "train-mask-baseline" : "train-defense";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.add_output(ckpt.filename().string(), ckpt);
  m.add_output("history.csv", dir / "history.csv");
  m.write(dir / "manifest.json");
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& attack, const std::string& defense) {
  fs::path det_path = cfg.out_dir / "detector" / "detector.ckpt";
  require_artifact(det_path, "train-detector");
  auto det = TinyDetector::load(det_path);
  auto test = load_split(cfg, "test", cfg.filter_test_split);

  Patch patch;
  std::unique_ptr<RestorationModel> restore_model, mask_model;
  RunManifest m;
  m.command = "evaluate";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.add_input("detector.ckpt", det_path);
  if (attack == "adversarial") {
    fs::path pp = cfg.out_dir / "patch" / "patch.png";
    require_artifact(pp, "gen-patch");
    patch = load_patch(pp);
    m.add_input("patch.png", pp);
  }
  if (defense == "restore") {
    fs::path dp = cfg.out_dir / "defense" / "defense.ckpt";
    require_artifact(dp, "train-defense");
    restore_model = RestorationModel::load(dp);
    m.add_input("defense.ckpt", dp);
  }
  if (defense == "mask") {
    fs::path mp = cfg.out_dir / "mask" / "mask.ckpt";
    require_artifact(mp, "train-mask-baseline");
    mask_model = RestorationModel::load(mp);
    m.add_input("mask.ckpt", mp);
  }

  ConditionSpec spec;
  spec.attack = attack;
  spec.defense = defense;
  spec.runs = cfg.eval_runs;
  spec.seed = cfg.seed;
  spec.patch_side = cfg.patch_side;
  spec.ranges = cfg.ranges;
  auto result = evaluate_condition(*det, test, spec, attack == "adversarial" ? &patch : nullptr,
                                   restore_model.get(), mask_model.get());

  fs::path dir = cfg.out_dir / ("eval_" + attack + "_" + defense);
  DirLock lock(dir);
  if (cfg.with_timing && defense != "none") {
    // Timing is volatile; it is reported but never part of output digests.
    auto preprocess = [&](const ImageSample& s) {
      return defense == "restore" ? restore(*restore_model, s) : mask_apply(*mask_model, s);
    };
    auto detect_fn = [&](const ImageSample& s) { det->detect(s); };
    std::vector<ImageSample> timing_set = test;
    while (timing_set.size() < 100) timing_set.push_back(test[timing_set.size() % test.size()]);
    result.report.timing = measure_overhead(detect_fn, preprocess, timing_set,
                                            cfg.timing_repetitions);
  }
  render_report(result.report, dir);
  if (cfg.dump_detections) {
    write_detection_dump(dir / "dets_clean.txt", result.clean_dets, det->classes());
    for (size_t r = 0; r < result.run_dets.size(); ++r)
      write_detection_dump(dir / ("dets_run" + std::to_string(r) + ".txt"), result.run_dets[r],
                           det->classes());
  }
  if (!cfg.with_timing) {
    m.add_output("report.json", dir / "report.json");
    m.add_output("per_class.csv", dir / "per_class.csv");
    m.add_output("pr_curves.svg", dir / "pr_curves.svg");
    m.add_output("asr_by_class.svg", dir / "asr_by_class.svg");
  }
  m.write(dir / "manifest.json");
  const auto& runs = result.report.runs;
  double ap = 0, asr = 0;
  for (const auto& r : runs) {
    ap += r.metrics.mean_ap;
    asr += r.asr.mean;
  }
  std::cout << "condition attack=" << attack << " defense=" << defense
            << " mAP=" << (runs.empty() ? 0 : ap / runs.size())
            << " ASR=" << (runs.empty() ? 0 : asr / runs.size()) << "\n";
  return 0;
}

int cmd_report(const RunConfig& cfg) {
  fs::path dir = cfg.out_dir / "report";
  DirLock lock(dir);
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  std::ofstream csv;
  std::vector<fs::path> eval_dirs;
  for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
    if (!e.is_directory()) continue;
    std::string name = e.path().filename().string();
    if (name.rfind("eval_", 0) == 0 && fs::exists(e.path() / "report.json"))
      eval_dirs.push_back(e.path());
  }
  std::sort(eval_dirs.begin(), eval_dirs.end());
  if (eval_dirs.empty())
    throw MissingArtifactError("no eval_*/report.json found under " + cfg.out_dir.string() +
                               " (run 'evaluate' first)");
  csv.open(dir / "summary.csv");
  csv << "condition,ap_mean,ap_min,ap_max,ar_mean,asr_mean,asr_min,asr_max\n";
  for (const auto& ed : eval_dirs) {
    std::ifstream f(ed / "report.json");
    nlohmann::json r = nlohmann::json::parse(f);
    nlohmann::ordered_json row;
    row["condition"] = ed.filename().string().substr(5);
    row["means"] = r["means"];
    summary.push_back(row);
    csv << ed.filename().string().substr(5) << "," << r["means"]["ap"]["mean"] << ","
        << r["means"]["ap"]["min"] << "," << r["means"]["ap"]["max"] << ","
        << r["means"]["ar"]["mean"] << "," << r["means"]["asr"]["mean"] << ","
        << r["means"]["asr"]["min"] << "," << r["means"]["asr"]["max"] << "\n";
  }
  csv.close();
  {
    std::ofstream f(dir / "summary.json");
    f << summary.dump(2) << "\n";
  }
  RunManifest m;
  m.command = "report";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.add_output("summary.csv", dir / "summary.csv");
  m.add_output("summary.json", dir / "summary.json");
  m.write(dir / "manifest.json");
  std::cout << "summary written to " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial patch attack/defense workbench for aerial object detection"};
  app.require_subcommand(1);
  CliOverrides o;
  app.add_option("--config", o.config_path, "Run configuration file (JSON)")->required();
  app.add_option("--seed", o.seed, "Override the config seed");
  app.add_option("--out", o.out, "Override the output directory");
  app.add_option("--device", o.device, "Compute device (cpu)");

  app.add_subcommand("prepare-data", "Generate or validate the dataset and texture bank");
  app.add_subcommand("train-detector", "Train the tiny reference detector");
  app.add_subcommand("gen-patch", "Optimize an adversarial patch against the detector");
  app.add_subcommand("train-defense", "Train the restoration defense");
  app.add_subcommand("train-mask-baseline", "Train the segmentation masking baseline");
  auto* ev = app.add_subcommand("evaluate", "Evaluate an attack x defense condition");
  ev->add_option("--attack", o.attack, "none|gray|random|adversarial");
  ev->add_option("--defense", o.defense, "none|restore|mask");
  ev->add_option("--runs", o.runs, "Evaluation repetitions (default 5)");
  ev->add_flag("--with-timing", o.with_timing, "Measure defense latency overhead (volatile)");
  app.add_subcommand("report", "Summarize all evaluate outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 2 : 0;
  }

  try {
    RunConfig cfg = load_config(o);
    if (app.got_subcommand("prepare-data")) return cmd_prepare_data(cfg);
    if (app.got_subcommand("train-detector")) return cmd_train_detector(cfg);
    if (app.got_subcommand("gen-patch")) return cmd_gen_patch(cfg);
    if (app.got_subcommand("train-defense")) return cmd_train_defense(cfg, false);
    if (app.got_subcommand("train-mask-baseline")) return cmd_train_defense(cfg, true);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(cfg, o.attack, o.defense);
    if (app.got_subcommand("report")) return cmd_report(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
