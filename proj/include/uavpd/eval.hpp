#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "uavpd/types.hpp"

namespace uavpd {

class DetectorContract;

// Greedy one-to-one matching at an IoU threshold. Detections are processed in
// descending confidence (ties broken by box coordinates); each claims the
// highest-IoU unmatched same-class ground truth. Ignore-flagged ground truths
// absorb detections (flag -1) without counting as TP or FP.
struct MatchResult {
  std::vector<Detection> dets;       // canonical (sorted) detection order
  std::vector<int8_t> det_flag;      // 1 TP, 0 FP, -1 ignored
  std::vector<int> ann_matched_det;  // per annotation: det index or -1
};
MatchResult match_detections(std::vector<Detection> dets, const std::vector<Annotation>& gts,
                             double thr = 0.5);

// Per-class accumulation across a dataset.
struct ClassAgg {
  std::vector<std::pair<float, int8_t>> records;  // (confidence, tp flag), ignored excluded
  int n_gt = 0;
};

class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(int num_classes) : classes_(static_cast<size_t>(num_classes)) {}
  void add_image(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                 double thr = 0.5);
  const std::vector<ClassAgg>& classes() const { return classes_; }

 private:
  std::vector<ClassAgg> classes_;
};

struct PrCurve {
  std::array<double, 101> precision{};  // at recall levels 0, 0.01, ..., 1
  double ap = 0.0;
};

// 101-point interpolated AP; precision monotonized from high recall to low.
PrCurve pr_curve_and_ap(const ClassAgg& agg);
// Maximum recall at the evaluation confidence floor.
double average_recall(const ClassAgg& agg);

struct ConditionMetrics {
  std::vector<double> per_class_ap, per_class_ar;
  std::vector<bool> class_valid;  // false when the class has zero ground truths
  std::vector<PrCurve> curves;
  double mean_ap = 0.0, mean_ar = 0.0;
};
ConditionMetrics compute_metrics(const MetricsAccumulator& acc);

// Convenience: run detect() over samples and compute metrics.
ConditionMetrics evaluate_detections(const DetectorContract& det,
                                     const std::vector<ImageSample>& samples);

// ASR over the 101 operating points derived from the clean run's recall
// levels: at each point, 1 - matched_patched / matched_clean, clamped to
// [0,1] with 0/0 -> 0; per-class mean over points with nonzero clean matches.
struct AsrResult {
  std::vector<double> per_class;
  std::vector<bool> class_valid;
  double mean = 0.0;
};
AsrResult attack_success_rate(const MetricsAccumulator& clean, const MetricsAccumulator& patched);

// Latency overhead of a preprocessing stage relative to detection alone.
struct OverheadResult {
  double mean_pct = 0.0;
  double std_pct = 0.0;
  double detect_ms_per_image = 0.0;
  double pipeline_ms_per_image = 0.0;
  int repetitions = 0;
};
OverheadResult measure_overhead(const std::function<void(const ImageSample&)>& detect_fn,
                                const std::function<ImageSample(const ImageSample&)>& preprocess_fn,
                                const std::vector<ImageSample>& images, int repetitions);

// One evaluation repetition.
struct RunMetrics {
  ConditionMetrics metrics;
  AsrResult asr;
};

struct EvalReport {
  std::string schema_version = "1";
  nlohmann::ordered_json meta;  // condition, seeds, artifact ids
  ClassSet class_set;
  std::vector<RunMetrics> runs;
  std::optional<OverheadResult> timing;
};

// Writes report.json (versioned record), per_class.csv, pr_curves.svg and
// asr_by_class.svg (whiskers span the per-run min/max).
void render_report(const EvalReport& report, const std::filesystem::path& out_dir);

// Line-oriented detection dump: "image_id class_name x y w h confidence".
void write_detection_dump(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::vector<Detection>>>& dets,
                          const ClassSet& classes);
std::map<std::string, std::vector<Detection>> read_detection_dump(
    const std::filesystem::path& path, const ClassSet& classes);

}  // namespace uavpd
