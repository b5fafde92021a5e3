#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uavpd/autodiff.hpp"
#include "uavpd/nn.hpp"
#include "uavpd/types.hpp"

namespace uavpd {

// Contract every other module consumes. detect() is deterministic in
// inference mode; object_confidences depends on pixels only (annotations are
// used for region association, never as score inputs).
class DetectorContract {
 public:
  virtual ~DetectorContract() = default;
  virtual std::vector<Detection> detect(const ImageSample& image) const = 0;
  virtual std::vector<double> object_confidences(const ImageSample& image,
                                                 const std::vector<Annotation>& anns) const = 0;
  // Differentiable path: image as an HWC variable in [-1,1]; returns one
  // confidence per annotation.
  virtual ad::Var object_confidences_var(const ad::Var& image_hwc,
                                         const std::vector<Annotation>& anns) const = 0;
  virtual int input_size() const = 0;
  virtual const ClassSet& classes() const = 0;
};

struct TinyDetectorConfig {
  int input_size = 96;
  int num_classes = 4;
  float conf_threshold = 0.05f;
  float nms_iou = 0.5f;
  // Attack loss variant: objectness x class probability (default) or
  // objectness alone.
  bool score_obj_times_class = true;
  std::vector<float> anchor_sizes_s8 = {9.0f, 13.0f};
  std::vector<float> anchor_sizes_s16 = {17.0f, 24.0f};
  std::vector<float> anchor_ratios = {0.4f, 1.0f, 2.5f};
  uint64_t init_seed = 11;
};

struct DetectorTrainConfig {
  int steps = 1800;
  int batch_size = 8;
  float lr = 0.02f;
  float momentum = 0.9f;
  uint64_t seed = 11;
  int log_every = 100;
};

struct DetectorTrainReport {
  std::vector<float> loss_trace;
  double holdout_ap = 0.0;
};

// Anchor-based single-stage detector with heads at strides 8 and 16 only
// (no coarse top-level head; aerial objects are small).
class TinyDetector : public DetectorContract {
 public:
  explicit TinyDetector(TinyDetectorConfig cfg, const ClassSet& classes = ClassSet::default_vehicles());

  std::vector<Detection> detect(const ImageSample& image) const override;
  std::vector<double> object_confidences(const ImageSample& image,
                                         const std::vector<Annotation>& anns) const override;
  ad::Var object_confidences_var(const ad::Var& image_hwc,
                                 const std::vector<Annotation>& anns) const override;
  int input_size() const override { return cfg_.input_size; }
  const ClassSet& classes() const override { return classes_; }

  // Training loss over a batch of canonical samples.
  ad::Var training_loss(const std::vector<const ImageSample*>& batch, bool training = true);

  nn::ParamStore& params() { return params_; }
  const TinyDetectorConfig& config() const { return cfg_; }

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<TinyDetector> load(const std::filesystem::path& path);

 private:
  struct Level {
    int stride;
    std::vector<std::pair<float, float>> anchors;  // (w, h) per anchor
  };
  struct HeadOutput {
    ad::Var p3, p4;
  };
  HeadOutput forward(const ad::Var& x_nchw, bool training) const;
  // Decoded candidate: flat tensor indices for obj / class logits plus the
  // decoded box, used for association and NMS.
  struct Candidate {
    BoundingBox box;
    float objectness;
    std::vector<float> class_probs;
    int level;
    int64_t obj_index;         // flat index into the level head tensor
    std::vector<int64_t> cls_index;
  };
  std::vector<Candidate> decode(const HeadOutput& h, int sample) const;

  TinyDetectorConfig cfg_;
  ClassSet classes_;
  nn::ParamStore params_;
  nn::Conv2d c1_, c2_, c3_, c4_, c5_, c6_;
  nn::BatchNorm2d b1_, b2_, b3_, b4_, b5_, b6_;
  nn::Conv2d head3_, head4_;
  std::vector<Level> levels_;
  int attrs_ = 0;  // 5 + num_classes
};

// Trains on toy scenes (or any canonical samples); reports AP@0.5 on the
// holdout split. Aborts with NumericalError on divergence.
std::pair<std::unique_ptr<TinyDetector>, DetectorTrainReport> train_tiny_detector(
    const std::vector<ImageSample>& train, const std::vector<ImageSample>& holdout,
    const TinyDetectorConfig& cfg, const DetectorTrainConfig& tcfg,
    const std::function<void(int, float)>& progress = {});

// Adapter registry so external detectors can be plugged in by name from the
// global config.
using DetectorFactory = std::function<std::unique_ptr<DetectorContract>(const std::string& json_cfg)>;
void register_detector_adapter(const std::string& name, DetectorFactory factory);
std::unique_ptr<DetectorContract> make_detector_adapter(const std::string& name,
                                                        const std::string& json_cfg);
bool has_detector_adapter(const std::string& name);

}  // namespace uavpd
