#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uavpd/datasets.hpp"
#include "uavpd/nn.hpp"
#include "uavpd/patching.hpp"
#include "uavpd/types.hpp"

namespace uavpd {

// Restoration network: an attention U-Net with a slimmed inverted-residual
// encoder (stride-32 stage discarded, high-resolution stride-2 skip kept) and
// a one-convolution-per-level decoder. The same class backs the segmentation
// masking baseline (out_channels = 1, raw logits).
struct RestorationModelConfig {
  std::vector<int> decoder_filters = {16, 32, 64, 128, 256};  // shallow -> deep
  bool attention = true;
  int decoder_convs_per_level = 1;  // fixed; recorded in checkpoints
  int out_channels = 3;
  bool tanh_output = true;
  uint64_t init_seed = 7;
  std::string pretrained_encoder;  // optional checkpoint for enc.* tensors
};

class RestorationModel {
 public:
  explicit RestorationModel(RestorationModelConfig cfg);

  // x: [N,3,H,W] in [-1,1]; H and W must be multiples of 16.
  ad::Var forward(const ad::Var& x, bool training) const;
  // Single canonical image, inference mode.
  Tensor run(const Tensor& hwc) const;

  int64_t param_count() const { return params_.param_count(); }
  nn::ParamStore& params() { return params_; }
  const RestorationModelConfig& config() const { return cfg_; }

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<RestorationModel> load(const std::filesystem::path& path);

 private:
  struct Gate {
    nn::Conv2d wg, wx, psi;
  };
  Gate make_gate(const std::string& name, int cg, int cx, Rng& rng);
  // Multiplicative attention on a skip connection:
  //   a = sigmoid(psi(relu(Wg g + Wx x))),  out = x * a
  // with Wg, Wx, psi 1x1 convolutions; pass-through when attention is off.
  ad::Var apply_gate(const Gate& g, const ad::Var& skip, const ad::Var& gating) const;

  RestorationModelConfig cfg_;
  nn::ParamStore params_;
  nn::Conv2d stem_;
  nn::BatchNorm2d stem_bn_;
  nn::MBConv b1_, b2_, b3_, b4_, b5_, b6_, b7_, b8_;
  Gate g16_, g8_, g4_, g2_;
  nn::Conv2d d16_, d8_, d4_, d2_, d1_, head_;
  nn::BatchNorm2d n16_, n8_, n4_, n2_, n1_;
};

// Pixel-wise mean squared error between a clean image and a reconstruction.
double reconstruction_loss(const Tensor& x, const Tensor& x_c);

struct DefenseTrainConfig {
  int epochs = 200;
  int batch_size = 16;
  float momentum = 0.9f;
  // Default follows the 0.1 * batch/256 linear scaling rule.
  float base_lr = -1.0f;  // negative -> derive from batch size
  uint64_t seed = 7;
  TransformRanges ranges;
  float mask_pos_weight = 8.0f;  // segmentation baseline only

  float effective_lr() const { return base_lr > 0.0f ? base_lr : 0.1f * batch_size / 256.0f; }
};

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0, val_loss = 0.0, lr = 0.0;
};
using TrainHistory = std::vector<HistoryRow>;

// Trains the restoration model to undo texture-patch occlusions (never sees
// adversarial patches or any detector). Aborts with NumericalError on
// non-finite loss.
TrainHistory train_defense(RestorationModel& model, const std::vector<ImageSample>& train,
                           const std::vector<ImageSample>& holdout, const TextureBank& textures,
                           const DefenseTrainConfig& cfg,
                           const std::function<void(const HistoryRow&)>& progress = {});

// Pixels replaced by the model output; annotations pass through unchanged.
ImageSample restore(const RestorationModel& model, const ImageSample& image);

// Segmentation masking baseline: same architecture, per-pixel BCE on the
// patch footprint.
TrainHistory train_masking_baseline(RestorationModel& segmodel,
                                    const std::vector<ImageSample>& train,
                                    const std::vector<ImageSample>& holdout,
                                    const TextureBank& textures, const DefenseTrainConfig& cfg,
                                    const std::function<void(const HistoryRow&)>& progress = {});

// mask == 1 pixels are replaced with canonical black (-1); the rest is
// untouched. mask is [H,W] in {0,1}.
Tensor apply_inverted_mask(const Tensor& image, const Tensor& mask);

// Thresholds the predicted mask at 0.5, inverts and multiplies with the image.
ImageSample mask_apply(const RestorationModel& segmodel, const ImageSample& image);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& rows);

}  // namespace uavpd
