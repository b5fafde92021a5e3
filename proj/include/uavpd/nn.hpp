#pragma once

#include <cmath>
#include <deque>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "uavpd/autodiff.hpp"
#include "uavpd/rng.hpp"

namespace uavpd {
namespace nn {

// Ordered registry of trainable parameters and non-trainable buffers
// (batch-norm running stats). Order is construction order, which makes
// checkpoints and optimizer state layouts stable.
class ParamStore {
 public:
  ad::Var add_param(const std::string& name, Tensor init) {
    auto v = ad::leaf(std::move(init), true);
    params_.emplace_back(name, v);
    return v;
  }
  Tensor* add_buffer(const std::string& name, Tensor init) {
    buffers_storage_.push_back(std::move(init));
    buffers_.emplace_back(name, &buffers_storage_.back());
    return &buffers_storage_.back();
  }
  const std::vector<std::pair<std::string, ad::Var>>& params() const { return params_; }
  const std::vector<std::pair<std::string, Tensor*>>& buffers() const { return buffers_; }
  std::vector<ad::Var> param_vars() const {
    std::vector<ad::Var> out;
    out.reserve(params_.size());
    for (const auto& [name, v] : params_) out.push_back(v);
    return out;
  }
  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v->value.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, ad::Var>> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::deque<Tensor> buffers_storage_;
};

inline Tensor conv_init(std::vector<int> shape, int fan_in, Rng& rng) {
  return Tensor::randn(std::move(shape), rng, 0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
}

struct Conv2d {
  ad::Var w, b;
  int stride = 1, pad = 0, groups = 1;
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int ci, int co, int k, int stride_, int pad_,
         int groups_, bool bias, Rng& rng)
      : stride(stride_), pad(pad_), groups(groups_) {
    int fan_in = (ci / groups_) * k * k;
    w = ps.add_param(name + ".w", conv_init({co, ci / groups_, k, k}, fan_in, rng));
    if (bias) b = ps.add_param(name + ".b", Tensor::zeros({co}));
  }
  ad::Var forward(const ad::Var& x) const { return ad::conv2d(x, w, b, stride, pad, groups); }
};

struct BatchNorm2d {
  ad::Var gamma, beta;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& ps, const std::string& name, int ch) {
    gamma = ps.add_param(name + ".gamma", Tensor::full({ch}, 1.0f));
    beta = ps.add_param(name + ".beta", Tensor::zeros({ch}));
    running_mean = ps.add_buffer(name + ".running_mean", Tensor::zeros({ch}));
    running_var = ps.add_buffer(name + ".running_var", Tensor::full({ch}, 1.0f));
  }
  ad::Var forward(const ad::Var& x, bool training) const {
    return ad::batch_norm(x, gamma, beta, *running_mean, *running_var, training);
  }
};

// Squeeze-excitation on pooled channel means; hard-swish hidden, sigmoid gate.
struct SqueezeExcite {
  ad::Var w1, b1, w2, b2;
  SqueezeExcite() = default;
  SqueezeExcite(ParamStore& ps, const std::string& name, int ch, int se_ch, Rng& rng) {
    w1 = ps.add_param(name + ".w1", conv_init({se_ch, ch}, ch, rng));
    b1 = ps.add_param(name + ".b1", Tensor::zeros({se_ch}));
    w2 = ps.add_param(name + ".w2", conv_init({ch, se_ch}, se_ch, rng));
    b2 = ps.add_param(name + ".b2", Tensor::zeros({ch}));
  }
  ad::Var forward(const ad::Var& x) const {
    auto pooled = ad::global_mean_hw(x);
    auto hidden = ad::hardswish(ad::linear(pooled, w1, b1));
    auto gate = ad::sigmoid(ad::linear(hidden, w2, b2));
    return ad::scale_channels(x, gate);
  }
};

// Inverted-residual block: 1x1 expand, depthwise, squeeze-excite, 1x1 project,
// residual when shapes allow.
struct MBConv {
  Conv2d expand, dw, project;
  BatchNorm2d bn_expand, bn_dw, bn_project;
  SqueezeExcite se;
  bool has_expand = false, residual = false;
  MBConv() = default;
  MBConv(ParamStore& ps, const std::string& name, int ci, int co, int expand_ratio, int k,
         int stride, Rng& rng) {
    int mid = ci * expand_ratio;
    has_expand = expand_ratio != 1;
    if (has_expand) {
      expand = Conv2d(ps, name + ".expand", ci, mid, 1, 1, 0, 1, false, rng);
      bn_expand = BatchNorm2d(ps, name + ".bn_expand", mid);
    }
    dw = Conv2d(ps, name + ".dw", mid, mid, k, stride, k / 2, mid, false, rng);
    bn_dw = BatchNorm2d(ps, name + ".bn_dw", mid);
    int se_ch = std::max(1, ci / 4);
    se = SqueezeExcite(ps, name + ".se", mid, se_ch, rng);
    project = Conv2d(ps, name + ".project", mid, co, 1, 1, 0, 1, false, rng);
    bn_project = BatchNorm2d(ps, name + ".bn_project", co);
    residual = stride == 1 && ci == co;
  }
  ad::Var forward(const ad::Var& x, bool training) const {
    ad::Var h = x;
    if (has_expand) h = ad::hardswish(bn_expand.forward(expand.forward(h), training));
    h = ad::hardswish(bn_dw.forward(dw.forward(h), training));
    h = se.forward(h);
    h = bn_project.forward(project.forward(h), training);
    return residual ? ad::add(h, x) : h;
  }
};

// SGD with momentum, an optional cosine-annealed learning rate and optional
// global-norm gradient clipping.
class SgdMomentum {
 public:
  SgdMomentum(float base_lr, float momentum, int total_steps, bool cosine = true,
              float clip_norm = 0.0f)
      : base_lr_(base_lr), momentum_(momentum), total_steps_(total_steps), cosine_(cosine),
        clip_norm_(clip_norm) {}

  float lr_at(int step) const {
    if (!cosine_ || total_steps_ <= 1) return base_lr_;
    float t = static_cast<float>(step) / static_cast<float>(total_steps_);
    if (t > 1.0f) t = 1.0f;
    return base_lr_ * 0.5f * (1.0f + std::cos(3.14159265358979323846f * t));
  }

  void step(const std::vector<ad::Var>& params, int step_idx) {
    if (velocity_.empty()) {
      velocity_.reserve(params.size());
      for (const auto& p : params) velocity_.push_back(Tensor::zeros(p->value.shape()));
    }
    float scale = 1.0f;
    if (clip_norm_ > 0.0f) {
      double sq = 0.0;
      for (const auto& p : params)
        if (!p->grad.empty())
          for (int64_t j = 0; j < p->grad.numel(); ++j) sq += double(p->grad[j]) * p->grad[j];
      double norm = std::sqrt(sq);
      if (norm > clip_norm_) scale = static_cast<float>(clip_norm_ / norm);
    }
    float lr = lr_at(step_idx);
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p->grad.empty()) continue;
      float* v = velocity_[i].data();
      float* w = p->value.data();
      const float* g = p->grad.data();
      for (int64_t j = 0; j < p->value.numel(); ++j) {
        v[j] = momentum_ * v[j] + g[j] * scale;
        w[j] -= lr * v[j];
      }
    }
  }

 private:
  float base_lr_, momentum_;
  int total_steps_;
  bool cosine_;
  float clip_norm_;
  std::vector<Tensor> velocity_;
};

}  // namespace nn
}  // namespace uavpd
