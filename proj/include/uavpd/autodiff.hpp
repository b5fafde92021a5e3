#pragma once

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "uavpd/tensor.hpp"

namespace uavpd {
namespace ad {

// Reverse-mode autodiff on a define-by-run tape. Nodes hold their value and
// (lazily allocated) gradient; ops attach a backward closure only when some
// input requires a gradient, so pure inference builds no tape at all.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);

// Runs backprop from a scalar root (numel == 1), seeding d(root)/d(root) = 1.
void backward(const Var& root);

// Clears gradients on the given vars (typically parameters between steps).
void zero_grad(const std::vector<Var>& vars);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, float s);
Var mul_scalar(const Var& a, float s);
// a + s / a - s where s is a scalar Var ([1]); gradient to s is the sum.
Var add_sv(const Var& a, const Var& s);
Var sub_sv(const Var& a, const Var& s);
Var relu(const Var& a);
Var hardswish(const Var& a);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var clamp01(const Var& a);

// ---- reductions / losses ----
Var sum(const Var& a);
Var mean(const Var& a);
// Mean squared error against a constant target, averaged over all entries.
Var mse_loss(const Var& pred, const Tensor& target);
// Weighted sums; caller normalizes. weight may be empty (treated as all-ones).
Var weighted_mse_sum(const Var& pred, const Tensor& target, const Tensor& weight);
Var bce_with_logits_sum(const Var& logits, const Tensor& target, const Tensor& weight);

// ---- shape / indexing ----
Var concat_channels(const Var& a, const Var& b);             // NCHW, dim 1
Var concat1d(const std::vector<Var>& parts);                 // 1-D vectors
Var gather(const Var& a, std::vector<int64_t> flat_indices); // -> [k]
// Stack single images [H,W,C] into a batch [N,C,H,W].
Var stack_images_nchw(const std::vector<Var>& images);
// Inverse of the above for one image: [1,C,H,W] view of an HWC image.
Var hwc_to_nchw(const Var& img);
Var nchw_to_hwc(const Var& x, int n);  // extract sample n as [H,W,C]

// ---- neural net ----
// conv2d: x [N,Ci,H,W], w [Co,Ci/groups,kh,kw], optional bias [Co].
// Supported groups: 1, or depthwise (groups == Ci, Co == Ci).
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups = 1);
Var linear(const Var& x, const Var& w, const Var& b);  // x [N,Ci], w [Co,Ci]
// Batch norm over NCHW. In training mode updates running stats in place.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, float momentum = 0.1f, float eps = 1e-5f);
Var upsample_bilinear_2x(const Var& x);     // NCHW
Var global_mean_hw(const Var& x);           // NCHW -> [N,C]
Var scale_channels(const Var& x, const Var& s);  // x [N,C,H,W] * s [N,C]
Var scale_spatial(const Var& x, const Var& a);   // x [N,C,H,W] * a [N,1,H,W]

// ---- image pipeline (single image, HWC, 3 channels) ----
Var flip_lr(const Var& img);
Var flip_ud(const Var& img);
// Hue rotation (fraction of the hue circle) and saturation multiplier via an
// RGB->HSV->RGB round trip; exact per-pixel Jacobian in the backward pass.
Var hsv_adjust(const Var& img, float hue_shift, float sat_mult);
Var resize_bilinear(const Var& img, int out_h, int out_w);
// Rotates about the canvas center; out-of-footprint pixels get value 0 and
// mask 0. Returns the validity mask through out_mask.
Var rotate_bilinear(const Var& img, float angle_deg, Tensor* out_mask);
// Composite fg over bg at (y0, x0) where mask==1. fg/mask share h,w.
Var paste(const Var& bg, const Var& fg, const Tensor& mask, int y0, int x0);

// ---- patch losses (HWC patch in [0,1]) ----
Var tv_loss(const Var& patch, bool normalized);
Var nps_loss(const Var& patch, const std::vector<std::array<float, 3>>& colors, bool normalized);

}  // namespace ad
}  // namespace uavpd
