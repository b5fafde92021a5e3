#include <cmath>

#include "doctest.h"
#include "uavpd/autodiff.hpp"
#include "uavpd/rng.hpp"

using namespace uavpd;

namespace {

// Central finite differences against the analytic gradient of a scalar graph.
// Error is relative to the gradient's infinity norm: per-entry relative error
// is ill-posed in float32 where the true gradient crosses zero.
double grad_check(const std::function<ad::Var(const ad::Var&)>& f, Tensor x0, double eps = 1e-3,
                  int max_entries = 64) {
  auto x = ad::leaf(x0, true);
  auto y = f(x);
  ad::backward(y);
  Tensor analytic = x->grad;
  double err = 0.0, scale = 0.0;
  int64_t n = x0.numel();
  int64_t stride = std::max<int64_t>(1, n / max_entries);
  for (int64_t i = 0; i < n; i += stride) {
    Tensor xp = x0, xm = x0;
    xp[i] += static_cast<float>(eps);
    xm[i] -= static_cast<float>(eps);
    double fp = f(ad::constant(xp))->value[0];
    double fm = f(ad::constant(xm))->value[0];
    double fd = (fp - fm) / (2 * eps);
    err = std::max(err, std::abs(fd - analytic[i]));
    scale = std::max({scale, std::abs(fd), std::abs(double(analytic[i]))});
  }
  return err / std::max(scale, 1e-6);
}

}  // namespace

TEST_CASE("rng determinism and portability transforms") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("elementwise backward matches finite differences") {
  Rng rng(1);
  Tensor x = Tensor::uniform({4, 5}, rng, -1.0f, 1.0f);
  CHECK(grad_check([](const ad::Var& v) { return ad::sum(ad::mul(v, v)); }, x) < 1e-3);
  CHECK(grad_check([](const ad::Var& v) { return ad::mean(ad::hardswish(v)); }, x) < 2e-3);
  CHECK(grad_check([](const ad::Var& v) { return ad::sum(ad::sigmoid(v)); }, x, 1e-2) < 1e-3);
  CHECK(grad_check([](const ad::Var& v) { return ad::sum(ad::tanh_op(v)); }, x) < 1e-3);
  CHECK(grad_check([](const ad::Var& v) {
    auto m = ad::mean(v);
    return ad::sum(ad::mul(ad::sub_sv(v, m), ad::sub_sv(v, m)));
  }, x) < 2e-3);
}

TEST_CASE("reductions and losses") {
  Rng rng(2);
  Tensor x = Tensor::uniform({3, 3}, rng);
  Tensor t = Tensor::uniform({3, 3}, rng);
  CHECK(grad_check([&](const ad::Var& v) { return ad::mse_loss(v, t); }, x) < 1e-3);
  Tensor w = Tensor::uniform({3, 3}, rng, 0.5f, 2.0f);
  CHECK(grad_check([&](const ad::Var& v) { return ad::bce_with_logits_sum(v, t, w); }, x) < 2e-3);
  CHECK(grad_check([&](const ad::Var& v) { return ad::weighted_mse_sum(v, t, w); }, x) < 1e-3);
}

TEST_CASE("indexing ops route gradients") {
  Rng rng(3);
  Tensor x = Tensor::uniform({10}, rng);
  auto v = ad::leaf(x, true);
  auto g = ad::gather(v, {1, 3, 3, 7});
  auto s = ad::sum(g);
  ad::backward(s);
  CHECK(v->grad[1] == doctest::Approx(1.0f));
  CHECK(v->grad[3] == doctest::Approx(2.0f));
  CHECK(v->grad[7] == doctest::Approx(1.0f));
  CHECK(v->grad[0] == doctest::Approx(0.0f));
}

TEST_CASE("image ops backward") {
  Rng rng(4);
  Tensor img = Tensor::uniform({6, 6, 3}, rng, 0.05f, 0.95f);
  CHECK(grad_check([](const ad::Var& v) { return ad::sum(ad::flip_lr(v)); }, img) < 1e-3);
  CHECK(grad_check([](const ad::Var& v) { return ad::sum(ad::resize_bilinear(v, 9, 4)); }, img) < 2e-3);
  CHECK(grad_check([](const ad::Var& v) {
    Tensor mask;
    return ad::sum(ad::rotate_bilinear(v, 17.0f, &mask));
  }, img) < 2e-3);
  CHECK(grad_check([](const ad::Var& v) {
    return ad::sum(ad::hsv_adjust(v, 0.05f, 1.3f));
  }, img) < 2e-3);
}

TEST_CASE("hsv identity short-circuit is exact") {
  Rng rng(5);
  Tensor img = Tensor::uniform({8, 8, 3}, rng);
  auto out = ad::hsv_adjust(ad::constant(img), 0.0f, 1.0f);
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(out->value[i] == img[i]);
}

TEST_CASE("hsv adjust keeps achromatic pixels fixed under hue rotation") {
  Tensor gray({2, 2, 3}, 0.5f);
  auto out = ad::hsv_adjust(ad::constant(gray), 0.05f, 1.0f);
  for (int64_t i = 0; i < gray.numel(); ++i) CHECK(out->value[i] == doctest::Approx(0.5f).epsilon(1e-6));
}

TEST_CASE("hsv round trip known values") {
  // Saturated red rotated by a third of the circle lands on green.
  Tensor red({1, 1, 3});
  red[0] = 1.0f;
  auto out = ad::hsv_adjust(ad::constant(red), 1.0f / 3.0f, 1.0f);
  CHECK(out->value[0] == doctest::Approx(0.0f).epsilon(1e-5));
  CHECK(out->value[1] == doctest::Approx(1.0f).epsilon(1e-5));
  CHECK(out->value[2] == doctest::Approx(0.0f).epsilon(1e-5));
}

TEST_CASE("paste keeps outside pixels bit-identical and routes gradients by mask") {
  Rng rng(6);
  Tensor bg = Tensor::uniform({8, 8, 3}, rng, -1.0f, 1.0f);
  Tensor fg_t = Tensor::uniform({3, 3, 3}, rng);
  Tensor mask({3, 3});
  for (int i = 0; i < 9; ++i) mask[i] = i % 2 == 0 ? 1.0f : 0.0f;
  auto fg = ad::leaf(fg_t, true);
  auto out = ad::paste(ad::constant(bg), fg, mask, 2, 4);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) {
        bool inside = y >= 2 && y < 5 && x >= 4 && x < 7 && mask[(y - 2) * 3 + (x - 4)] == 1.0f;
        if (inside) CHECK(out->value.at3(y, x, c) == fg_t.at3(y - 2, x - 4, c));
        else CHECK(out->value.at3(y, x, c) == bg.at3(y, x, c));
      }
  ad::backward(ad::sum(out));
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(fg->grad[int64_t(i) * 3 + c] == (mask[i] == 1.0f ? 1.0f : 0.0f));
}

TEST_CASE("patch losses: values and gradients") {
  // Instance chosen away from the losses' non-differentiable ties: all pixels
  // closer to black than white, neighbor differences bounded away from zero.
  Tensor p({8, 8, 3});
  for (int64_t i = 0; i < p.numel(); ++i)
    p[i] = 0.05f + 0.40f * static_cast<float>((i * 37 % 101)) / 101.0f;
  std::vector<std::array<float, 3>> colors = {{0, 0, 0}, {1, 1, 1}};
  CHECK(grad_check([&](const ad::Var& v) { return ad::nps_loss(v, colors, true); }, p, 1e-2) < 1e-3);
  CHECK(grad_check([&](const ad::Var& v) { return ad::tv_loss(v, true); }, p) < 1e-3);
}
