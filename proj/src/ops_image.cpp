#include <cmath>
#include <cstring>

#include "uavpd/autodiff.hpp"
#include "uavpd/errors.hpp"

namespace uavpd {
namespace ad {

namespace {

Var make_op1(Tensor value, const Var& a, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = a->requires_grad;
  if (n->requires_grad) {
    n->parents = {a};
    n->backward_fn = std::move(fn);
  }
  return n;
}

// Forward-mode scalar with partials w.r.t. the three input channels.
// Used to get the exact per-pixel Jacobian of the HSV round trip.
struct Dual3 {
  float v = 0.0f;
  float d[3] = {0.0f, 0.0f, 0.0f};
  Dual3() = default;
  Dual3(float val) : v(val) {}  // NOLINT: implicit from constants
  Dual3(float val, float d0, float d1, float d2) : v(val), d{d0, d1, d2} {}
};
inline Dual3 operator+(const Dual3& a, const Dual3& b) {
  return {a.v + b.v, a.d[0] + b.d[0], a.d[1] + b.d[1], a.d[2] + b.d[2]};
}
inline Dual3 operator-(const Dual3& a, const Dual3& b) {
  return {a.v - b.v, a.d[0] - b.d[0], a.d[1] - b.d[1], a.d[2] - b.d[2]};
}
inline Dual3 operator*(const Dual3& a, const Dual3& b) {
  return {a.v * b.v, a.v * b.d[0] + b.v * a.d[0], a.v * b.d[1] + b.v * a.d[1],
          a.v * b.d[2] + b.v * a.d[2]};
}
inline Dual3 operator/(const Dual3& a, const Dual3& b) {
  float inv = 1.0f / b.v;
  float q = a.v * inv;
  return {q, (a.d[0] - q * b.d[0]) * inv, (a.d[1] - q * b.d[1]) * inv,
          (a.d[2] - q * b.d[2]) * inv};
}
inline Dual3 dabs(const Dual3& a) {
  float s = a.v >= 0.0f ? 1.0f : -1.0f;
  return {std::fabs(a.v), s * a.d[0], s * a.d[1], s * a.d[2]};
}
inline const Dual3& dmax3(const Dual3& r, const Dual3& g, const Dual3& b, int* arg) {
  if (r.v >= g.v && r.v >= b.v) { *arg = 0; return r; }
  if (g.v >= b.v) { *arg = 1; return g; }
  *arg = 2;
  return b;
}
inline const Dual3& dmin3(const Dual3& r, const Dual3& g, const Dual3& b) {
  if (r.v <= g.v && r.v <= b.v) return r;
  if (g.v <= b.v) return g;
  return b;
}

// RGB -> HSV -> RGB with hue shifted by dh (fraction of the circle, hue in
// [0,6) internally) and saturation scaled by ds. Out-of-range values are the
// caller's business (the pipeline clamps once, after noise).
void hsv_adjust_px(const Dual3& r, const Dual3& g, const Dual3& b, float dh, float ds,
                   Dual3* ro, Dual3* go, Dual3* bo) {
  int argmax = 0;
  Dual3 mx = dmax3(r, g, b, &argmax);
  Dual3 mn = dmin3(r, g, b);
  Dual3 c = mx - mn;
  Dual3 h(0.0f);
  if (c.v > 0.0f) {
    if (argmax == 0) h = (g - b) / c;
    else if (argmax == 1) h = (b - r) / c + Dual3(2.0f);
    else h = (r - g) / c + Dual3(4.0f);
  }
  h = h + Dual3(dh * 6.0f);
  h = h - Dual3(6.0f * std::floor(h.v / 6.0f));  // wrap; offset is locally constant
  if (h.v >= 6.0f) h = h - Dual3(6.0f);
  Dual3 s(0.0f);
  if (mx.v > 0.0f && c.v > 0.0f) s = (c / mx) * Dual3(ds);
  const Dual3& v = mx;
  Dual3 chroma = v * s;
  Dual3 mod2 = h - Dual3(2.0f * std::floor(h.v / 2.0f));
  Dual3 x1 = chroma * (Dual3(1.0f) - dabs(mod2 - Dual3(1.0f)));
  Dual3 m = v - chroma;
  int sector = std::min(5, static_cast<int>(std::floor(h.v)));
  Dual3 zero(0.0f);
  const Dual3* rr;
  const Dual3* gg;
  const Dual3* bb;
  switch (sector) {
    case 0: rr = &chroma; gg = &x1; bb = &zero; break;
    case 1: rr = &x1; gg = &chroma; bb = &zero; break;
    case 2: rr = &zero; gg = &chroma; bb = &x1; break;
    case 3: rr = &zero; gg = &x1; bb = &chroma; break;
    case 4: rr = &x1; gg = &zero; bb = &chroma; break;
    default: rr = &chroma; gg = &zero; bb = &x1; break;
  }
  *ro = *rr + m;
  *go = *gg + m;
  *bo = *bb + m;
}

}  // namespace

Var flip_lr(const Var& img) {
  const auto& s = img->value.shape();
  int H = s[0], W = s[1], C = s[2];
  Tensor out({H, W, C});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < C; ++c) out.at3(h, w, c) = img->value.at3(h, W - 1 - w, c);
  return make_op1(std::move(out), img, [img, H, W, C](Node& n) {
    Tensor& g = img->ensure_grad();
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        for (int c = 0; c < C; ++c) g.at3(h, W - 1 - w, c) += n.grad.at3(h, w, c);
  });
}

Var flip_ud(const Var& img) {
  const auto& s = img->value.shape();
  int H = s[0], W = s[1], C = s[2];
  Tensor out({H, W, C});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < C; ++c) out.at3(h, w, c) = img->value.at3(H - 1 - h, w, c);
  return make_op1(std::move(out), img, [img, H, W, C](Node& n) {
    Tensor& g = img->ensure_grad();
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        for (int c = 0; c < C; ++c) g.at3(H - 1 - h, w, c) += n.grad.at3(h, w, c);
  });
}

Var hsv_adjust(const Var& img, float hue_shift, float sat_mult) {
  const auto& s = img->value.shape();
  if (s.size() != 3 || s[2] != 3) throw ContractViolation("hsv_adjust: expects HxWx3");
  if (hue_shift == 0.0f && sat_mult == 1.0f) {
    // Identity short-circuit keeps the identity-transform invariant exact.
    Tensor out = img->value;
    return make_op1(std::move(out), img, [img](Node& n) {
      float* g = img->ensure_grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
    });
  }
  int H = s[0], W = s[1];
  Tensor out({H, W, 3});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      Dual3 r(img->value.at3(h, w, 0)), g(img->value.at3(h, w, 1)), b(img->value.at3(h, w, 2));
      Dual3 ro, go, bo;
      hsv_adjust_px(r, g, b, hue_shift, sat_mult, &ro, &go, &bo);
      out.at3(h, w, 0) = ro.v;
      out.at3(h, w, 1) = go.v;
      out.at3(h, w, 2) = bo.v;
    }
  return make_op1(std::move(out), img, [img, hue_shift, sat_mult, H, W](Node& n) {
    Tensor& gx = img->ensure_grad();
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        Dual3 r(img->value.at3(h, w, 0), 1, 0, 0);
        Dual3 g(img->value.at3(h, w, 1), 0, 1, 0);
        Dual3 b(img->value.at3(h, w, 2), 0, 0, 1);
        Dual3 ro, go, bo;
        hsv_adjust_px(r, g, b, hue_shift, sat_mult, &ro, &go, &bo);
        float g0 = n.grad.at3(h, w, 0), g1 = n.grad.at3(h, w, 1), g2 = n.grad.at3(h, w, 2);
        for (int c = 0; c < 3; ++c)
          gx.at3(h, w, c) += g0 * ro.d[c] + g1 * go.d[c] + g2 * bo.d[c];
      }
  });
}

namespace {

// Separable triangle-filter taps for one output coordinate. The filter
// support scales with the downscale ratio so minification averages every
// source pixel (a printed patch seen small is area-averaged, and gradients
// then reach the whole patch); magnification reduces to classic bilinear.
struct Taps {
  int lo = 0;
  std::vector<float> w;
};

Taps resize_taps(int out_i, int in_size, float scale) {
  float center = (out_i + 0.5f) * scale - 0.5f;
  float support = std::max(1.0f, scale);
  Taps t;
  t.lo = std::max(0, static_cast<int>(std::ceil(center - support)));
  int hi = std::min(in_size - 1, static_cast<int>(std::floor(center + support)));
  float sum = 0.0f;
  for (int i = t.lo; i <= hi; ++i) {
    float wv = 1.0f - std::fabs(i - center) / support;
    if (wv < 0.0f) wv = 0.0f;
    t.w.push_back(wv);
    sum += wv;
  }
  if (sum <= 0.0f && !t.w.empty()) {
    t.w.assign(t.w.size(), 1.0f / t.w.size());
  } else {
    for (auto& wv : t.w) wv /= sum;
  }
  return t;
}

}  // namespace

Var resize_bilinear(const Var& img, int out_h, int out_w) {
  const auto& s = img->value.shape();
  if (s.size() != 3) throw ContractViolation("resize_bilinear: expects HWC");
  int H = s[0], W = s[1], C = s[2];
  if (out_h == H && out_w == W) {
    Tensor out = img->value;
    return make_op1(std::move(out), img, [img](Node& n) {
      float* g = img->ensure_grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
    });
  }
  float sy = float(H) / out_h, sx = float(W) / out_w;
  std::vector<Taps> ty(static_cast<size_t>(out_h)), tx(static_cast<size_t>(out_w));
  for (int oy = 0; oy < out_h; ++oy) ty[static_cast<size_t>(oy)] = resize_taps(oy, H, sy);
  for (int ox = 0; ox < out_w; ++ox) tx[static_cast<size_t>(ox)] = resize_taps(ox, W, sx);
  Tensor out({out_h, out_w, C});
  for (int oy = 0; oy < out_h; ++oy) {
    const Taps& ay = ty[static_cast<size_t>(oy)];
    for (int ox = 0; ox < out_w; ++ox) {
      const Taps& ax = tx[static_cast<size_t>(ox)];
      for (int c = 0; c < C; ++c) {
        float acc = 0.0f;
        for (size_t iy = 0; iy < ay.w.size(); ++iy)
          for (size_t ix = 0; ix < ax.w.size(); ++ix)
            acc += ay.w[iy] * ax.w[ix] *
                   img->value.at3(ay.lo + static_cast<int>(iy), ax.lo + static_cast<int>(ix), c);
        out.at3(oy, ox, c) = acc;
      }
    }
  }
  return make_op1(std::move(out), img, [img, out_h, out_w, C, ty, tx](Node& n) {
    Tensor& g = img->ensure_grad();
    for (int oy = 0; oy < out_h; ++oy) {
      const Taps& ay = ty[static_cast<size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const Taps& ax = tx[static_cast<size_t>(ox)];
        for (int c = 0; c < C; ++c) {
          float go = n.grad.at3(oy, ox, c);
          for (size_t iy = 0; iy < ay.w.size(); ++iy)
            for (size_t ix = 0; ix < ax.w.size(); ++ix)
              g.at3(ay.lo + static_cast<int>(iy), ax.lo + static_cast<int>(ix), c) +=
                  go * ay.w[iy] * ax.w[ix];
        }
      }
    }
  });
}

Var rotate_bilinear(const Var& img, float angle_deg, Tensor* out_mask) {
  const auto& s = img->value.shape();
  if (s.size() != 3) throw ContractViolation("rotate_bilinear: expects HWC");
  int H = s[0], W = s[1], C = s[2];
  if (angle_deg == 0.0f) {
    if (out_mask) *out_mask = Tensor::full({H, W}, 1.0f);
    Tensor out = img->value;
    return make_op1(std::move(out), img, [img](Node& n) {
      float* g = img->ensure_grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
    });
  }
  float rad = angle_deg * 3.14159265358979323846f / 180.0f;
  float ca = std::cos(rad), sa = std::sin(rad);
  float cy = (H - 1) * 0.5f, cx = (W - 1) * 0.5f;
  Tensor out({H, W, C});
  Tensor mask({H, W});
  for (int oy = 0; oy < H; ++oy)
    for (int ox = 0; ox < W; ++ox) {
      float dy = oy - cy, dx = ox - cx;
      // Inverse mapping of a CCW rotation by angle_deg.
      float sxf = cx + ca * dx + sa * dy;
      float syf = cy - sa * dx + ca * dy;
      if (sxf < 0.0f || sxf > W - 1 || syf < 0.0f || syf > H - 1) continue;
      mask[int64_t(oy) * W + ox] = 1.0f;
      int x0 = static_cast<int>(std::floor(sxf));
      int y0 = static_cast<int>(std::floor(syf));
      float fx = sxf - x0, fy = syf - y0;
      int x1 = std::min(W - 1, x0 + 1), y1 = std::min(H - 1, y0 + 1);
      for (int c = 0; c < C; ++c) {
        out.at3(oy, ox, c) =
            (1 - fy) * ((1 - fx) * img->value.at3(y0, x0, c) + fx * img->value.at3(y0, x1, c)) +
            fy * ((1 - fx) * img->value.at3(y1, x0, c) + fx * img->value.at3(y1, x1, c));
      }
    }
  if (out_mask) *out_mask = mask;
  return make_op1(std::move(out), img, [img, H, W, C, ca, sa, cy, cx](Node& n) {
    Tensor& g = img->ensure_grad();
    for (int oy = 0; oy < H; ++oy)
      for (int ox = 0; ox < W; ++ox) {
        float dy = oy - cy, dx = ox - cx;
        float sxf = cx + ca * dx + sa * dy;
        float syf = cy - sa * dx + ca * dy;
        if (sxf < 0.0f || sxf > W - 1 || syf < 0.0f || syf > H - 1) continue;
        int x0 = static_cast<int>(std::floor(sxf));
        int y0 = static_cast<int>(std::floor(syf));
        float fx = sxf - x0, fy = syf - y0;
        int x1 = std::min(W - 1, x0 + 1), y1 = std::min(H - 1, y0 + 1);
        for (int c = 0; c < C; ++c) {
          float go = n.grad.at3(oy, ox, c);
          g.at3(y0, x0, c) += go * (1 - fy) * (1 - fx);
          g.at3(y0, x1, c) += go * (1 - fy) * fx;
          g.at3(y1, x0, c) += go * fy * (1 - fx);
          g.at3(y1, x1, c) += go * fy * fx;
        }
      }
  });
}

Var paste(const Var& bg, const Var& fg, const Tensor& mask, int y0, int x0) {
  const auto& bs = bg->value.shape();
  const auto& fs = fg->value.shape();
  if (bs.size() != 3 || fs.size() != 3 || bs[2] != fs[2]) throw ContractViolation("paste: shapes");
  int H = bs[0], W = bs[1], C = bs[2];
  int fh = fs[0], fw = fs[1];
  if (mask.shape() != std::vector<int>{fh, fw}) throw ContractViolation("paste: mask shape");
  if (y0 < 0 || x0 < 0 || y0 + fh > H || x0 + fw > W)
    throw ContractViolation("paste: foreground footprint exceeds image bounds");
  Tensor out = bg->value;
  for (int i = 0; i < fh; ++i)
    for (int j = 0; j < fw; ++j) {
      float m = mask[int64_t(i) * fw + j];
      if (m == 0.0f) continue;
      for (int c = 0; c < C; ++c)
        out.at3(y0 + i, x0 + j, c) =
            (1.0f - m) * bg->value.at3(y0 + i, x0 + j, c) + m * fg->value.at3(i, j, c);
    }
  Tensor msk = mask;
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  n->requires_grad = bg->requires_grad || fg->requires_grad;
  if (n->requires_grad) {
    n->parents = {bg, fg};
    n->backward_fn = [bg, fg, msk, y0, x0, H, W, C, fh, fw](Node& nd) {
      if (fg->requires_grad) {
        Tensor& g = fg->ensure_grad();
        for (int i = 0; i < fh; ++i)
          for (int j = 0; j < fw; ++j) {
            float m = msk[int64_t(i) * fw + j];
            if (m == 0.0f) continue;
            for (int c = 0; c < C; ++c) g.at3(i, j, c) += m * nd.grad.at3(y0 + i, x0 + j, c);
          }
      }
      if (bg->requires_grad) {
        Tensor& g = bg->ensure_grad();
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            bool inside = h >= y0 && h < y0 + fh && w >= x0 && w < x0 + fw;
            float m = inside ? msk[int64_t(h - y0) * fw + (w - x0)] : 0.0f;
            for (int c = 0; c < C; ++c) g.at3(h, w, c) += (1.0f - m) * nd.grad.at3(h, w, c);
          }
      }
    };
  }
  return n;
}

Var tv_loss(const Var& patch, bool normalized) {
  const auto& s = patch->value.shape();
  if (s.size() != 3) throw ContractViolation("tv_loss: expects HWC");
  int H = s[0], W = s[1], C = s[2];
  if (H < 2 || W < 2) throw ContractViolation("tv_loss: patch side must be >= 2");
  double acc = 0.0;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < C; ++c) {
        float v = patch->value.at3(h, w, c);
        if (w + 1 < W) acc += std::fabs(patch->value.at3(h, w + 1, c) - v);
        if (h + 1 < H) acc += std::fabs(patch->value.at3(h + 1, w, c) - v);
      }
  float norm = normalized ? 1.0f / (float(H) * float(W)) : 1.0f;
  Tensor out = Tensor::scalar(static_cast<float>(acc) * norm);
  return make_op1(std::move(out), patch, [patch, H, W, C, norm](Node& n) {
    float g = n.grad[0] * norm;
    Tensor& gx = patch->ensure_grad();
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        for (int c = 0; c < C; ++c) {
          float v = patch->value.at3(h, w, c);
          if (w + 1 < W) {
            float d = patch->value.at3(h, w + 1, c) - v;
            float sg = d > 0 ? 1.0f : (d < 0 ? -1.0f : 0.0f);
            gx.at3(h, w + 1, c) += g * sg;
            gx.at3(h, w, c) -= g * sg;
          }
          if (h + 1 < H) {
            float d = patch->value.at3(h + 1, w, c) - v;
            float sg = d > 0 ? 1.0f : (d < 0 ? -1.0f : 0.0f);
            gx.at3(h + 1, w, c) += g * sg;
            gx.at3(h, w, c) -= g * sg;
          }
        }
  });
}

Var nps_loss(const Var& patch, const std::vector<std::array<float, 3>>& colors, bool normalized) {
  const auto& s = patch->value.shape();
  if (s.size() != 3 || s[2] != 3) throw ContractViolation("nps_loss: expects HxWx3");
  if (colors.empty()) throw ConfigError("nps_loss: printable color set is empty");
  int H = s[0], W = s[1];
  double acc = 0.0;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      float r = patch->value.at3(h, w, 0), g = patch->value.at3(h, w, 1),
            b = patch->value.at3(h, w, 2);
      float best = 1e30f;
      for (const auto& col : colors) {
        float d0 = r - col[0], d1 = g - col[1], d2 = b - col[2];
        float d = d0 * d0 + d1 * d1 + d2 * d2;
        if (d < best) best = d;
      }
      acc += std::sqrt(best);
    }
  float norm = normalized ? 1.0f / (float(H) * float(W)) : 1.0f;
  Tensor out = Tensor::scalar(static_cast<float>(acc) * norm);
  return make_op1(std::move(out), patch, [patch, colors, H, W, norm](Node& n) {
    float gscale = n.grad[0] * norm;
    Tensor& gx = patch->ensure_grad();
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        float r = patch->value.at3(h, w, 0), g = patch->value.at3(h, w, 1),
              b = patch->value.at3(h, w, 2);
        float best = 1e30f;
        const std::array<float, 3>* bc = nullptr;
        for (const auto& col : colors) {
          float d0 = r - col[0], d1 = g - col[1], d2 = b - col[2];
          float d = d0 * d0 + d1 * d1 + d2 * d2;
          if (d < best) {
            best = d;
            bc = &col;
          }
        }
        float dist = std::sqrt(best);
        if (dist <= 0.0f) continue;
        float inv = gscale / dist;
        gx.at3(h, w, 0) += inv * (r - (*bc)[0]);
        gx.at3(h, w, 1) += inv * (g - (*bc)[1]);
        gx.at3(h, w, 2) += inv * (b - (*bc)[2]);
      }
  });
}

}  // namespace ad
}  // namespace uavpd
