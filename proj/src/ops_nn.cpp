#include <cblas.h>

#include <cmath>
#include <cstring>

#include "uavpd/autodiff.hpp"
#include "uavpd/errors.hpp"

namespace uavpd {
namespace ad {

namespace {

Var make_op_v(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// col buffer layout: [Ci*kh*kw, Ho*Wo]
void im2col(const float* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, float* col) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* dst = col + (int64_t(c) * kh * kw + ki * kw + kj) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            std::memset(dst + int64_t(oy) * Wo, 0, sizeof(float) * Wo);
            continue;
          }
          const float* src_row = x + (int64_t(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kj;
            dst[int64_t(oy) * Wo + ox] = (ix >= 0 && ix < W) ? src_row[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, float* x) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* src = col + (int64_t(c) * kh * kw + ki * kw + kj) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          float* dst_row = x + (int64_t(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst_row[ix] += src[int64_t(oy) * Wo + ox];
          }
        }
      }
    }
  }
}

void sgemm(bool ta, bool tb, int M, int N, int K, float alpha, const float* A, int lda,
           const float* B, int ldb, float beta, float* C, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, M, N,
              K, alpha, A, lda, B, ldb, beta, C, ldc);
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 4) throw ContractViolation("conv2d: expects 4-D tensors");
  int N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  int Co = ws[0], Cw = ws[1], kh = ws[2], kw = ws[3];
  bool depthwise = groups == Ci && Co == Ci && Cw == 1;
  if (!depthwise && groups != 1) throw ContractViolation("conv2d: unsupported groups");
  if (!depthwise && Cw != Ci) throw ContractViolation("conv2d: channel mismatch");
  int Ho = conv_out_dim(H, kh, stride, pad), Wo = conv_out_dim(W, kw, stride, pad);
  Tensor out({N, Co, Ho, Wo});
  const bool has_bias = b && !b->value.empty();

  if (depthwise) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Co; ++c) {
        const float* xin = x->value.data() + (int64_t(n) * Ci + c) * H * W;
        const float* ker = w->value.data() + int64_t(c) * kh * kw;
        float* yo = out.data() + (int64_t(n) * Co + c) * Ho * Wo;
        float bias = has_bias ? b->value[c] : 0.0f;
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            float acc = bias;
            for (int ki = 0; ki < kh; ++ki) {
              int iy = oy * stride - pad + ki;
              if (iy < 0 || iy >= H) continue;
              for (int kj = 0; kj < kw; ++kj) {
                int ix = ox * stride - pad + kj;
                if (ix >= 0 && ix < W) acc += ker[ki * kw + kj] * xin[int64_t(iy) * W + ix];
              }
            }
            yo[int64_t(oy) * Wo + ox] = acc;
          }
      }
  } else {
    int64_t colsz = int64_t(Ci) * kh * kw * Ho * Wo;
    std::vector<float> col(static_cast<size_t>(colsz));
    for (int n = 0; n < N; ++n) {
      im2col(x->value.data() + int64_t(n) * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo,
             col.data());
      sgemm(false, false, Co, Ho * Wo, Ci * kh * kw, 1.0f, w->value.data(), Ci * kh * kw,
            col.data(), Ho * Wo, 0.0f, out.data() + int64_t(n) * Co * Ho * Wo, Ho * Wo);
    }
    if (has_bias) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < Co; ++c) {
          float* yo = out.data() + (int64_t(n) * Co + c) * Ho * Wo;
          float bias = b->value[c];
          for (int64_t i = 0; i < int64_t(Ho) * Wo; ++i) yo[i] += bias;
        }
    }
  }

  std::vector<Var> parents = has_bias ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op_v(
      std::move(out), std::move(parents),
      [x, w, b, stride, pad, depthwise, N, Ci, H, W, Co, kh, kw, Ho, Wo, has_bias](Node& nd) {
        const Tensor& gy = nd.grad;
        if (has_bias && b->requires_grad) {
          float* gb = b->ensure_grad().data();
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < Co; ++c) {
              const float* g = gy.data() + (int64_t(n) * Co + c) * Ho * Wo;
              double acc = 0.0;
              for (int64_t i = 0; i < int64_t(Ho) * Wo; ++i) acc += g[i];
              gb[c] += static_cast<float>(acc);
            }
        }
        if (depthwise) {
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < Ci; ++c) {
              const float* g = gy.data() + (int64_t(n) * Co + c) * Ho * Wo;
              const float* xin = x->value.data() + (int64_t(n) * Ci + c) * H * W;
              const float* ker = w->value.data() + int64_t(c) * kh * kw;
              float* gw = w->requires_grad ? w->ensure_grad().data() + int64_t(c) * kh * kw : nullptr;
              float* gx = x->requires_grad ? x->ensure_grad().data() + (int64_t(n) * Ci + c) * H * W : nullptr;
              for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                  float go = g[int64_t(oy) * Wo + ox];
                  if (go == 0.0f) continue;
                  for (int ki = 0; ki < kh; ++ki) {
                    int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) continue;
                    for (int kj = 0; kj < kw; ++kj) {
                      int ix = ox * stride - pad + kj;
                      if (ix < 0 || ix >= W) continue;
                      if (gw) gw[ki * kw + kj] += go * xin[int64_t(iy) * W + ix];
                      if (gx) gx[int64_t(iy) * W + ix] += go * ker[ki * kw + kj];
                    }
                  }
                }
            }
          return;
        }
        int64_t colsz = int64_t(Ci) * kh * kw * Ho * Wo;
        std::vector<float> col(static_cast<size_t>(colsz));
        std::vector<float> gcol;
        if (x->requires_grad) gcol.resize(static_cast<size_t>(colsz));
        for (int n = 0; n < N; ++n) {
          const float* g = gy.data() + int64_t(n) * Co * Ho * Wo;
          if (w->requires_grad) {
            im2col(x->value.data() + int64_t(n) * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho,
                   Wo, col.data());
            // dW [Co, Ci*kh*kw] += gy_n [Co, HoWo] * col^T [HoWo, Ci*kh*kw]
            sgemm(false, true, Co, Ci * kh * kw, Ho * Wo, 1.0f, g, Ho * Wo, col.data(), Ho * Wo,
                  1.0f, w->ensure_grad().data(), Ci * kh * kw);
          }
          if (x->requires_grad) {
            // gcol [Ci*kh*kw, HoWo] = W^T [Ci*kh*kw, Co] * gy_n [Co, HoWo]
            sgemm(true, false, Ci * kh * kw, Ho * Wo, Co, 1.0f, w->value.data(), Ci * kh * kw, g,
                  Ho * Wo, 0.0f, gcol.data(), Ho * Wo);
            col2im_add(gcol.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                       x->ensure_grad().data() + int64_t(n) * Ci * H * W);
          }
        }
      });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) throw ContractViolation("linear: shapes");
  int N = xs[0], Ci = xs[1], Co = ws[0];
  Tensor out({N, Co});
  sgemm(false, true, N, Co, Ci, 1.0f, x->value.data(), Ci, w->value.data(), Ci, 0.0f, out.data(),
        Co);
  const bool has_bias = b && !b->value.empty();
  if (has_bias)
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Co; ++c) out[int64_t(n) * Co + c] += b->value[c];
  std::vector<Var> parents = has_bias ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op_v(std::move(out), std::move(parents), [x, w, b, N, Ci, Co, has_bias](Node& nd) {
    const float* g = nd.grad.data();
    if (x->requires_grad)
      sgemm(false, false, N, Ci, Co, 1.0f, g, Co, w->value.data(), Ci, 1.0f,
            x->ensure_grad().data(), Ci);
    if (w->requires_grad)
      sgemm(true, false, Co, Ci, N, 1.0f, g, Co, x->value.data(), Ci, 1.0f,
            w->ensure_grad().data(), Ci);
    if (has_bias && b->requires_grad) {
      float* gb = b->ensure_grad().data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < Co; ++c) gb[c] += g[int64_t(n) * Co + c];
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, float momentum, float eps) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw ContractViolation("batch_norm: expects NCHW");
  int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  int64_t m = int64_t(N) * H * W;
  Tensor mean_t({C}), invstd_t({C});
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x->value.data() + (int64_t(n) * C + c) * H * W;
        for (int64_t i = 0; i < int64_t(H) * W; ++i) s += p[i];
      }
      float mu = static_cast<float>(s / double(m));
      double v = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x->value.data() + (int64_t(n) * C + c) * H * W;
        for (int64_t i = 0; i < int64_t(H) * W; ++i) {
          double d = p[i] - mu;
          v += d * d;
        }
      }
      float var = static_cast<float>(v / double(m));
      mean_t[c] = mu;
      invstd_t[c] = 1.0f / std::sqrt(var + eps);
      running_mean[c] = (1.0f - momentum) * running_mean[c] + momentum * mu;
      // Unbiased variance for the running estimate.
      float uvar = m > 1 ? static_cast<float>(v / double(m - 1)) : var;
      running_var[c] = (1.0f - momentum) * running_var[c] + momentum * uvar;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean_t[c] = running_mean[c];
      invstd_t[c] = 1.0f / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = x->value.data() + (int64_t(n) * C + c) * H * W;
      float* o = out.data() + (int64_t(n) * C + c) * H * W;
      float mu = mean_t[c], is = invstd_t[c], ga = gamma->value[c], be = beta->value[c];
      for (int64_t i = 0; i < int64_t(H) * W; ++i) o[i] = (p[i] - mu) * is * ga + be;
    }
  return make_op_v(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, mean_t, invstd_t, training, N, C, H, W, m](Node& nd) {
                     const Tensor& gy = nd.grad;
                     for (int c = 0; c < C; ++c) {
                       float mu = mean_t[c], is = invstd_t[c], ga = gamma->value[c];
                       double sum_gy = 0.0, sum_gy_xhat = 0.0;
                       for (int n = 0; n < N; ++n) {
                         const float* p = x->value.data() + (int64_t(n) * C + c) * H * W;
                         const float* g = gy.data() + (int64_t(n) * C + c) * H * W;
                         for (int64_t i = 0; i < int64_t(H) * W; ++i) {
                           sum_gy += g[i];
                           sum_gy_xhat += double(g[i]) * (p[i] - mu) * is;
                         }
                       }
                       if (gamma->requires_grad) gamma->ensure_grad()[c] += static_cast<float>(sum_gy_xhat);
                       if (beta->requires_grad) beta->ensure_grad()[c] += static_cast<float>(sum_gy);
                       if (!x->requires_grad) continue;
                       float* gx_base = x->ensure_grad().data();
                       float k1 = static_cast<float>(sum_gy / double(m));
                       float k2 = static_cast<float>(sum_gy_xhat / double(m));
                       for (int n = 0; n < N; ++n) {
                         const float* p = x->value.data() + (int64_t(n) * C + c) * H * W;
                         const float* g = gy.data() + (int64_t(n) * C + c) * H * W;
                         float* gx = gx_base + (int64_t(n) * C + c) * H * W;
                         if (training) {
                           for (int64_t i = 0; i < int64_t(H) * W; ++i) {
                             float xhat = (p[i] - mu) * is;
                             gx[i] += ga * is * (g[i] - k1 - xhat * k2);
                           }
                         } else {
                           for (int64_t i = 0; i < int64_t(H) * W; ++i) gx[i] += ga * is * g[i];
                         }
                       }
                     }
                   });
}

Var upsample_bilinear_2x(const Var& x) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw ContractViolation("upsample: expects NCHW");
  int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  int Ho = H * 2, Wo = W * 2;
  // Half-pixel-center mapping; source coords clamped at borders.
  auto src_of = [](int o) { return (o + 0.5f) * 0.5f - 0.5f; };
  Tensor out({N, C, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = x->value.data() + (int64_t(n) * C + c) * H * W;
      float* o = out.data() + (int64_t(n) * C + c) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        float sy = src_of(oy);
        int y0 = static_cast<int>(std::floor(sy));
        float fy = sy - y0;
        int y0c = std::max(0, std::min(H - 1, y0)), y1c = std::max(0, std::min(H - 1, y0 + 1));
        for (int ox = 0; ox < Wo; ++ox) {
          float sx = src_of(ox);
          int x0 = static_cast<int>(std::floor(sx));
          float fx = sx - x0;
          int x0c = std::max(0, std::min(W - 1, x0)), x1c = std::max(0, std::min(W - 1, x0 + 1));
          o[int64_t(oy) * Wo + ox] = (1 - fy) * ((1 - fx) * p[int64_t(y0c) * W + x0c] + fx * p[int64_t(y0c) * W + x1c]) +
                                     fy * ((1 - fx) * p[int64_t(y1c) * W + x0c] + fx * p[int64_t(y1c) * W + x1c]);
        }
      }
    }
  return make_op_v(std::move(out), {x}, [x, N, C, H, W, Ho, Wo](Node& nd) {
    auto src_of = [](int o) { return (o + 0.5f) * 0.5f - 0.5f; };
    float* gx_base = x->ensure_grad().data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const float* g = nd.grad.data() + (int64_t(n) * C + c) * Ho * Wo;
        float* gx = gx_base + (int64_t(n) * C + c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          float sy = src_of(oy);
          int y0 = static_cast<int>(std::floor(sy));
          float fy = sy - y0;
          int y0c = std::max(0, std::min(H - 1, y0)), y1c = std::max(0, std::min(H - 1, y0 + 1));
          for (int ox = 0; ox < Wo; ++ox) {
            float sx = src_of(ox);
            int x0 = static_cast<int>(std::floor(sx));
            float fx = sx - x0;
            int x0c = std::max(0, std::min(W - 1, x0)), x1c = std::max(0, std::min(W - 1, x0 + 1));
            float go = g[int64_t(oy) * Wo + ox];
            gx[int64_t(y0c) * W + x0c] += go * (1 - fy) * (1 - fx);
            gx[int64_t(y0c) * W + x1c] += go * (1 - fy) * fx;
            gx[int64_t(y1c) * W + x0c] += go * fy * (1 - fx);
            gx[int64_t(y1c) * W + x1c] += go * fy * fx;
          }
        }
      }
  });
}

Var global_mean_hw(const Var& x) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw ContractViolation("global_mean_hw: expects NCHW");
  int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = x->value.data() + (int64_t(n) * C + c) * H * W;
      double s = 0.0;
      for (int64_t i = 0; i < int64_t(H) * W; ++i) s += p[i];
      out[int64_t(n) * C + c] = static_cast<float>(s / (double(H) * W));
    }
  return make_op_v(std::move(out), {x}, [x, N, C, H, W](Node& nd) {
    float* gx = x->ensure_grad().data();
    float inv = 1.0f / (float(H) * float(W));
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        float g = nd.grad[int64_t(n) * C + c] * inv;
        float* dst = gx + (int64_t(n) * C + c) * H * W;
        for (int64_t i = 0; i < int64_t(H) * W; ++i) dst[i] += g;
      }
  });
}

Var scale_channels(const Var& x, const Var& s) {
  const auto& xs = x->value.shape();
  const auto& ss = s->value.shape();
  if (xs.size() != 4 || ss.size() != 2 || ss[0] != xs[0] || ss[1] != xs[1])
    throw ContractViolation("scale_channels: shapes");
  int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = x->value.data() + (int64_t(n) * C + c) * H * W;
      float* o = out.data() + (int64_t(n) * C + c) * H * W;
      float sv = s->value[int64_t(n) * C + c];
      for (int64_t i = 0; i < int64_t(H) * W; ++i) o[i] = p[i] * sv;
    }
  return make_op_v(std::move(out), {x, s}, [x, s, N, C, H, W](Node& nd) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const float* g = nd.grad.data() + (int64_t(n) * C + c) * H * W;
        const float* p = x->value.data() + (int64_t(n) * C + c) * H * W;
        float sv = s->value[int64_t(n) * C + c];
        if (x->requires_grad) {
          float* gx = x->ensure_grad().data() + (int64_t(n) * C + c) * H * W;
          for (int64_t i = 0; i < int64_t(H) * W; ++i) gx[i] += g[i] * sv;
        }
        if (s->requires_grad) {
          double acc = 0.0;
          for (int64_t i = 0; i < int64_t(H) * W; ++i) acc += double(g[i]) * p[i];
          s->ensure_grad()[int64_t(n) * C + c] += static_cast<float>(acc);
        }
      }
  });
}

Var scale_spatial(const Var& x, const Var& a) {
  const auto& xs = x->value.shape();
  const auto& as = a->value.shape();
  if (xs.size() != 4 || as.size() != 4 || as[0] != xs[0] || as[1] != 1 || as[2] != xs[2] ||
      as[3] != xs[3])
    throw ContractViolation("scale_spatial: shapes");
  int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  int64_t hw = int64_t(H) * W;
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n) {
    const float* am = a->value.data() + n * hw;
    for (int c = 0; c < C; ++c) {
      const float* p = x->value.data() + (int64_t(n) * C + c) * hw;
      float* o = out.data() + (int64_t(n) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) o[i] = p[i] * am[i];
    }
  }
  return make_op_v(std::move(out), {x, a}, [x, a, N, C, hw](Node& nd) {
    for (int n = 0; n < N; ++n) {
      const float* am = a->value.data() + n * hw;
      float* ga = a->requires_grad ? a->ensure_grad().data() + n * hw : nullptr;
      for (int c = 0; c < C; ++c) {
        const float* g = nd.grad.data() + (int64_t(n) * C + c) * hw;
        const float* p = x->value.data() + (int64_t(n) * C + c) * hw;
        if (x->requires_grad) {
          float* gx = x->ensure_grad().data() + (int64_t(n) * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) gx[i] += g[i] * am[i];
        }
        if (ga)
          for (int64_t i = 0; i < hw; ++i) ga[i] += g[i] * p[i];
      }
    }
  });
}

}  // namespace ad
}  // namespace uavpd
