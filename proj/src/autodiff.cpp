#include "uavpd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "uavpd/errors.hpp"

namespace uavpd {
namespace ad {

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

namespace {

bool any_grad(std::initializer_list<const Var*> vars) {
  for (const Var* v : vars)
    if (*v && (*v)->requires_grad) return true;
  return false;
}

Var make_op(Tensor value, std::initializer_list<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.assign(parents.begin(), parents.end());
    n->backward_fn = std::move(fn);
  }
  return n;
}

}  // namespace

void backward(const Var& root) {
  if (root->value.numel() != 1)
    throw ContractViolation("backward() requires a scalar root, got shape " + root->value.shape_str());
  // Post-order DFS for topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

void zero_grad(const std::vector<Var>& vars) {
  for (const Var& v : vars) v->grad = Tensor();
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ContractViolation("add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
  Tensor out = a->value;
  const float* pb = b->value.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    const float* g = n.grad.data();
    if (a->requires_grad) {
      float* ga = a->ensure_grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
    }
    if (b->requires_grad) {
      float* gb = b->ensure_grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw ContractViolation("sub: shape mismatch");
  Tensor out = a->value;
  const float* pb = b->value.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    const float* g = n.grad.data();
    if (a->requires_grad) {
      float* ga = a->ensure_grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
    }
    if (b->requires_grad) {
      float* gb = b->ensure_grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw ContractViolation("mul: shape mismatch");
  Tensor out = a->value;
  const float* pb = b->value.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    const float* g = n.grad.data();
    if (a->requires_grad) {
      float* ga = a->ensure_grad().data();
      const float* vb = b->value.data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * vb[i];
    }
    if (b->requires_grad) {
      float* gb = b->ensure_grad().data();
      const float* va = a->value.data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var add_scalar(const Var& a, float s) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v += s;
  return make_op(std::move(out), {a}, [a](Node& n) {
    float* ga = a->ensure_grad().data();
    const float* g = n.grad.data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
  });
}

Var mul_scalar(const Var& a, float s) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v *= s;
  return make_op(std::move(out), {a}, [a, s](Node& n) {
    float* ga = a->ensure_grad().data();
    const float* g = n.grad.data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * s;
  });
}

namespace {
Var scalar_broadcast_op(const Var& a, const Var& s, float sign) {
  if (s->value.numel() != 1) throw ContractViolation("scalar var op: s must have numel 1");
  Tensor out = a->value;
  const float sv = sign * s->value[0];
  for (auto& v : out.vec()) v += sv;
  return make_op(std::move(out), {a, s}, [a, s, sign](Node& n) {
    const float* g = n.grad.data();
    if (a->requires_grad) {
      float* ga = a->ensure_grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
    }
    if (s->requires_grad) {
      double acc = 0.0;
      for (int64_t i = 0; i < n.grad.numel(); ++i) acc += g[i];
      s->ensure_grad()[0] += static_cast<float>(sign * acc);
    }
  });
}
}  // namespace

Var add_sv(const Var& a, const Var& s) { return scalar_broadcast_op(a, s, 1.0f); }
Var sub_sv(const Var& a, const Var& s) { return scalar_broadcast_op(a, s, -1.0f); }

Var relu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = v > 0.0f ? v : 0.0f;
  return make_op(std::move(out), {a}, [a](Node& n) {
    float* ga = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* x = a->value.data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += x[i] > 0.0f ? g[i] : 0.0f;
  });
}

Var hardswish(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) {
    float r = v + 3.0f;
    r = r < 0.0f ? 0.0f : (r > 6.0f ? 6.0f : r);
    v = v * r / 6.0f;
  }
  return make_op(std::move(out), {a}, [a](Node& n) {
    float* ga = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* x = a->value.data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      float d;
      if (x[i] <= -3.0f) d = 0.0f;
      else if (x[i] >= 3.0f) d = 1.0f;
      else d = (2.0f * x[i] + 3.0f) / 6.0f;
      ga[i] += g[i] * d;
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = 1.0f / (1.0f + std::exp(-v));
  Tensor saved = out;
  return make_op(std::move(out), {a}, [a, saved](Node& n) {
    float* ga = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* y = saved.data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * y[i] * (1.0f - y[i]);
  });
}

Var tanh_op(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = std::tanh(v);
  Tensor saved = out;
  return make_op(std::move(out), {a}, [a, saved](Node& n) {
    float* ga = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* y = saved.data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * (1.0f - y[i] * y[i]);
  });
}

Var clamp01(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return make_op(std::move(out), {a}, [a](Node& n) {
    float* ga = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* x = a->value.data();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      if (x[i] >= 0.0f && x[i] <= 1.0f) ga[i] += g[i];
  });
}

// ---- reductions / losses ----

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a->value.sum());
  return make_op(std::move(out), {a}, [a](Node& n) {
    float g = n.grad[0];
    float* ga = a->ensure_grad().data();
    for (int64_t i = 0; i < a->value.numel(); ++i) ga[i] += g;
  });
}

Var mean(const Var& a) {
  int64_t m = a->value.numel();
  Tensor out = Tensor::scalar(a->value.mean());
  return make_op(std::move(out), {a}, [a, m](Node& n) {
    float g = n.grad[0] / static_cast<float>(m);
    float* ga = a->ensure_grad().data();
    for (int64_t i = 0; i < m; ++i) ga[i] += g;
  });
}

Var mse_loss(const Var& pred, const Tensor& target) {
  if (!pred->value.same_shape(target)) throw ContractViolation("mse_loss: shape mismatch");
  int64_t m = pred->value.numel();
  double acc = 0.0;
  const float* p = pred->value.data();
  const float* t = target.data();
  for (int64_t i = 0; i < m; ++i) {
    double d = double(p[i]) - double(t[i]);
    acc += d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / double(m)));
  Tensor tgt = target;
  return make_op(std::move(out), {pred}, [pred, tgt, m](Node& n) {
    float g = n.grad[0] * 2.0f / static_cast<float>(m);
    float* gp = pred->ensure_grad().data();
    const float* p = pred->value.data();
    const float* t = tgt.data();
    for (int64_t i = 0; i < m; ++i) gp[i] += g * (p[i] - t[i]);
  });
}

Var weighted_mse_sum(const Var& pred, const Tensor& target, const Tensor& weight) {
  if (!pred->value.same_shape(target)) throw ContractViolation("weighted_mse_sum: shape mismatch");
  const bool has_w = !weight.empty();
  if (has_w && !pred->value.same_shape(weight)) throw ContractViolation("weighted_mse_sum: weight shape");
  int64_t m = pred->value.numel();
  double acc = 0.0;
  const float* p = pred->value.data();
  const float* t = target.data();
  const float* w = has_w ? weight.data() : nullptr;
  for (int64_t i = 0; i < m; ++i) {
    double d = double(p[i]) - double(t[i]);
    acc += (w ? w[i] : 1.0f) * d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  Tensor tgt = target, wt = weight;
  return make_op(std::move(out), {pred}, [pred, tgt, wt, has_w, m](Node& n) {
    float g = n.grad[0] * 2.0f;
    float* gp = pred->ensure_grad().data();
    const float* p = pred->value.data();
    const float* t = tgt.data();
    const float* w = has_w ? wt.data() : nullptr;
    for (int64_t i = 0; i < m; ++i) gp[i] += g * (w ? w[i] : 1.0f) * (p[i] - t[i]);
  });
}

Var bce_with_logits_sum(const Var& logits, const Tensor& target, const Tensor& weight) {
  if (!logits->value.same_shape(target)) throw ContractViolation("bce: shape mismatch");
  const bool has_w = !weight.empty();
  if (has_w && !logits->value.same_shape(weight)) throw ContractViolation("bce: weight shape");
  int64_t m = logits->value.numel();
  double acc = 0.0;
  const float* x = logits->value.data();
  const float* t = target.data();
  const float* w = has_w ? weight.data() : nullptr;
  for (int64_t i = 0; i < m; ++i) {
    // Numerically stable: max(x,0) - x*t + log(1 + exp(-|x|)).
    double xi = x[i];
    double l = std::max(xi, 0.0) - xi * t[i] + std::log1p(std::exp(-std::abs(xi)));
    acc += (w ? w[i] : 1.0f) * l;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  Tensor tgt = target, wt = weight;
  return make_op(std::move(out), {logits}, [logits, tgt, wt, has_w, m](Node& n) {
    float g = n.grad[0];
    float* gx = logits->ensure_grad().data();
    const float* x = logits->value.data();
    const float* t = tgt.data();
    const float* w = has_w ? wt.data() : nullptr;
    for (int64_t i = 0; i < m; ++i) {
      float sig = 1.0f / (1.0f + std::exp(-x[i]));
      gx[i] += g * (w ? w[i] : 1.0f) * (sig - t[i]);
    }
  });
}

// ---- shape / indexing ----

Var concat_channels(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ContractViolation("concat_channels: incompatible shapes");
  int N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
  Tensor out({N, Ca + Cb, H, W});
  int64_t hw = int64_t(H) * W;
  for (int n = 0; n < N; ++n) {
    std::copy_n(a->value.data() + n * Ca * hw, Ca * hw, out.data() + int64_t(n) * (Ca + Cb) * hw);
    std::copy_n(b->value.data() + n * Cb * hw, Cb * hw, out.data() + int64_t(n) * (Ca + Cb) * hw + Ca * hw);
  }
  return make_op(std::move(out), {a, b}, [a, b, N, Ca, Cb, hw](Node& n) {
    for (int i = 0; i < N; ++i) {
      const float* g = n.grad.data() + int64_t(i) * (Ca + Cb) * hw;
      if (a->requires_grad) {
        float* ga = a->ensure_grad().data() + int64_t(i) * Ca * hw;
        for (int64_t j = 0; j < Ca * hw; ++j) ga[j] += g[j];
      }
      if (b->requires_grad) {
        float* gb = b->ensure_grad().data() + int64_t(i) * Cb * hw;
        for (int64_t j = 0; j < Cb * hw; ++j) gb[j] += g[Ca * hw + j];
      }
    }
  });
}

Var concat1d(const std::vector<Var>& parts) {
  int64_t total = 0;
  for (const auto& p : parts) total += p->value.numel();
  Tensor out({static_cast<int>(total)});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p->value.data(), p->value.numel(), out.data() + off);
    off += p->value.numel();
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  for (const auto& p : parts)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = parts;
    auto ps = parts;
    n->backward_fn = [ps](Node& nd) {
      int64_t off = 0;
      for (const auto& p : ps) {
        if (p->requires_grad) {
          float* gp = p->ensure_grad().data();
          for (int64_t i = 0; i < p->value.numel(); ++i) gp[i] += nd.grad[off + i];
        }
        off += p->value.numel();
      }
    };
  }
  return n;
}

Var gather(const Var& a, std::vector<int64_t> flat_indices) {
  Tensor out({static_cast<int>(flat_indices.size())});
  for (size_t i = 0; i < flat_indices.size(); ++i) out[static_cast<int64_t>(i)] = a->value[flat_indices[i]];
  return make_op(std::move(out), {a}, [a, idx = std::move(flat_indices)](Node& n) {
    float* ga = a->ensure_grad().data();
    for (size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += n.grad[static_cast<int64_t>(i)];
  });
}

Var stack_images_nchw(const std::vector<Var>& images) {
  if (images.empty()) throw ContractViolation("stack_images_nchw: empty batch");
  int H = images[0]->value.dim(0), W = images[0]->value.dim(1), C = images[0]->value.dim(2);
  int N = static_cast<int>(images.size());
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n) {
    if (images[static_cast<size_t>(n)]->value.shape() != std::vector<int>{H, W, C})
      throw ContractViolation("stack_images_nchw: inconsistent shapes");
    const float* src = images[static_cast<size_t>(n)]->value.data();
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          out.at4(n, c, h, w) = src[(int64_t(h) * W + w) * C + c];
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  for (const auto& im : images)
    if (im->requires_grad) node->requires_grad = true;
  if (node->requires_grad) {
    node->parents = images;
    auto ims = images;
    node->backward_fn = [ims, H, W, C](Node& nd) {
      for (size_t n = 0; n < ims.size(); ++n) {
        if (!ims[n]->requires_grad) continue;
        float* g = ims[n]->ensure_grad().data();
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              g[(int64_t(h) * W + w) * C + c] += nd.grad.at4(static_cast<int>(n), c, h, w);
      }
    };
  }
  return node;
}

Var hwc_to_nchw(const Var& img) { return stack_images_nchw({img}); }

Var nchw_to_hwc(const Var& x, int n) {
  const auto& s = x->value.shape();
  int C = s[1], H = s[2], W = s[3];
  Tensor out({H, W, C});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        out.at3(h, w, c) = x->value.at4(n, c, h, w);
  return make_op(std::move(out), {x}, [x, n, C, H, W](Node& nd) {
    Tensor& gx = x->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          gx.at4(n, c, h, w) += nd.grad.at3(h, w, c);
  });
}

}  // namespace ad

// Tensor method impls that need <cmath>/<algorithm>.
float Tensor::min() const {
  float m = data_.empty() ? 0.0f : data_[0];
  for (float v : data_) m = std::min(m, v);
  return m;
}
float Tensor::max() const {
  float m = data_.empty() ? 0.0f : data_[0];
  for (float v : data_) m = std::max(m, v);
  return m;
}
bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}
std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

}  // namespace uavpd
