#include "uavpd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "uavpd/checkpoint.hpp"
#include "uavpd/errors.hpp"
#include "uavpd/eval.hpp"
#include "uavpd/rng.hpp"

namespace uavpd {

namespace {
float inv_sigmoid_clamped(float p) {
  p = std::clamp(p, 1e-4f, 1.0f - 1e-4f);
  return std::log(p / (1.0f - p));
}
}  // namespace

TinyDetector::TinyDetector(TinyDetectorConfig cfg, const ClassSet& classes)
    : cfg_(std::move(cfg)), classes_(classes) {
  if (classes_.size() != cfg_.num_classes)
    throw ConfigError("TinyDetector: class set size does not match num_classes");
  if (cfg_.input_size % 16 != 0)
    throw ConfigError("TinyDetector: input_size must be a multiple of 16");
  attrs_ = 5 + cfg_.num_classes;
  Rng rng(cfg_.init_seed);
  c1_ = nn::Conv2d(params_, "c1", 3, 16, 3, 2, 1, 1, false, rng);
  b1_ = nn::BatchNorm2d(params_, "b1", 16);
  c2_ = nn::Conv2d(params_, "c2", 16, 32, 3, 2, 1, 1, false, rng);
  b2_ = nn::BatchNorm2d(params_, "b2", 32);
  c3_ = nn::Conv2d(params_, "c3", 32, 48, 3, 1, 1, 1, false, rng);
  b3_ = nn::BatchNorm2d(params_, "b3", 48);
  c4_ = nn::Conv2d(params_, "c4", 48, 64, 3, 2, 1, 1, false, rng);
  b4_ = nn::BatchNorm2d(params_, "b4", 64);
  c5_ = nn::Conv2d(params_, "c5", 64, 96, 3, 2, 1, 1, false, rng);
  b5_ = nn::BatchNorm2d(params_, "b5", 96);
  c6_ = nn::Conv2d(params_, "c6", 96, 96, 3, 1, 1, 1, false, rng);
  b6_ = nn::BatchNorm2d(params_, "b6", 96);
  auto build_level = [&](int stride, const std::vector<float>& sizes) {
    Level lv;
    lv.stride = stride;
    for (float s : sizes)
      for (float r : cfg_.anchor_ratios)
        lv.anchors.emplace_back(s * std::sqrt(r), s / std::sqrt(r));
    return lv;
  };
  levels_.push_back(build_level(8, cfg_.anchor_sizes_s8));
  levels_.push_back(build_level(16, cfg_.anchor_sizes_s16));
  int a8 = static_cast<int>(levels_[0].anchors.size());
  int a16 = static_cast<int>(levels_[1].anchors.size());
  head3_ = nn::Conv2d(params_, "head3", 64, a8 * attrs_, 3, 1, 1, 1, true, rng);
  head4_ = nn::Conv2d(params_, "head4", 96, a16 * attrs_, 3, 1, 1, 1, true, rng);
  // Small head init plus a negative objectness prior keeps the first steps of
  // training stable (raw box logits near zero, background prior ~2%).
  for (nn::Conv2d* head : {&head3_, &head4_}) {
    head->w->value = Tensor::randn(head->w->value.shape(), rng, 0.0f, 0.01f);
    int a = head->b->value.dim(0) / attrs_;
    for (int i = 0; i < a; ++i) head->b->value[int64_t(i) * attrs_ + 4] = -4.0f;
  }
}

TinyDetector::HeadOutput TinyDetector::forward(const ad::Var& x, bool training) const {
  auto h = ad::hardswish(b1_.forward(c1_.forward(x), training));
  h = ad::hardswish(b2_.forward(c2_.forward(h), training));
  h = ad::hardswish(b3_.forward(c3_.forward(h), training));
  auto p3 = ad::hardswish(b4_.forward(c4_.forward(h), training));
  auto p4 = ad::hardswish(b5_.forward(c5_.forward(p3), training));
  p4 = ad::hardswish(b6_.forward(c6_.forward(p4), training));
  return {head3_.forward(p3), head4_.forward(p4)};
}

std::vector<TinyDetector::Candidate> TinyDetector::decode(const HeadOutput& h, int sample) const {
  std::vector<Candidate> out;
  const float size = static_cast<float>(cfg_.input_size);
  for (int li = 0; li < 2; ++li) {
    const ad::Var& head = li == 0 ? h.p3 : h.p4;
    const Level& lv = levels_[static_cast<size_t>(li)];
    const auto& hs = head->value.shape();
    int C = hs[1], H = hs[2], W = hs[3];
    int A = static_cast<int>(lv.anchors.size());
    auto flat = [&](int a, int ch, int y, int x) {
      return ((int64_t(sample) * C + a * attrs_ + ch) * H + y) * W + x;
    };
    for (int a = 0; a < A; ++a)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          Candidate c;
          c.level = li;
          float tx = head->value[flat(a, 0, y, x)];
          float ty = head->value[flat(a, 1, y, x)];
          float tw = std::clamp(head->value[flat(a, 2, y, x)], -4.0f, 4.0f);
          float th = std::clamp(head->value[flat(a, 3, y, x)], -4.0f, 4.0f);
          float cx = (x + 1.0f / (1.0f + std::exp(-tx))) * lv.stride;
          float cy = (y + 1.0f / (1.0f + std::exp(-ty))) * lv.stride;
          float bw = lv.anchors[static_cast<size_t>(a)].first * std::exp(tw);
          float bh = lv.anchors[static_cast<size_t>(a)].second * std::exp(th);
          c.box = clip_box({cx - bw / 2, cy - bh / 2, bw, bh}, size, size);
          c.objectness = 1.0f / (1.0f + std::exp(-head->value[flat(a, 4, y, x)]));
          c.obj_index = flat(a, 4, y, x);
          c.class_probs.resize(static_cast<size_t>(cfg_.num_classes));
          c.cls_index.resize(static_cast<size_t>(cfg_.num_classes));
          for (int k = 0; k < cfg_.num_classes; ++k) {
            c.cls_index[static_cast<size_t>(k)] = flat(a, 5 + k, y, x);
            c.class_probs[static_cast<size_t>(k)] =
                1.0f / (1.0f + std::exp(-head->value[flat(a, 5 + k, y, x)]));
          }
          out.push_back(std::move(c));
        }
  }
  return out;
}

std::vector<Detection> TinyDetector::detect(const ImageSample& image) const {
  if (image.image.dim(0) != cfg_.input_size || image.image.dim(1) != cfg_.input_size)
    throw ContractViolation("detect: image size does not match detector input size");
  auto heads = forward(ad::hwc_to_nchw(ad::constant(image.image)), false);
  auto cands = decode(heads, 0);
  std::vector<Detection> dets;
  for (const auto& c : cands) {
    int best_k = 0;
    float best_p = 0.0f;
    for (int k = 0; k < cfg_.num_classes; ++k)
      if (c.class_probs[static_cast<size_t>(k)] > best_p) {
        best_p = c.class_probs[static_cast<size_t>(k)];
        best_k = k;
      }
    float conf = c.objectness * best_p;
    if (conf < cfg_.conf_threshold || !c.box.valid()) continue;
    dets.push_back({c.box, best_k, conf});
  }
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    if (a.box.y != b.box.y) return a.box.y < b.box.y;
    if (a.box.w != b.box.w) return a.box.w < b.box.w;
    return a.box.h < b.box.h;
  });
  // Class-wise greedy NMS.
  std::vector<Detection> kept;
  std::vector<bool> removed(dets.size(), false);
  for (size_t i = 0; i < dets.size(); ++i) {
    if (removed[i]) continue;
    kept.push_back(dets[i]);
    for (size_t j = i + 1; j < dets.size(); ++j) {
      if (removed[j] || dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) > cfg_.nms_iou) removed[j] = true;
    }
  }
  return kept;
}

ad::Var TinyDetector::object_confidences_var(const ad::Var& image_hwc,
                                             const std::vector<Annotation>& anns) const {
  if (anns.empty()) throw ContractViolation("object_confidences: annotations must be non-empty");
  auto heads = forward(ad::hwc_to_nchw(image_hwc), false);
  auto cands = decode(heads, 0);
  std::vector<ad::Var> scores;
  for (const auto& ann : anns) {
    const Candidate* best = nullptr;
    double best_score = -1.0;
    for (const auto& c : cands) {
      if (iou(c.box, ann.box) < 0.5) continue;
      double s = c.objectness;
      if (cfg_.score_obj_times_class)
        s *= c.class_probs[static_cast<size_t>(ann.class_id)];
      if (s > best_score) {
        best_score = s;
        best = &c;
      }
    }
    if (!best) {
      scores.push_back(ad::constant(Tensor::scalar(0.0f)));
      continue;
    }
    const ad::Var& head = best->level == 0 ? heads.p3 : heads.p4;
    auto obj = ad::sigmoid(ad::gather(head, {best->obj_index}));
    if (cfg_.score_obj_times_class) {
      auto cls = ad::sigmoid(
          ad::gather(head, {best->cls_index[static_cast<size_t>(ann.class_id)]}));
      scores.push_back(ad::mul(obj, cls));
    } else {
      scores.push_back(obj);
    }
  }
  return ad::concat1d(scores);
}

std::vector<double> TinyDetector::object_confidences(const ImageSample& image,
                                                     const std::vector<Annotation>& anns) const {
  auto v = object_confidences_var(ad::constant(image.image), anns);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(v->value.numel()));
  for (int64_t i = 0; i < v->value.numel(); ++i) out.push_back(v->value[i]);
  return out;
}

ad::Var TinyDetector::training_loss(const std::vector<const ImageSample*>& batch, bool training) {
  if (batch.empty()) throw ContractViolation("training_loss: empty batch");
  std::vector<ad::Var> imgs;
  imgs.reserve(batch.size());
  for (const auto* s : batch) imgs.push_back(ad::constant(s->image));
  auto heads = forward(ad::stack_images_nchw(imgs), training);

  struct LevelTargets {
    Tensor bce_t, bce_w, sig_t, sig_w, raw_t, raw_w;
  };
  std::array<LevelTargets, 2> tg;
  for (int li = 0; li < 2; ++li) {
    const auto& shape = (li == 0 ? heads.p3 : heads.p4)->value.shape();
    tg[static_cast<size_t>(li)] = {Tensor(shape), Tensor(shape), Tensor(shape),
                                   Tensor(shape), Tensor(shape), Tensor(shape)};
  }
  int N = static_cast<int>(batch.size());
  int64_t total_anchors = 0;
  for (int li = 0; li < 2; ++li) {
    const auto& s = (li == 0 ? heads.p3 : heads.p4)->value.shape();
    total_anchors += int64_t(levels_[static_cast<size_t>(li)].anchors.size()) * s[2] * s[3];
  }
  total_anchors *= N;

  // First pass: default obj weight 1 (negative) for every anchor.
  for (int li = 0; li < 2; ++li) {
    auto& t = tg[static_cast<size_t>(li)];
    const auto& s = (li == 0 ? heads.p3 : heads.p4)->value.shape();
    int H = s[2], W = s[3];
    int A = static_cast<int>(levels_[static_cast<size_t>(li)].anchors.size());
    for (int n = 0; n < N; ++n)
      for (int a = 0; a < A; ++a)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            t.bce_w[((int64_t(n) * s[1] + a * attrs_ + 4) * H + y) * W + x] = 1.0f;
  }

  int npos = 0;
  for (int n = 0; n < N; ++n) {
    for (const auto& ann : batch[static_cast<size_t>(n)]->annotations) {
      float gcx = ann.box.x + ann.box.w / 2, gcy = ann.box.y + ann.box.h / 2;
      if (ann.ignore) {
        // Anchors whose cell center falls inside an ignore region do not
        // contribute to the objectness loss.
        for (int li = 0; li < 2; ++li) {
          auto& t = tg[static_cast<size_t>(li)];
          const Level& lv = levels_[static_cast<size_t>(li)];
          const auto& s = (li == 0 ? heads.p3 : heads.p4)->value.shape();
          int H = s[2], W = s[3];
          int A = static_cast<int>(lv.anchors.size());
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
              float cx = (x + 0.5f) * lv.stride, cy = (y + 0.5f) * lv.stride;
              if (cx < ann.box.x || cx > ann.box.x2() || cy < ann.box.y || cy > ann.box.y2())
                continue;
              for (int a = 0; a < A; ++a)
                t.bce_w[((int64_t(n) * s[1] + a * attrs_ + 4) * H + y) * W + x] = 0.0f;
            }
        }
        continue;
      }
      // Multi-positive assignment: every anchor with shape IoU >= 0.5 at the
      // object's center cell is a positive (duplicates then regress to the
      // same box and collapse under NMS); the best anchor is always assigned.
      int best_li = -1, best_a = -1;
      double best_iou = 0.0;
      std::vector<std::pair<int, int>> positives;
      for (int li = 0; li < 2; ++li) {
        const Level& lv = levels_[static_cast<size_t>(li)];
        for (size_t a = 0; a < lv.anchors.size(); ++a) {
          BoundingBox ab{gcx - lv.anchors[a].first / 2, gcy - lv.anchors[a].second / 2,
                         lv.anchors[a].first, lv.anchors[a].second};
          double v = iou(ab, ann.box);
          if (v >= 0.5) positives.emplace_back(li, static_cast<int>(a));
          if (v > best_iou) {
            best_iou = v;
            best_li = li;
            best_a = static_cast<int>(a);
          }
        }
      }
      if (best_li < 0) continue;
      if (positives.empty()) positives.emplace_back(best_li, best_a);
      for (auto [pli, pa] : positives) {
        const Level& lv = levels_[static_cast<size_t>(pli)];
        const auto& s = (pli == 0 ? heads.p3 : heads.p4)->value.shape();
        int H = s[2], W = s[3];
        int cellx = std::min(W - 1, static_cast<int>(gcx / lv.stride));
        int celly = std::min(H - 1, static_cast<int>(gcy / lv.stride));
        auto& t = tg[static_cast<size_t>(pli)];
        auto idx = [&](int ch) {
          return ((int64_t(n) * s[1] + pa * attrs_ + ch) * H + celly) * W + cellx;
        };
        if (t.bce_t[idx(4)] == 1.0f) continue;  // cell+anchor already claimed
        ++npos;
        t.bce_t[idx(4)] = 1.0f;
        t.bce_w[idx(4)] = 4.0f;  // positive objectness emphasis
        for (int k = 0; k < cfg_.num_classes; ++k) {
          t.bce_t[idx(5 + k)] = k == ann.class_id ? 1.0f : 0.0f;
          t.bce_w[idx(5 + k)] = 1.0f;
        }
        t.sig_t[idx(0)] = gcx / lv.stride - cellx;
        t.sig_t[idx(1)] = gcy / lv.stride - celly;
        t.sig_w[idx(0)] = 1.0f;
        t.sig_w[idx(1)] = 1.0f;
        t.raw_t[idx(2)] = std::log(ann.box.w / lv.anchors[static_cast<size_t>(pa)].first);
        t.raw_t[idx(3)] = std::log(ann.box.h / lv.anchors[static_cast<size_t>(pa)].second);
        t.raw_w[idx(2)] = 1.0f;
        t.raw_w[idx(3)] = 1.0f;
      }
    }
  }

  float inv_anchors = 1.0f / static_cast<float>(total_anchors);
  float inv_pos = 1.0f / static_cast<float>(std::max(1, npos));
  const float box_gain = 5.0f;
  for (int li = 0; li < 2; ++li) {
    auto& t = tg[static_cast<size_t>(li)];
    for (auto& v : t.bce_w.vec()) v *= inv_anchors;  // class terms rescaled below
    const auto& s = (li == 0 ? heads.p3 : heads.p4)->value.shape();
    int H = s[2], W = s[3];
    int A = static_cast<int>(levels_[static_cast<size_t>(li)].anchors.size());
    for (int n = 0; n < N; ++n)
      for (int a = 0; a < A; ++a)
        for (int k = 0; k < cfg_.num_classes; ++k)
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
              int64_t i = ((int64_t(n) * s[1] + a * attrs_ + 5 + k) * H + y) * W + x;
              if (t.bce_w[i] != 0.0f) t.bce_w[i] = inv_pos;
            }
    for (auto& v : t.sig_w.vec()) v *= box_gain * inv_pos;
    for (auto& v : t.raw_w.vec()) v *= box_gain * inv_pos;
  }

  std::vector<ad::Var> terms;
  for (int li = 0; li < 2; ++li) {
    const ad::Var& head = li == 0 ? heads.p3 : heads.p4;
    auto& t = tg[static_cast<size_t>(li)];
    terms.push_back(ad::bce_with_logits_sum(head, t.bce_t, t.bce_w));
    terms.push_back(ad::weighted_mse_sum(ad::sigmoid(head), t.sig_t, t.sig_w));
    terms.push_back(ad::weighted_mse_sum(head, t.raw_t, t.raw_w));
  }
  ad::Var loss = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) loss = ad::add(loss, terms[i]);
  return loss;
}

void TinyDetector::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json cfg;
  cfg["kind"] = "tiny_detector";
  cfg["input_size"] = cfg_.input_size;
  cfg["num_classes"] = cfg_.num_classes;
  cfg["conf_threshold"] = cfg_.conf_threshold;
  cfg["nms_iou"] = cfg_.nms_iou;
  cfg["score_obj_times_class"] = cfg_.score_obj_times_class;
  cfg["anchor_sizes_s8"] = cfg_.anchor_sizes_s8;
  cfg["anchor_sizes_s16"] = cfg_.anchor_sizes_s16;
  cfg["anchor_ratios"] = cfg_.anchor_ratios;
  cfg["init_seed"] = cfg_.init_seed;
  cfg["classes"] = classes_.names;
  save_checkpoint(path, params_, cfg);
}

std::unique_ptr<TinyDetector> TinyDetector::load(const std::filesystem::path& path) {
  nlohmann::json cfg = read_checkpoint_config(path);
  if (cfg.value("kind", "") != "tiny_detector")
    throw IoError("not a tiny_detector checkpoint: " + path.string());
  TinyDetectorConfig c;
  c.input_size = cfg["input_size"];
  c.num_classes = cfg["num_classes"];
  c.conf_threshold = cfg["conf_threshold"];
  c.nms_iou = cfg["nms_iou"];
  c.score_obj_times_class = cfg["score_obj_times_class"];
  c.anchor_sizes_s8 = cfg["anchor_sizes_s8"].get<std::vector<float>>();
  c.anchor_sizes_s16 = cfg["anchor_sizes_s16"].get<std::vector<float>>();
  c.anchor_ratios = cfg["anchor_ratios"].get<std::vector<float>>();
  c.init_seed = cfg["init_seed"];
  ClassSet cs{cfg["classes"].get<std::vector<std::string>>()};
  auto det = std::make_unique<TinyDetector>(c, cs);
  load_checkpoint(path, det->params_);
  return det;
}

std::pair<std::unique_ptr<TinyDetector>, DetectorTrainReport> train_tiny_detector(
    const std::vector<ImageSample>& train, const std::vector<ImageSample>& holdout,
    const TinyDetectorConfig& cfg, const DetectorTrainConfig& tcfg,
    const std::function<void(int, float)>& progress) {
  if (train.empty()) throw ConfigError("train_tiny_detector: empty training set");
  auto det = std::make_unique<TinyDetector>(cfg);
  DetectorTrainReport report;
  auto params = det->params().param_vars();
  nn::SgdMomentum opt(tcfg.lr, tcfg.momentum, tcfg.steps, true, 5.0f);
  Rng rng(tcfg.seed);
  for (int step = 0; step < tcfg.steps; ++step) {
    std::vector<const ImageSample*> batch;
    for (int i = 0; i < tcfg.batch_size; ++i)
      batch.push_back(&train[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(train.size()) - 1))]);
    auto loss = det->training_loss(batch, true);
    float lv = loss->value[0];
    if (!std::isfinite(lv))
      throw NumericalError("detector training diverged at step " + std::to_string(step));
    report.loss_trace.push_back(lv);
    ad::backward(loss);
    opt.step(params, step);
    ad::zero_grad(params);
    if (progress && step % tcfg.log_every == 0) progress(step, lv);
  }
  if (!holdout.empty()) {
    ConditionMetrics m = evaluate_detections(*det, holdout);
    report.holdout_ap = m.mean_ap;
  }
  return {std::move(det), report};
}

namespace {
std::map<std::string, DetectorFactory>& adapter_registry() {
  static std::map<std::string, DetectorFactory> reg;
  return reg;
}
}  // namespace

void register_detector_adapter(const std::string& name, DetectorFactory factory) {
  adapter_registry()[name] = std::move(factory);
}
std::unique_ptr<DetectorContract> make_detector_adapter(const std::string& name,
                                                        const std::string& json_cfg) {
  auto it = adapter_registry().find(name);
  if (it == adapter_registry().end()) throw ConfigError("no detector adapter named '" + name + "'");
  return it->second(json_cfg);
}
bool has_detector_adapter(const std::string& name) { return adapter_registry().count(name) > 0; }

}  // namespace uavpd
