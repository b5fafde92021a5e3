#include "uavpd/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "uavpd/checkpoint.hpp"
#include "uavpd/errors.hpp"

namespace uavpd {

RestorationModel::Gate RestorationModel::make_gate(const std::string& name, int cg, int cx,
                                                   Rng& rng) {
  Gate g;
  int fint = std::max(4, cx / 2);
  g.wg = nn::Conv2d(params_, name + ".wg", cg, fint, 1, 1, 0, 1, true, rng);
  g.wx = nn::Conv2d(params_, name + ".wx", cx, fint, 1, 1, 0, 1, true, rng);
  g.psi = nn::Conv2d(params_, name + ".psi", fint, 1, 1, 1, 0, 1, true, rng);
  return g;
}

ad::Var RestorationModel::apply_gate(const Gate& g, const ad::Var& skip,
                                     const ad::Var& gating) const {
  if (!cfg_.attention) return skip;
  auto a = ad::sigmoid(g.psi.forward(ad::relu(ad::add(g.wg.forward(gating), g.wx.forward(skip)))));
  return ad::scale_spatial(skip, a);
}

RestorationModel::RestorationModel(RestorationModelConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.decoder_filters.size() != 5)
    throw ConfigError("RestorationModel: decoder_filters must list 5 levels");
  if (cfg_.decoder_convs_per_level != 1)
    throw ConfigError("RestorationModel: one decoder convolution per level");
  Rng rng(cfg_.init_seed);
  // Encoder: B0-style stem plus inverted-residual stages at strides
  // 2/4/8/16; the stride-32 stage is dropped and the stride-2 map is kept as
  // a high-resolution skip.
  stem_ = nn::Conv2d(params_, "enc.stem", 3, 32, 3, 2, 1, 1, false, rng);
  stem_bn_ = nn::BatchNorm2d(params_, "enc.stem_bn", 32);
  b1_ = nn::MBConv(params_, "enc.b1", 32, 16, 1, 3, 1, rng);   // /2, skip
  b2_ = nn::MBConv(params_, "enc.b2", 16, 24, 6, 3, 2, rng);   // /4
  b3_ = nn::MBConv(params_, "enc.b3", 24, 24, 6, 3, 1, rng);   // /4, skip
  b4_ = nn::MBConv(params_, "enc.b4", 24, 40, 6, 5, 2, rng);   // /8
  b5_ = nn::MBConv(params_, "enc.b5", 40, 40, 6, 5, 1, rng);   // /8, skip
  b6_ = nn::MBConv(params_, "enc.b6", 40, 80, 6, 3, 2, rng);   // /16, skip
  b7_ = nn::MBConv(params_, "enc.b7", 80, 80, 6, 3, 1, rng);   // /16
  b8_ = nn::MBConv(params_, "enc.b8", 80, 80, 6, 3, 1, rng);   // /16, bottleneck

  const auto& f = cfg_.decoder_filters;  // [s1, s2, s4, s8, s16] filter counts
  g16_ = make_gate("dec.g16", 80, 80, rng);
  d16_ = nn::Conv2d(params_, "dec.d16", 80 + 80, f[4], 3, 1, 1, 1, false, rng);
  n16_ = nn::BatchNorm2d(params_, "dec.n16", f[4]);
  g8_ = make_gate("dec.g8", f[4], 40, rng);
  d8_ = nn::Conv2d(params_, "dec.d8", f[4] + 40, f[3], 3, 1, 1, 1, false, rng);
  n8_ = nn::BatchNorm2d(params_, "dec.n8", f[3]);
  g4_ = make_gate("dec.g4", f[3], 24, rng);
  d4_ = nn::Conv2d(params_, "dec.d4", f[3] + 24, f[2], 3, 1, 1, 1, false, rng);
  n4_ = nn::BatchNorm2d(params_, "dec.n4", f[2]);
  g2_ = make_gate("dec.g2", f[2], 16, rng);
  d2_ = nn::Conv2d(params_, "dec.d2", f[2] + 16, f[1], 3, 1, 1, 1, false, rng);
  n2_ = nn::BatchNorm2d(params_, "dec.n2", f[1]);
  d1_ = nn::Conv2d(params_, "dec.d1", f[1], f[0], 3, 1, 1, 1, false, rng);
  n1_ = nn::BatchNorm2d(params_, "dec.n1", f[0]);
  head_ = nn::Conv2d(params_, "dec.head", f[0], cfg_.out_channels, 3, 1, 1, 1, true, rng);

  if (!cfg_.pretrained_encoder.empty())
    load_checkpoint_prefix(cfg_.pretrained_encoder, params_, "enc.");
}

ad::Var RestorationModel::forward(const ad::Var& x, bool training) const {
  const auto& s = x->value.shape();
  if (s.size() != 4 || s[1] != 3) throw ContractViolation("RestorationModel: expects [N,3,H,W]");
  if (s[2] % 16 != 0 || s[3] % 16 != 0)
    throw ContractViolation("RestorationModel: input resolution must be a multiple of 16 "
                            "(encoder level at stride 16)");
  auto t = ad::hardswish(stem_bn_.forward(stem_.forward(x), training));
  auto s2 = b1_.forward(t, training);
  auto s4 = b3_.forward(b2_.forward(s2, training), training);
  auto s8 = b5_.forward(b4_.forward(s4, training), training);
  auto s16 = b6_.forward(s8, training);
  auto bott = b8_.forward(b7_.forward(s16, training), training);

  auto d = ad::hardswish(n16_.forward(
      d16_.forward(ad::concat_channels(bott, apply_gate(g16_, s16, bott))), training));
  auto up = ad::upsample_bilinear_2x(d);
  d = ad::hardswish(n8_.forward(
      d8_.forward(ad::concat_channels(up, apply_gate(g8_, s8, up))), training));
  up = ad::upsample_bilinear_2x(d);
  d = ad::hardswish(n4_.forward(
      d4_.forward(ad::concat_channels(up, apply_gate(g4_, s4, up))), training));
  up = ad::upsample_bilinear_2x(d);
  d = ad::hardswish(n2_.forward(
      d2_.forward(ad::concat_channels(up, apply_gate(g2_, s2, up))), training));
  up = ad::upsample_bilinear_2x(d);
  d = ad::hardswish(n1_.forward(d1_.forward(up), training));
  auto out = head_.forward(d);
  return cfg_.tanh_output ? ad::tanh_op(out) : out;
}

Tensor RestorationModel::run(const Tensor& hwc) const {
  auto out = forward(ad::hwc_to_nchw(ad::constant(hwc)), false);
  return ad::nchw_to_hwc(out, 0)->value;
}

void RestorationModel::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["kind"] = cfg_.out_channels == 3 ? "restoration" : "segmentation";
  j["decoder_filters"] = cfg_.decoder_filters;
  j["attention"] = cfg_.attention;
  j["decoder_convs_per_level"] = cfg_.decoder_convs_per_level;
  j["out_channels"] = cfg_.out_channels;
  j["tanh_output"] = cfg_.tanh_output;
  j["init_seed"] = cfg_.init_seed;
  j["param_count"] = param_count();
  save_checkpoint(path, params_, j);
}

std::unique_ptr<RestorationModel> RestorationModel::load(const std::filesystem::path& path) {
  nlohmann::json j = read_checkpoint_config(path);
  RestorationModelConfig cfg;
  cfg.decoder_filters = j["decoder_filters"].get<std::vector<int>>();
  cfg.attention = j["attention"];
  cfg.decoder_convs_per_level = j["decoder_convs_per_level"];
  cfg.out_channels = j["out_channels"];
  cfg.tanh_output = j["tanh_output"];
  cfg.init_seed = j["init_seed"];
  auto model = std::make_unique<RestorationModel>(cfg);
  load_checkpoint(path, model->params_);
  return model;
}

double reconstruction_loss(const Tensor& x, const Tensor& x_c) {
  if (!x.same_shape(x_c)) throw ContractViolation("reconstruction_loss: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double d = double(x[i]) - double(x_c[i]);
    acc += d * d;
  }
  return acc / double(x.numel());
}

namespace {

Tensor stack_hwc(const std::vector<Tensor>& imgs) {
  int H = imgs[0].dim(0), W = imgs[0].dim(1), C = imgs[0].dim(2);
  Tensor out({static_cast<int>(imgs.size()), C, H, W});
  for (size_t n = 0; n < imgs.size(); ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          out.at4(static_cast<int>(n), c, y, x) = imgs[n].at3(y, x, c);
  return out;
}

// Footprint mask for one patched sample, in [H,W].
Tensor footprint_mask(const PatchedSample& ps) {
  int H = ps.sample.image.dim(0), W = ps.sample.image.dim(1);
  Tensor m({H, W});
  for (const auto& app : ps.applications)
    for (int i = 0; i < app.side; ++i)
      for (int j = 0; j < app.side; ++j)
        if (app.mask[int64_t(i) * app.side + j] != 0.0f)
          m[int64_t(app.y0 + i) * W + (app.x0 + j)] = 1.0f;
  return m;
}

template <typename StepFn, typename ValFn>
TrainHistory run_epochs(const std::vector<ImageSample>& train, const DefenseTrainConfig& cfg,
                        size_t n_params, StepFn&& step_fn, ValFn&& val_fn,
                        const std::function<void(const HistoryRow&)>& progress) {
  (void)n_params;
  if (train.empty()) throw ConfigError("defense training: empty dataset");
  int steps_per_epoch =
      static_cast<int>((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  int total_steps = std::max(1, cfg.epochs * steps_per_epoch);
  Rng rng(cfg.seed);
  TrainHistory history;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Fisher-Yates with the run RNG.
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    double lr_last = 0.0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
      std::vector<const ImageSample*> batch;
      for (size_t i = off; i < std::min(order.size(), off + static_cast<size_t>(cfg.batch_size)); ++i)
        batch.push_back(&train[order[i]]);
      auto [loss, lr] = step_fn(batch, rng, step, total_steps);
      if (!std::isfinite(loss))
        throw NumericalError("defense training: non-finite loss at step " + std::to_string(step));
      epoch_loss += loss;
      ++epoch_batches;
      ++step;
      lr_last = lr;
    }
    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = epoch_batches ? epoch_loss / epoch_batches : 0.0;
    row.val_loss = val_fn(epoch);
    row.lr = lr_last;
    history.push_back(row);
    if (progress) progress(row);
  }
  return history;
}

}  // namespace

TrainHistory train_defense(RestorationModel& model, const std::vector<ImageSample>& train,
                           const std::vector<ImageSample>& holdout, const TextureBank& textures,
                           const DefenseTrainConfig& cfg,
                           const std::function<void(const HistoryRow&)>& progress) {
  if (textures.empty()) throw ConfigError("train_defense: texture bank is empty");
  auto params = model.params().param_vars();
  nn::SgdMomentum opt(cfg.effective_lr(), cfg.momentum, 1);
  bool opt_init = false;
  int opt_total = 1;
  auto step_fn = [&](const std::vector<const ImageSample*>& batch, Rng& rng, int step,
                     int total_steps) {
    if (!opt_init) {
      opt = nn::SgdMomentum(cfg.effective_lr(), cfg.momentum, total_steps);
      opt_init = true;
      opt_total = total_steps;
    }
    std::vector<Tensor> patched, clean;
    for (const auto* s : batch) {
      auto ps = patch_objects(*s, ObjectPatchSource::texture(textures), rng, PatchMode::Train,
                              cfg.ranges);
      patched.push_back(std::move(ps.sample.image));
      clean.push_back(s->image);
    }
    auto out = model.forward(ad::constant(stack_hwc(patched)), true);
    auto loss = ad::mse_loss(out, stack_hwc(clean));
    float lv = loss->value[0];
    ad::backward(loss);
    opt.step(params, step);
    ad::zero_grad(params);
    return std::pair<float, double>(lv, opt.lr_at(step));
  };
  auto val_fn = [&](int epoch) {
    if (holdout.empty()) return 0.0;
    Rng vr(cfg.seed ^ 0x9e3779b9u ^ static_cast<uint64_t>(epoch));
    double acc = 0.0;
    for (const auto& s : holdout) {
      auto ps = patch_objects(s, ObjectPatchSource::texture(textures), vr, PatchMode::Train,
                              cfg.ranges);
      acc += reconstruction_loss(s.image, model.run(ps.sample.image));
    }
    return acc / double(holdout.size());
  };
  return run_epochs(train, cfg, params.size(), step_fn, val_fn, progress);
}

ImageSample restore(const RestorationModel& model, const ImageSample& image) {
  if (model.config().out_channels != 3)
    throw ContractViolation("restore: model is not a restoration model");
  ImageSample out = image;
  out.image = model.run(image.image);
  return out;
}

TrainHistory train_masking_baseline(RestorationModel& segmodel,
                                    const std::vector<ImageSample>& train,
                                    const std::vector<ImageSample>& holdout,
                                    const TextureBank& textures, const DefenseTrainConfig& cfg,
                                    const std::function<void(const HistoryRow&)>& progress) {
  if (segmodel.config().out_channels != 1 || segmodel.config().tanh_output)
    throw ConfigError("train_masking_baseline: model must output single-channel logits");
  if (textures.empty()) throw ConfigError("train_masking_baseline: texture bank is empty");
  auto params = segmodel.params().param_vars();
  nn::SgdMomentum opt(cfg.effective_lr(), cfg.momentum, 1);
  bool opt_init = false;
  auto make_target = [&](const std::vector<const ImageSample*>& batch, Rng& rng,
                         std::vector<Tensor>& patched, Tensor& target, Tensor& weight) {
    int H = batch[0]->image.dim(0), W = batch[0]->image.dim(1);
    target = Tensor({static_cast<int>(batch.size()), 1, H, W});
    weight = Tensor({static_cast<int>(batch.size()), 1, H, W});
    for (size_t n = 0; n < batch.size(); ++n) {
      auto ps = patch_objects(*batch[n], ObjectPatchSource::texture(textures), rng,
                              PatchMode::Train, cfg.ranges);
      Tensor m = footprint_mask(ps);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          float mv = m[int64_t(y) * W + x];
          target.at4(static_cast<int>(n), 0, y, x) = mv;
          weight.at4(static_cast<int>(n), 0, y, x) = mv > 0.0f ? cfg.mask_pos_weight : 1.0f;
        }
      patched.push_back(std::move(ps.sample.image));
    }
  };
  auto step_fn = [&](const std::vector<const ImageSample*>& batch, Rng& rng, int step,
                     int total_steps) {
    if (!opt_init) {
      opt = nn::SgdMomentum(cfg.effective_lr(), cfg.momentum, total_steps);
      opt_init = true;
    }
    std::vector<Tensor> patched;
    Tensor target, weight;
    make_target(batch, rng, patched, target, weight);
    auto out = segmodel.forward(ad::constant(stack_hwc(patched)), true);
    auto loss = ad::mul_scalar(ad::bce_with_logits_sum(out, target, weight),
                               1.0f / static_cast<float>(target.numel()));
    float lv = loss->value[0];
    ad::backward(loss);
    opt.step(params, step);
    ad::zero_grad(params);
    return std::pair<float, double>(lv, opt.lr_at(step));
  };
  auto val_fn = [&](int epoch) {
    if (holdout.empty()) return 0.0;
    Rng vr(cfg.seed ^ 0x51ed2701u ^ static_cast<uint64_t>(epoch));
    double acc = 0.0;
    int n = 0;
    for (const auto& s : holdout) {
      std::vector<const ImageSample*> one{&s};
      std::vector<Tensor> patched;
      Tensor target, weight;
      make_target(one, vr, patched, target, weight);
      auto out = segmodel.forward(ad::constant(stack_hwc(patched)), false);
      acc += ad::bce_with_logits_sum(out, target, Tensor())->value[0] / double(target.numel());
      ++n;
    }
    return n ? acc / n : 0.0;
  };
  return run_epochs(train, cfg, params.size(), step_fn, val_fn, progress);
}

Tensor apply_inverted_mask(const Tensor& image, const Tensor& mask) {
  int H = image.dim(0), W = image.dim(1);
  if (mask.shape() != std::vector<int>{H, W})
    throw ContractViolation("apply_inverted_mask: mask shape mismatch");
  Tensor out = image;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (mask[int64_t(y) * W + x] != 0.0f)
        for (int c = 0; c < image.dim(2); ++c) out.at3(y, x, c) = -1.0f;
  return out;
}

ImageSample mask_apply(const RestorationModel& segmodel, const ImageSample& image) {
  if (segmodel.config().out_channels != 1)
    throw ContractViolation("mask_apply: model is not a segmentation model");
  auto logits = segmodel.forward(ad::hwc_to_nchw(ad::constant(image.image)), false);
  int H = image.image.dim(0), W = image.image.dim(1);
  Tensor mask({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float p = 1.0f / (1.0f + std::exp(-logits->value.at4(0, 0, y, x)));
      mask[int64_t(y) * W + x] = p > 0.5f ? 1.0f : 0.0f;
    }
  ImageSample out = image;
  out.image = apply_inverted_mask(image.image, mask);
  return out;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write history: " + path.string());
  f << "epoch,train_loss,val_loss,lr\n";
  for (const auto& r : rows)
    f << r.epoch << "," << r.train_loss << "," << r.val_loss << "," << r.lr << "\n";
}

}  // namespace uavpd
