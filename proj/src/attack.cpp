#include "uavpd/attack.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "uavpd/errors.hpp"

namespace uavpd {

PrintableColorSet PrintableColorSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("printable color file not found: " + path.string());
  PrintableColorSet out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::array<float, 3> c{};
    char sep1 = 0, sep2 = 0;
    if (!(ss >> c[0] >> sep1 >> c[1] >> sep2 >> c[2]) || sep1 != ',' || sep2 != ',')
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected r,g,b");
    for (float v : c)
      if (v < 0.0f || v > 1.0f)
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                         ": components must be in [0,1]");
    out.colors.push_back(c);
  }
  if (out.colors.empty()) throw ConfigError("printable color set is empty: " + path.string());
  return out;
}

PrintableColorSet PrintableColorSet::basic() {
  return {{{0.f, 0.f, 0.f},
           {1.f, 1.f, 1.f},
           {1.f, 0.f, 0.f},
           {0.f, 1.f, 0.f},
           {0.f, 0.f, 1.f},
           {1.f, 1.f, 0.f},
           {1.f, 0.f, 1.f},
           {0.f, 1.f, 1.f}}};
}

double nps(const Patch& patch, const PrintableColorSet& colors, bool normalized) {
  return ad::nps_loss(ad::constant(patch.pixels), colors.colors, normalized)->value[0];
}

double total_variation(const Patch& patch, bool normalized) {
  return ad::tv_loss(ad::constant(patch.pixels), normalized)->value[0];
}

namespace {
ad::Var batch_score(const DetectorContract& det,
                    const std::vector<std::pair<ad::Var, const std::vector<Annotation>*>>& batch) {
  std::vector<ad::Var> parts;
  int total_objects = 0;
  for (const auto& [img, anns] : batch) {
    std::vector<Annotation> targets;
    for (const auto& a : *anns)
      if (!a.ignore) targets.push_back(a);
    if (targets.empty()) continue;
    total_objects += static_cast<int>(targets.size());
    parts.push_back(det.object_confidences_var(img, targets));
  }
  if (total_objects == 0)
    throw ContractViolation("detection_score: batch holds no target objects");
  return ad::mean(ad::concat1d(parts));
}
}  // namespace

double detection_score(const DetectorContract& det,
                       const std::vector<ImageSample>& patched_batch) {
  std::vector<std::pair<ad::Var, const std::vector<Annotation>*>> batch;
  batch.reserve(patched_batch.size());
  for (const auto& s : patched_batch) batch.emplace_back(ad::constant(s.image), &s.annotations);
  return batch_score(det, batch)->value[0];
}

AttackResult optimize_patch(const DetectorContract& det, const std::vector<ImageSample>& dataset,
                            const AttackConfig& cfg, const PrintableColorSet& colors,
                            const std::function<void(int, const LossTraceRow&)>& progress) {
  if (dataset.empty()) throw ConfigError("optimize_patch: empty dataset");
  if (cfg.steps < 1 || cfg.weight_nps < 0.0f || cfg.weight_tv < 0.0f)
    throw ConfigError("optimize_patch: bad config (steps >= 1, weights >= 0)");
  if (colors.colors.empty()) throw ConfigError("optimize_patch: empty printable color set");
  Rng rng(cfg.seed);
  auto patch_var = ad::leaf(
      Tensor::uniform({cfg.patch_side, cfg.patch_side, 3}, rng, 0.0f, 1.0f), true);

  AttackResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::pair<ad::Var, const std::vector<Annotation>*>> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const ImageSample& s =
          dataset[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(dataset.size()) - 1))];
      auto pv = patch_objects_var(s, patch_var, rng, PatchMode::Train, cfg.ranges);
      batch.emplace_back(pv.image, &s.annotations);
    }
    auto score = batch_score(det, batch);
    auto nps_v = ad::nps_loss(patch_var, colors.colors, cfg.normalized_losses);
    auto tv_v = ad::tv_loss(patch_var, cfg.normalized_losses);
    auto loss = ad::add(score, ad::add(ad::mul_scalar(nps_v, cfg.weight_nps),
                                       ad::mul_scalar(tv_v, cfg.weight_tv)));
    LossTraceRow row;
    row.step = step;
    row.total = loss->value[0];
    row.score = score->value[0];
    row.nps = nps_v->value[0];
    row.tv = tv_v->value[0];
    float t = cfg.lr_schedule == LrSchedule::Cosine && cfg.steps > 1
                  ? static_cast<float>(step) / static_cast<float>(cfg.steps)
                  : 0.0f;
    row.lr = cfg.lr_schedule == LrSchedule::Cosine
                 ? cfg.learning_rate * 0.5f * (1.0f + std::cos(3.14159265f * t))
                 : cfg.learning_rate;
    if (!std::isfinite(row.total)) {
      std::ostringstream diag;
      diag << "optimize_patch: non-finite loss at step " << step << " (score=" << row.score
           << " nps=" << row.nps << " tv=" << row.tv << " lr=" << row.lr
           << " patch_min=" << patch_var->value.min() << " patch_max=" << patch_var->value.max()
           << ")";
      throw NumericalError(diag.str());
    }
    result.trace.push_back(row);
    ad::backward(loss);
    if (!patch_var->grad.empty()) {
      float* p = patch_var->value.data();
      const float* g = patch_var->grad.data();
      float scale = 1.0f;
      if (cfg.grad_mode == GradMode::Normalized) {
        float linf = 0.0f;
        for (int64_t i = 0; i < patch_var->grad.numel(); ++i)
          linf = std::max(linf, std::fabs(g[i]));
        scale = linf > 0.0f ? 1.0f / linf : 0.0f;
      }
      for (int64_t i = 0; i < patch_var->value.numel(); ++i) {
        float step_v = cfg.grad_mode == GradMode::Sign
                           ? (g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f))
                           : g[i] * scale;
        p[i] -= row.lr * step_v;
        p[i] = p[i] < 0.0f ? 0.0f : (p[i] > 1.0f ? 1.0f : p[i]);
      }
    }
    ad::zero_grad({patch_var});
    if (progress) progress(step, row);
  }
  result.patch.pixels = patch_var->value;
  result.patch.source = PatchSourceKind::Adversarial;
  result.patch.id = "adv_" + std::to_string(cfg.seed);
  return result;
}

void write_loss_trace_csv(const std::filesystem::path& path,
                          const std::vector<LossTraceRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write loss trace: " + path.string());
  f << "step,total,score,nps,tv,lr\n";
  for (const auto& r : rows)
    f << r.step << "," << r.total << "," << r.score << "," << r.nps << "," << r.tv << "," << r.lr
      << "\n";
}

}  // namespace uavpd
