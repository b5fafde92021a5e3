#include "uavpd/workbench.hpp"

#include "uavpd/errors.hpp"

namespace uavpd {

ConditionEvalResult evaluate_condition(const DetectorContract& det,
                                       const std::vector<ImageSample>& test,
                                       const ConditionSpec& spec, const Patch* adv_patch,
                                       const RestorationModel* restore_model,
                                       const RestorationModel* mask_model,
                                       const TextureBank* textures) {
  if (test.empty()) throw ConfigError("evaluate_condition: empty test set");
  if (spec.attack == "adversarial" && !adv_patch)
    throw MissingArtifactError("evaluate_condition: adversarial attack needs a patch (gen-patch)");
  if (spec.defense == "restore" && !restore_model)
    throw MissingArtifactError("evaluate_condition: restore defense needs a model (train-defense)");
  if (spec.defense == "mask" && !mask_model)
    throw MissingArtifactError(
        "evaluate_condition: mask defense needs a model (train-mask-baseline)");
  if (spec.attack != "none" && spec.attack != "gray" && spec.attack != "random" &&
      spec.attack != "adversarial" && spec.attack != "texture")
    throw ConfigError("evaluate_condition: unknown attack '" + spec.attack + "'");
  if (spec.defense != "none" && spec.defense != "restore" && spec.defense != "mask")
    throw ConfigError("evaluate_condition: unknown defense '" + spec.defense + "'");
  if (spec.attack == "texture" && (!textures || textures->empty()))
    throw MissingArtifactError("evaluate_condition: texture attack needs a texture bank");

  ConditionEvalResult result;
  int K = det.classes().size();

  // Undefended clean reference for ASR (computed once; deterministic).
  MetricsAccumulator clean_acc(K);
  for (const auto& s : test) {
    auto dets = det.detect(s);
    clean_acc.add_image(dets, s.annotations);
    result.clean_dets.emplace_back(s.source_id, std::move(dets));
  }

  result.report.class_set = det.classes();
  result.report.meta["attack"] = spec.attack;
  result.report.meta["defense"] = spec.defense;
  result.report.meta["runs"] = spec.runs;
  result.report.meta["seed"] = spec.seed;
  result.report.meta["patch_id"] = adv_patch ? adv_patch->id : "";
  result.report.meta["images"] = static_cast<int>(test.size());

  for (int run = 0; run < spec.runs; ++run) {
    Rng rng(spec.seed + 0x5eed0000ull * (run + 1));
    MetricsAccumulator acc(K);
    std::vector<std::pair<std::string, std::vector<Detection>>> dets_out;
    for (const auto& s : test) {
      ImageSample working = s;
      if (spec.attack != "none") {
        ObjectPatchSource src = ObjectPatchSource::gray(spec.patch_side);
        if (spec.attack == "random") src = ObjectPatchSource::random(spec.patch_side);
        else if (spec.attack == "adversarial") src = ObjectPatchSource::fixed_patch(*adv_patch);
        else if (spec.attack == "texture") src = ObjectPatchSource::texture(*textures, spec.patch_side);
        working = patch_objects(working, src, rng, PatchMode::Eval, spec.ranges).sample;
      }
      if (spec.defense == "restore") working = restore(*restore_model, working);
      else if (spec.defense == "mask") working = mask_apply(*mask_model, working);
      auto dets = det.detect(working);
      acc.add_image(dets, s.annotations);
      dets_out.emplace_back(s.source_id, std::move(dets));
    }
    RunMetrics rm;
    rm.metrics = compute_metrics(acc);
    rm.asr = attack_success_rate(clean_acc, acc);
    result.report.runs.push_back(std::move(rm));
    result.run_dets.push_back(std::move(dets_out));
  }
  return result;
}

}  // namespace uavpd
