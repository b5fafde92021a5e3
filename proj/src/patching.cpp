#include "uavpd/patching.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "uavpd/errors.hpp"
#include "uavpd/image.hpp"

namespace uavpd {

std::string to_string(PatchSourceKind k) {
  switch (k) {
    case PatchSourceKind::Gray: return "gray";
    case PatchSourceKind::Random: return "random";
    case PatchSourceKind::Texture: return "texture";
    case PatchSourceKind::Adversarial: return "adversarial";
  }
  return "gray";
}

PatchSourceKind patch_source_from_string(const std::string& s) {
  if (s == "gray") return PatchSourceKind::Gray;
  if (s == "random") return PatchSourceKind::Random;
  if (s == "texture") return PatchSourceKind::Texture;
  if (s == "adversarial") return PatchSourceKind::Adversarial;
  throw ConfigError("unknown patch source: " + s);
}

TransformSample sample_transform(Rng& rng, PatchMode mode, int noise_side,
                                 const TransformRanges& r) {
  TransformSample t;
  t.flip_h = rng.bernoulli();
  t.flip_v = rng.bernoulli();
  t.hue_shift = static_cast<float>(rng.uniform(-r.hue, r.hue));
  t.contrast = static_cast<float>(rng.uniform(r.contrast_min, r.contrast_max));
  t.saturation = static_cast<float>(rng.uniform(r.saturation_min, r.saturation_max));
  t.brightness = static_cast<float>(rng.uniform(-r.brightness, r.brightness));
  t.noise = Tensor::uniform({noise_side, noise_side, 3}, rng, -r.noise, r.noise);
  t.rotation_deg = static_cast<float>(rng.uniform(-r.rotation_deg, r.rotation_deg));
  if (mode == PatchMode::Train) {
    t.scale_frac = static_cast<float>(rng.uniform(r.scale_min, r.scale_max));
    t.off_u = static_cast<float>(rng.uniform());
    t.off_v = static_cast<float>(rng.uniform());
  } else {
    t.scale_frac = r.scale_eval;
    t.off_u = 0.5f;
    t.off_v = 0.5f;
  }
  return t;
}

int patch_size_for(const BoundingBox& box, double scale_frac) {
  if (!(scale_frac > 0.0 && scale_frac < 1.0))
    throw ContractViolation("patch_size_for: scale_frac must be in (0,1)");
  int side = static_cast<int>(std::floor(std::sqrt(scale_frac * double(box.w) * box.h)));
  if (side < 2) return 0;
  if (static_cast<float>(side) > std::min(box.w, box.h)) return 0;
  return side;
}

std::pair<ad::Var, Tensor> apply_transform(const ad::Var& patch01, const TransformSample& t,
                                           int target_side) {
  if (target_side < 2) throw ContractViolation("apply_transform: target_side must be >= 2");
  ad::Var g = patch01;
  if (t.flip_h) g = ad::flip_lr(g);
  if (t.flip_v) g = ad::flip_ud(g);
  if (t.hue_shift != 0.0f || t.saturation != 1.0f) g = ad::hsv_adjust(g, t.hue_shift, t.saturation);
  if (t.contrast != 1.0f) {
    auto m = ad::mean(g);
    g = ad::add_sv(ad::mul_scalar(ad::sub_sv(g, m), t.contrast), m);
  }
  if (t.brightness != 0.0f) g = ad::add_scalar(g, t.brightness);
  if (!t.noise.empty()) {
    if (!t.noise.same_shape(g->value))
      throw ContractViolation("apply_transform: noise field shape does not match patch");
    g = ad::add(g, ad::constant(t.noise));
  }
  g = ad::clamp01(g);
  g = ad::resize_bilinear(g, target_side, target_side);
  Tensor mask;
  g = ad::rotate_bilinear(g, t.rotation_deg, &mask);
  return {g, mask};
}

std::pair<int, int> patch_placement(const BoundingBox& box, int side, float off_u, float off_v) {
  // Integer interior of the (possibly fractional) box, so the footprint stays
  // strictly inside it.
  int bx0 = static_cast<int>(std::ceil(box.x));
  int by0 = static_cast<int>(std::ceil(box.y));
  int bx1 = static_cast<int>(std::floor(box.x2()));
  int by1 = static_cast<int>(std::floor(box.y2()));
  int slack_x = bx1 - bx0 - side;
  int slack_y = by1 - by0 - side;
  if (slack_x < 0 || slack_y < 0)
    throw ContractViolation("place_patch: footprint exceeds box interior");
  int x0 = bx0 + static_cast<int>(std::lround(off_u * slack_x));
  int y0 = by0 + static_cast<int>(std::lround(off_v * slack_y));
  return {y0, x0};
}

ad::Var place_patch(const ad::Var& image, const ad::Var& grid01, const Tensor& mask,
                    const BoundingBox& box, float off_u, float off_v) {
  int side = grid01->value.dim(0);
  if (side == 0) return image;
  auto [y0, x0] = patch_placement(box, side, off_u, off_v);
  auto grid_canon = ad::add_scalar(ad::mul_scalar(grid01, 2.0f), -1.0f);
  return ad::paste(image, grid_canon, mask, y0, x0);
}

namespace {

// Shared loop behind patch_objects / patch_objects_var. provider returns the
// base patch pixels for one object.
PatchedVar patch_objects_impl(const ImageSample& sample,
                              const std::function<ad::Var(Rng&)>& provider, int patch_side,
                              Rng& rng, PatchMode mode, const TransformRanges& ranges) {
  PatchedVar out;
  out.image = ad::constant(sample.image);
  for (size_t i = 0; i < sample.annotations.size(); ++i) {
    const Annotation& ann = sample.annotations[i];
    if (ann.ignore) continue;
    ad::Var base = provider(rng);
    TransformSample t = sample_transform(rng, mode, patch_side, ranges);
    int side = patch_size_for(ann.box, t.scale_frac);
    if (side == 0) {
      ++out.skipped_objects;
      continue;
    }
    // The fractional box may leave no integer slot of this size.
    int bx0 = static_cast<int>(std::ceil(ann.box.x));
    int by0 = static_cast<int>(std::ceil(ann.box.y));
    int bx1 = static_cast<int>(std::floor(ann.box.x2()));
    int by1 = static_cast<int>(std::floor(ann.box.y2()));
    if (bx1 - bx0 < side || by1 - by0 < side) {
      ++out.skipped_objects;
      continue;
    }
    auto [grid, mask] = apply_transform(base, t, side);
    out.image = place_patch(out.image, grid, mask, ann.box, t.off_u, t.off_v);
    PatchApplication app;
    app.ann_index = static_cast<int>(i);
    app.transform = std::move(t);
    app.side = side;
    auto [y0, x0] = patch_placement(ann.box, side, app.transform.off_u, app.transform.off_v);
    app.y0 = y0;
    app.x0 = x0;
    app.mask = mask;
    out.applications.push_back(std::move(app));
  }
  return out;
}

}  // namespace

PatchedSample patch_objects(const ImageSample& sample, const ObjectPatchSource& source, Rng& rng,
                            PatchMode mode, const TransformRanges& ranges) {
  std::function<ad::Var(Rng&)> provider;
  switch (source.kind) {
    case PatchSourceKind::Gray:
      provider = [&](Rng&) { return ad::constant(Tensor::full({source.side, source.side, 3}, 0.5f)); };
      break;
    case PatchSourceKind::Random:
      provider = [&](Rng& r) {
        return ad::constant(Tensor::uniform({source.side, source.side, 3}, r, 0.0f, 1.0f));
      };
      break;
    case PatchSourceKind::Texture:
      if (!source.textures || source.textures->empty())
        throw ConfigError("patch_objects: texture source without a texture bank");
      provider = [&](Rng& r) {
        const auto& bank = *source.textures;
        int idx = static_cast<int>(r.uniform_int(0, static_cast<int64_t>(bank.size()) - 1));
        Tensor tex = resize_image_bilinear(bank.textures[static_cast<size_t>(idx)], source.side,
                                           source.side);
        return ad::constant(std::move(tex));
      };
      break;
    case PatchSourceKind::Adversarial:
      if (!source.fixed) throw ConfigError("patch_objects: adversarial source without a patch");
      provider = [&](Rng&) { return ad::constant(source.fixed->pixels); };
      break;
  }
  if (source.fixed) provider = [&](Rng&) { return ad::constant(source.fixed->pixels); };
  int side = source.fixed ? source.fixed->pixels.dim(0) : source.side;
  PatchedVar pv = patch_objects_impl(sample, provider, side, rng, mode, ranges);
  PatchedSample out;
  out.sample = sample;
  out.sample.image = pv.image->value;
  out.applications = std::move(pv.applications);
  out.skipped_objects = pv.skipped_objects;
  return out;
}

PatchedVar patch_objects_var(const ImageSample& sample, const ad::Var& patch01, Rng& rng,
                             PatchMode mode, const TransformRanges& ranges) {
  auto provider = [&patch01](Rng&) { return patch01; };
  return patch_objects_impl(sample, provider, patch01->value.dim(0), rng, mode, ranges);
}

void save_patch(const std::filesystem::path& png_path, const Patch& patch,
                const std::string& sidecar_json) {
  save_image_rgb01(png_path, patch.pixels);
  std::filesystem::path sidecar = png_path;
  sidecar.replace_extension(".json");
  std::ofstream out(sidecar);
  if (!out) throw IoError("cannot write patch sidecar: " + sidecar.string());
  out << sidecar_json;
}

Patch load_patch(const std::filesystem::path& png_path) {
  Patch p;
  p.pixels = load_image_rgb01(png_path);
  if (p.pixels.dim(0) != p.pixels.dim(1))
    throw ContractViolation("load_patch: patch must be square");
  std::filesystem::path sidecar = png_path;
  sidecar.replace_extension(".json");
  p.id = png_path.stem().string();
  if (std::filesystem::exists(sidecar)) {
    std::ifstream in(sidecar);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, true, true);
    if (j.contains("source")) p.source = patch_source_from_string(j["source"].get<std::string>());
    if (j.contains("id")) p.id = j["id"].get<std::string>();
  }
  return p;
}

}  // namespace uavpd
