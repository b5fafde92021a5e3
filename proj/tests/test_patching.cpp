#include "doctest.h"
#include "uavpd/datasets.hpp"
#include "uavpd/errors.hpp"
#include "uavpd/patching.hpp"

using namespace uavpd;

TEST_CASE("sample_transform ranges and determinism") {
  TransformRanges r;
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    auto t = sample_transform(rng, PatchMode::Train, 8, r);
    CHECK(t.hue_shift >= -r.hue);
    CHECK(t.hue_shift <= r.hue);
    CHECK(t.contrast >= r.contrast_min);
    CHECK(t.contrast <= r.contrast_max);
    CHECK(t.saturation >= r.saturation_min);
    CHECK(t.saturation <= r.saturation_max);
    CHECK(std::abs(t.brightness) <= r.brightness);
    CHECK(std::abs(t.rotation_deg) <= r.rotation_deg);
    CHECK(t.scale_frac >= r.scale_min);
    CHECK(t.scale_frac <= r.scale_max);
    CHECK(t.noise.min() >= -r.noise);
    CHECK(t.noise.max() <= r.noise);
  }
  // eval mode pins the area fraction and centers the offset
  for (int i = 0; i < 100; ++i) {
    auto t = sample_transform(rng, PatchMode::Eval, 8, r);
    CHECK(t.scale_frac == r.scale_eval);
    CHECK(t.off_u == 0.5f);
    CHECK(t.off_v == 0.5f);
  }
  // determinism
  Rng a(11), b(11);
  auto ta = sample_transform(a, PatchMode::Train, 8, r);
  auto tb = sample_transform(b, PatchMode::Train, 8, r);
  CHECK(ta.hue_shift == tb.hue_shift);
  CHECK(ta.rotation_deg == tb.rotation_deg);
  for (int64_t i = 0; i < ta.noise.numel(); ++i) CHECK(ta.noise[i] == tb.noise[i]);
}

TEST_CASE("patch_size_for") {
  CHECK(patch_size_for({0, 0, 40, 40}, 0.25) == 20);
  CHECK(patch_size_for({0, 0, 100, 50}, 0.20) == 31);
  CHECK(patch_size_for({0, 0, 3, 3}, 0.20) == 0);
  // side never exceeds min(w, h): elongated box where sqrt(area frac) > h
  CHECK(patch_size_for({0, 0, 400, 4}, 0.20) == 0);
  CHECK_THROWS_AS(patch_size_for({0, 0, 10, 10}, 0.0), ContractViolation);
}

TEST_CASE("apply_transform identity is exact") {
  Rng rng(6);
  Tensor px = Tensor::uniform({16, 16, 3}, rng);
  auto [grid, mask] = apply_transform(ad::constant(px), TransformSample::identity(), 16);
  for (int64_t i = 0; i < px.numel(); ++i) CHECK(grid->value[i] == px[i]);
  for (int64_t i = 0; i < mask.numel(); ++i) CHECK(mask[i] == 1.0f);
}

TEST_CASE("apply_transform photometric examples") {
  // mid-gray is hue-invariant
  Tensor gray({8, 8, 3}, 0.5f);
  TransformSample t;
  t.hue_shift = 0.05f;
  auto [grid, mask] = apply_transform(ad::constant(gray), t, 8);
  for (int64_t i = 0; i < gray.numel(); ++i) CHECK(grid->value[i] == doctest::Approx(0.5f));
  // constant 0.5 patch, brightness +0.3, contrast 1 -> constant 0.8
  TransformSample tb;
  tb.brightness = 0.3f;
  auto [grid2, mask2] = apply_transform(ad::constant(gray), tb, 8);
  for (int64_t i = 0; i < gray.numel(); ++i)
    CHECK(grid2->value[i] == doctest::Approx(0.8f).epsilon(1e-6));
  // output clamped to [0,1] even with extreme settings
  TransformSample tc;
  tc.brightness = 0.3f;
  tc.contrast = 1.5f;
  Rng rng(7);
  tc.noise = Tensor::uniform({8, 8, 3}, rng, -0.1f, 0.1f);
  auto [grid3, mask3] = apply_transform(ad::constant(Tensor::uniform({8, 8, 3}, rng)), tc, 12);
  CHECK(grid3->value.min() >= 0.0f);
  CHECK(grid3->value.max() <= 1.0f);
}

TEST_CASE("rotation mask marks the footprint") {
  Tensor ones({12, 12, 3}, 1.0f);
  TransformSample t;
  t.rotation_deg = 20.0f;
  auto [grid, mask] = apply_transform(ad::constant(ones), t, 12);
  // corners fall outside the rotated square
  CHECK(mask[0] == 0.0f);
  CHECK(mask[11] == 0.0f);
  // center remains covered
  CHECK(mask[5 * 12 + 5] == 1.0f);
  int covered = 0;
  for (int64_t i = 0; i < mask.numel(); ++i) covered += mask[i] == 1.0f;
  CHECK(covered > 100);  // most of the canvas
}

TEST_CASE("place_patch conversion and bit-identical surroundings") {
  Tensor img({32, 32, 3}, -0.25f);
  Tensor grid({6, 6, 3}, 1.0f);
  Tensor mask({6, 6}, 1.0f);
  BoundingBox box{8, 8, 12, 12};
  auto out = place_patch(ad::constant(img), ad::constant(grid), mask, box, 0.5f, 0.5f);
  int changed = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = out->value.at3(y, x, c);
        if (v != -0.25f) {
          ++changed;
          CHECK(v == 1.0f);  // [0,1] -> [-1,1] conversion endpoint
          CHECK(x >= box.x);
          CHECK(x < box.x2());
          CHECK(y >= box.y);
          CHECK(y < box.y2());
        }
      }
  CHECK(changed == 6 * 6 * 3);
  // footprint exceeding the box interior
  CHECK_THROWS_AS(place_patch(ad::constant(img), ad::constant(grid), mask, {8, 8, 5, 5}, 0.5f, 0.5f),
                  ContractViolation);
}

TEST_CASE("rotated placement leaves mask-complement pixels unchanged") {
  Rng rng(8);
  Tensor img = Tensor::uniform({40, 40, 3}, rng, -1.0f, 1.0f);
  Tensor patch = Tensor::uniform({10, 10, 3}, rng);
  TransformSample t;
  t.rotation_deg = 20.0f;
  auto [grid, mask] = apply_transform(ad::constant(patch), t, 10);
  BoundingBox box{10, 10, 20, 20};
  auto out = place_patch(ad::constant(img), grid, mask, box, 0.5f, 0.5f);
  auto [y0, x0] = patch_placement(box, 10, 0.5f, 0.5f);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      bool in_canvas = y >= y0 && y < y0 + 10 && x >= x0 && x < x0 + 10;
      bool in_footprint = in_canvas && mask[int64_t(y - y0) * 10 + (x - x0)] == 1.0f;
      for (int c = 0; c < 3; ++c) {
        if (!in_footprint)
          CHECK(out->value.at3(y, x, c) == img.at3(y, x, c));
      }
    }
}

TEST_CASE("patch_objects per-object behavior") {
  ToySceneConfig cfg;
  cfg.canvas = 96;
  cfg.n_objects_min = cfg.n_objects_max = 3;
  auto sample = generate_toy_scene(21, cfg);
  REQUIRE(sample.annotations.size() == 3);

  // no annotations -> image unchanged
  ImageSample empty = sample;
  empty.annotations.clear();
  Rng r0(1);
  auto un = patch_objects(empty, ObjectPatchSource::gray(), r0, PatchMode::Eval);
  for (int64_t i = 0; i < sample.image.numel(); ++i) CHECK(un.sample.image[i] == sample.image[i]);

  // gray source patches every object inside its box
  Rng r1(2);
  auto patched = patch_objects(sample, ObjectPatchSource::gray(), r1, PatchMode::Eval);
  CHECK(patched.applications.size() + patched.skipped_objects == 3);
  CHECK(!patched.applications.empty());
  for (const auto& app : patched.applications) {
    const auto& box = sample.annotations[size_t(app.ann_index)].box;
    CHECK(app.x0 >= box.x);
    CHECK(app.y0 >= box.y);
    CHECK(app.x0 + app.side <= box.x2() + 1e-4f);
    CHECK(app.y0 + app.side <= box.y2() + 1e-4f);
  }
  // pixels outside every footprint are bit-identical
  std::vector<uint8_t> in_fp(size_t(96 * 96), 0);
  for (const auto& app : patched.applications)
    for (int i = 0; i < app.side; ++i)
      for (int j = 0; j < app.side; ++j)
        if (app.mask[int64_t(i) * app.side + j] != 0.0f)
          in_fp[size_t((app.y0 + i) * 96 + app.x0 + j)] = 1;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x)
      if (!in_fp[size_t(y * 96 + x)])
        for (int c = 0; c < 3; ++c)
          CHECK(patched.sample.image.at3(y, x, c) == sample.image.at3(y, x, c));
  // and range stays canonical
  CHECK(patched.sample.image.min() >= -1.0f);
  CHECK(patched.sample.image.max() <= 1.0f);

  // determinism
  Rng r2(2);
  auto patched2 = patch_objects(sample, ObjectPatchSource::gray(), r2, PatchMode::Eval);
  for (int64_t i = 0; i < patched.sample.image.numel(); ++i)
    CHECK(patched.sample.image[i] == patched2.sample.image[i]);

  // ignored annotations are never patched
  ImageSample ig = sample;
  for (auto& a : ig.annotations) a.ignore = true;
  Rng r3(3);
  auto pig = patch_objects(ig, ObjectPatchSource::random(), r3, PatchMode::Train);
  CHECK(pig.applications.empty());
  for (int64_t i = 0; i < ig.image.numel(); ++i) CHECK(pig.sample.image[i] == ig.image[i]);
}

TEST_CASE("texture source draws a fresh texture per object") {
  TextureBank bank;
  Rng trng(9);
  for (int i = 0; i < 4; ++i) bank.textures.push_back(Tensor::uniform({64, 64, 3}, trng));
  bank.ids = {"a", "b", "c", "d"};
  ToySceneConfig cfg;
  cfg.canvas = 96;
  cfg.n_objects_min = cfg.n_objects_max = 4;
  auto sample = generate_toy_scene(33, cfg);
  Rng rng(10);
  auto patched = patch_objects(sample, ObjectPatchSource::texture(bank), rng, PatchMode::Train);
  CHECK(patched.applications.size() + patched.skipped_objects == sample.annotations.size());
}

TEST_CASE("patch PNG round trip preserves pixels to 16-bit precision") {
  Rng rng(12);
  Patch p;
  p.pixels = Tensor::uniform({64, 64, 3}, rng);
  p.source = PatchSourceKind::Adversarial;
  p.id = "test";
  auto dir = std::filesystem::temp_directory_path();
  save_patch(dir / "uavpd_patch.png", p, "{\"source\":\"adversarial\",\"id\":\"test\"}");
  auto q = load_patch(dir / "uavpd_patch.png");
  CHECK(q.source == PatchSourceKind::Adversarial);
  CHECK(q.id == "test");
  for (int64_t i = 0; i < p.pixels.numel(); ++i)
    CHECK(std::abs(q.pixels[i] - p.pixels[i]) < 1.0f / 65535.0f);
  std::filesystem::remove(dir / "uavpd_patch.png");
  std::filesystem::remove(dir / "uavpd_patch.json");
}
