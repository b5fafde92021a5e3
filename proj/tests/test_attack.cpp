#include <fstream>

#include "doctest.h"
#include "uavpd/attack.hpp"
#include "uavpd/datasets.hpp"
#include "uavpd/errors.hpp"

using namespace uavpd;

namespace {

// Detector stub returning fixed per-object confidences; constant w.r.t. the
// image, so patch gradients through it are zero.
class ConstantDetector : public DetectorContract {
 public:
  explicit ConstantDetector(std::vector<float> confs) : confs_(std::move(confs)) {
    classes_ = ClassSet::default_vehicles();
  }
  std::vector<Detection> detect(const ImageSample&) const override { return {}; }
  std::vector<double> object_confidences(const ImageSample& img,
                                         const std::vector<Annotation>& anns) const override {
    auto v = object_confidences_var(ad::constant(img.image), anns);
    return std::vector<double>(v->value.vec().begin(), v->value.vec().end());
  }
  ad::Var object_confidences_var(const ad::Var&,
                                 const std::vector<Annotation>& anns) const override {
    Tensor t({static_cast<int>(anns.size())});
    for (size_t i = 0; i < anns.size(); ++i) t[static_cast<int64_t>(i)] = confs_[i % confs_.size()];
    return ad::constant(t);
  }
  int input_size() const override { return 96; }
  const ClassSet& classes() const override { return classes_; }

 private:
  std::vector<float> confs_;
  ClassSet classes_;
};

ImageSample toy_sample(uint64_t seed, int objects = 2) {
  ToySceneConfig cfg;
  cfg.canvas = 96;
  cfg.n_objects_min = cfg.n_objects_max = objects;
  return generate_toy_scene(seed, cfg);
}

}  // namespace

TEST_CASE("printable color files") {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "uavpd_colors.txt";
  {
    std::ofstream f(p);
    f << "# printable set\n0,0,0\n1,1,1\n0.2,0.4,0.6\n";
  }
  auto set = PrintableColorSet::load(p);
  CHECK(set.colors.size() == 3);
  CHECK(set.colors[2][1] == doctest::Approx(0.4f));
  {
    std::ofstream f(p);
    f << "0,0\n";
  }
  CHECK_THROWS_AS(PrintableColorSet::load(p), ParseError);
  {
    std::ofstream f(p);
    f << "2,0,0\n";
  }
  CHECK_THROWS_AS(PrintableColorSet::load(p), ParseError);
  fs::remove(p);
}

TEST_CASE("nps examples") {
  PrintableColorSet bw{{{0, 0, 0}, {1, 1, 1}}};
  // patch equal to a printable color
  Patch black{Tensor({4, 4, 3}, 0.0f), PatchSourceKind::Gray, "b"};
  CHECK(nps(black, bw) == doctest::Approx(0.0));
  // 1x1 mid-gray against black/white: sqrt(0.75)
  Patch mid{Tensor({1, 1, 3}, 0.5f), PatchSourceKind::Gray, "m"};
  CHECK(nps(mid, bw) == doctest::Approx(std::sqrt(0.75)).epsilon(1e-5));
  // adding a color equal to the patch mean never increases the score
  Rng rng(3);
  Patch rnd{Tensor::uniform({8, 8, 3}, rng), PatchSourceKind::Random, "r"};
  double before = nps(rnd, bw);
  PrintableColorSet more = bw;
  more.colors.push_back({0.5f, 0.5f, 0.5f});
  CHECK(nps(rnd, more) <= before + 1e-7);
  // empty set is a configuration error
  CHECK_THROWS_AS(nps(rnd, PrintableColorSet{}), ConfigError);
  // raw sum variant scales by the pixel count
  CHECK(nps(mid, bw, false) == doctest::Approx(nps(mid, bw, true)));
  CHECK(nps(rnd, bw, false) == doctest::Approx(nps(rnd, bw, true) * 64).epsilon(1e-4));
}

TEST_CASE("total variation examples") {
  // constant patch
  Patch flat{Tensor({8, 8, 3}, 0.37f), PatchSourceKind::Gray, "f"};
  CHECK(total_variation(flat) == doctest::Approx(0.0));
  // 2x2 checkerboard in one channel: 4 unit differences over 4 pixels = 1.0
  Tensor cb({2, 2, 3}, 0.5f);
  cb.at3(0, 0, 0) = 0.0f;
  cb.at3(0, 1, 0) = 1.0f;
  cb.at3(1, 0, 0) = 1.0f;
  cb.at3(1, 1, 0) = 0.0f;
  Patch checker{cb, PatchSourceKind::Gray, "c"};
  CHECK(total_variation(checker) == doctest::Approx(1.0));
  // smooth ramp has lower TV than the same values permuted
  Tensor ramp({8, 8, 3});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) ramp.at3(y, x, c) = (y * 8 + x) / 63.0f;
  Tensor perm = ramp;
  Rng rng(5);
  for (int64_t i = perm.numel() - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  CHECK(total_variation({ramp, PatchSourceKind::Gray, ""}) <
        total_variation({perm, PatchSourceKind::Gray, ""}));
  // side < 2 violates the contract
  Patch tiny{Tensor({1, 1, 3}, 0.5f), PatchSourceKind::Gray, "t"};
  CHECK_THROWS_AS(total_variation(tiny), ContractViolation);
}

TEST_CASE("nps and tv are flip-invariant") {
  Rng rng(6);
  Tensor px = Tensor::uniform({8, 8, 3}, rng);
  Patch p{px, PatchSourceKind::Random, ""};
  Patch ph{ad::flip_lr(ad::constant(px))->value, PatchSourceKind::Random, ""};
  Patch pv{ad::flip_ud(ad::constant(px))->value, PatchSourceKind::Random, ""};
  PrintableColorSet colors = PrintableColorSet::basic();
  CHECK(nps(p, colors) == doctest::Approx(nps(ph, colors)).epsilon(1e-7));
  CHECK(nps(p, colors) == doctest::Approx(nps(pv, colors)).epsilon(1e-7));
  CHECK(total_variation(p) == doctest::Approx(total_variation(ph)).epsilon(1e-7));
  CHECK(total_variation(p) == doctest::Approx(total_variation(pv)).epsilon(1e-7));
}

TEST_CASE("detection_score mean and error cases") {
  auto s1 = toy_sample(1, 2);
  // constant 0.9 for every object
  ConstantDetector d9({0.9f});
  CHECK(detection_score(d9, {s1}) == doctest::Approx(0.9));
  // mean of 0.8 and 0.4
  ConstantDetector dm({0.8f, 0.4f});
  CHECK(detection_score(dm, {s1}) == doctest::Approx(0.6));
  // no targets -> error
  ImageSample empty = s1;
  empty.annotations.clear();
  CHECK_THROWS_AS(detection_score(dm, {empty}), ContractViolation);
}

TEST_CASE("optimize_patch with zero weights and a constant detector leaves the patch unchanged") {
  ConstantDetector det({0.7f});
  AttackConfig cfg;
  cfg.patch_side = 16;
  cfg.steps = 5;
  cfg.batch_size = 2;
  cfg.weight_nps = 0.0f;
  cfg.weight_tv = 0.0f;
  cfg.seed = 77;
  std::vector<ImageSample> data = {toy_sample(1), toy_sample(2)};
  auto result = optimize_patch(det, data, cfg, PrintableColorSet::basic());
  Rng ref(77);
  Tensor init = Tensor::uniform({16, 16, 3}, ref, 0.0f, 1.0f);
  for (int64_t i = 0; i < init.numel(); ++i) CHECK(result.patch.pixels[i] == init[i]);
  CHECK(result.patch.source == PatchSourceKind::Adversarial);
  CHECK(result.trace.size() == 5);
}

TEST_CASE("optimize_patch is seed-reproducible and stays in range") {
  ConstantDetector det({0.5f});
  AttackConfig cfg;
  cfg.patch_side = 12;
  cfg.steps = 8;
  cfg.batch_size = 2;
  cfg.weight_nps = 0.05f;
  cfg.weight_tv = 1.0f;
  cfg.learning_rate = 0.5f;
  cfg.seed = 123;
  std::vector<ImageSample> data = {toy_sample(3), toy_sample(4)};
  auto a = optimize_patch(det, data, cfg, PrintableColorSet::basic());
  auto b = optimize_patch(det, data, cfg, PrintableColorSet::basic());
  for (int64_t i = 0; i < a.patch.pixels.numel(); ++i)
    CHECK(a.patch.pixels[i] == b.patch.pixels[i]);
  CHECK(a.patch.pixels.min() >= 0.0f);
  CHECK(a.patch.pixels.max() <= 1.0f);
}

TEST_CASE("loss trace csv") {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "uavpd_trace.csv";
  write_loss_trace_csv(p, {{0, 1.0f, 0.5f, 0.3f, 0.2f, 0.1f}});
  std::ifstream f(p);
  std::string header;
  std::getline(f, header);
  CHECK(header == "step,total,score,nps,tv,lr");
  fs::remove(p);
}
