#include "uavpd/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "uavpd/errors.hpp"
#include "uavpd/image.hpp"

namespace fs = std::filesystem;

namespace uavpd {

std::map<int, int> default_visdrone_class_map() {
  // VisDrone categories: 4 car, 5 van, 6 truck, 9 bus.
  ClassSet cs = ClassSet::default_vehicles();
  return {{4, cs.id_of("Car")}, {5, cs.id_of("Van")}, {6, cs.id_of("Truck")}, {9, cs.id_of("Bus")}};
}

std::vector<Annotation> load_annotations(const fs::path& path,
                                         const std::map<int, int>& class_map) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file: " + path.string());
  std::vector<Annotation> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    // Tolerate one trailing comma (present in some VisDrone dumps).
    if (line.back() == ',') line.pop_back();
    std::vector<long> fields;
    std::stringstream ss(line);
    std::string tok;
    bool bad = false;
    while (std::getline(ss, tok, ',')) {
      try {
        size_t pos = 0;
        long v = std::stol(tok, &pos);
        while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
        if (pos != tok.size()) bad = true;
        fields.push_back(v);
      } catch (const std::exception&) {
        bad = true;
        break;
      }
    }
    if (bad || fields.size() != 8)
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected 8 comma-separated integers, got '" + line + "'");
    long w = fields[2], h = fields[3];
    if (w <= 0 || h <= 0) continue;  // degenerate box
    Annotation a;
    a.box = {static_cast<float>(fields[0]), static_cast<float>(fields[1]), static_cast<float>(w),
             static_cast<float>(h)};
    auto it = class_map.find(static_cast<int>(fields[5]));
    if (it == class_map.end()) {
      a.ignore = true;
      a.class_id = 0;
    } else {
      a.class_id = it->second;
      a.ignore = false;
    }
    out.push_back(a);
  }
  return out;
}

std::vector<ImageSample> filter_small_objects(std::vector<ImageSample> samples, double min_frac) {
  if (!(min_frac > 0.0 && min_frac < 1.0))
    throw ConfigError("filter_small_objects: min_frac must be in (0,1)");
  std::vector<ImageSample> out;
  out.reserve(samples.size());
  for (auto& s : samples) {
    // Canonical box fractions equal the pre-resize fractions: both axes are
    // scaled linearly, so area ratios are preserved.
    double img_area = double(s.image.dim(0)) * s.image.dim(1);
    std::vector<Annotation> kept;
    for (const auto& a : s.annotations) {
      double frac = double(a.box.w) * a.box.h / img_area;
      if (frac < min_frac) continue;
      kept.push_back(a);
    }
    s.annotations = std::move(kept);
    if (count_targets(s.annotations) == 0) continue;
    out.push_back(std::move(s));
  }
  return out;
}

TextureBank load_texture_bank(const fs::path& dir) {
  static const std::set<std::string> kExts = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif"};
  if (!fs::is_directory(dir)) throw ConfigError("texture bank path is not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (kExts.count(ext)) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  TextureBank bank;
  for (const auto& f : files) {
    Tensor img;
    try {
      img = load_image_rgb01(f);
    } catch (const IoError&) {
      continue;  // unreadable file, skip
    }
    img = center_crop_square(img);
    if (img.dim(0) < 64) img = resize_image_bilinear(img, 64, 64);
    bank.textures.push_back(std::move(img));
    bank.ids.push_back(fs::relative(f, dir).string());
  }
  if (bank.empty()) throw ConfigError("no readable texture images under " + dir.string());
  return bank;
}

ImageSample generate_toy_scene(uint64_t seed, const ToySceneConfig& cfg) {
  if (cfg.area_frac_min < cfg.min_area_filter)
    throw ConfigError("toy scene: area_frac_min below the dataset filter threshold");
  if (cfg.n_classes < 1 || cfg.n_classes > static_cast<int>(cfg.palette.size()))
    throw ConfigError("toy scene: n_classes out of palette range");
  Rng rng(seed);
  int S = cfg.canvas;
  Tensor img({S, S, 3});

  // Textured ground.
  float base[3] = {0.32f, 0.30f, 0.27f};
  if (cfg.background_style == 1) {
    int block = 8;
    int nb = (S + block - 1) / block;
    std::vector<float> cells(static_cast<size_t>(nb) * nb);
    for (auto& v : cells) v = static_cast<float>(rng.uniform(-0.08, 0.08));
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        float d = cells[static_cast<size_t>(y / block) * nb + x / block] +
                  static_cast<float>(rng.uniform(-0.03, 0.03));
        for (int c = 0; c < 3; ++c) img.at3(y, x, c) = std::clamp(base[c] + d, 0.0f, 1.0f);
      }
  } else if (cfg.background_style == 2) {
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        float grad = 0.08f * (float(y) / S - 0.5f);
        float d = grad + static_cast<float>(rng.uniform(-0.04, 0.04));
        for (int c = 0; c < 3; ++c) img.at3(y, x, c) = std::clamp(base[c] + d, 0.0f, 1.0f);
      }
  } else {
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        float d = static_cast<float>(rng.uniform(-0.06, 0.06));
        for (int c = 0; c < 3; ++c) img.at3(y, x, c) = std::clamp(base[c] + d, 0.0f, 1.0f);
      }
  }

  int n_objects = static_cast<int>(rng.uniform_int(cfg.n_objects_min, cfg.n_objects_max));
  std::vector<Annotation> anns;
  for (int i = 0; i < n_objects; ++i) {
    int cls = static_cast<int>(rng.uniform_int(0, cfg.n_classes - 1));
    float aspect = cfg.aspects[static_cast<size_t>(cls)] *
                   static_cast<float>(rng.uniform(0.9, 1.1));
    int w = 0, h = 0, x0 = -1, y0 = -1;
    for (int attempt = 0; attempt < 120 && x0 < 0; ++attempt) {
      double area = rng.uniform(cfg.area_frac_min, cfg.area_frac_max) * S * S;
      w = std::max(3, static_cast<int>(std::lround(std::sqrt(area * aspect))));
      h = std::max(3, static_cast<int>(std::lround(area / w)));
      if (rng.bernoulli()) std::swap(w, h);
      if (w > S / 2 || h > S / 2) continue;
      if (double(w) * h / (double(S) * S) < cfg.min_area_filter) continue;
      int tx = static_cast<int>(rng.uniform_int(1, S - w - 1));
      int ty = static_cast<int>(rng.uniform_int(1, S - h - 1));
      BoundingBox cand{float(tx) - 2.0f, float(ty) - 2.0f, float(w) + 4.0f, float(h) + 4.0f};
      bool clash = false;
      for (const auto& a : anns)
        if (iou(cand, a.box) > 0.0) clash = true;
      if (!clash) {
        x0 = tx;
        y0 = ty;
      }
    }
    if (x0 < 0) continue;  // crowded scene, skip this object

    const auto& col = cfg.palette[static_cast<size_t>(cls)];
    float jitter[3];
    for (int c = 0; c < 3; ++c) jitter[c] = static_cast<float>(rng.uniform(-0.06, 0.06));
    bool horizontal = w >= h;
    // Body fills the box exactly; the windshield band stays inside it.
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) {
        float shade = static_cast<float>(rng.uniform(-0.02, 0.02));
        bool band = horizontal ? (x - x0) >= w / 5 && (x - x0) < w / 5 + std::max(1, w / 6)
                               : (y - y0) >= h / 5 && (y - y0) < h / 5 + std::max(1, h / 6);
        for (int c = 0; c < 3; ++c) {
          float v = std::clamp(col[c] + jitter[c] + shade, 0.0f, 1.0f);
          if (band) v = std::clamp(v + 0.25f, 0.0f, 1.0f);
          img.at3(y, x, c) = v;
        }
      }
    anns.push_back({{float(x0), float(y0), float(w), float(h)}, cls, false});
  }

  ImageSample out;
  out.image = canonical_from_01(img);
  out.annotations = std::move(anns);
  out.source_id = "toy_" + std::to_string(seed);
  out.original_size = {S, S};
  return out;
}

ImageSample to_canonical(const Tensor& raw_hwc_255, std::vector<Annotation> annotations,
                         int target_size, std::string source_id) {
  if (raw_hwc_255.empty() || raw_hwc_255.ndim() != 3)
    throw ContractViolation("to_canonical: raw image must be non-empty HWC");
  int h0 = raw_hwc_255.dim(0), w0 = raw_hwc_255.dim(1);
  Tensor resized = resize_image_bilinear(raw_hwc_255, target_size, target_size);
  for (auto& v : resized.vec()) v = v / 127.5f - 1.0f;
  float sx = static_cast<float>(target_size) / w0;
  float sy = static_cast<float>(target_size) / h0;
  std::vector<Annotation> out_anns;
  for (auto a : annotations) {
    a.box = clip_box({a.box.x * sx, a.box.y * sy, a.box.w * sx, a.box.h * sy},
                     static_cast<float>(target_size), static_cast<float>(target_size));
    if (!a.box.valid()) continue;
    out_anns.push_back(a);
  }
  ImageSample s;
  s.image = std::move(resized);
  s.annotations = std::move(out_anns);
  s.source_id = std::move(source_id);
  s.original_size = {w0, h0};
  return s;
}

void save_sample(const fs::path& root, const ImageSample& sample,
                 const std::map<int, int>& class_map) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "annotations");
  save_image_rgb01(root / "images" / (sample.source_id + ".png"),
                   img01_from_canonical(sample.image));
  std::map<int, int> inverse;  // class id -> category
  for (const auto& [cat, cls] : class_map) inverse.emplace(cls, cat);
  std::ofstream out(root / "annotations" / (sample.source_id + ".txt"));
  if (!out) throw IoError("cannot write annotations under " + root.string());
  for (const auto& a : sample.annotations) {
    int cat = 0, score = 0;
    if (!a.ignore) {
      auto it = inverse.find(a.class_id);
      if (it == inverse.end()) throw ConfigError("save_sample: class id not in class map");
      cat = it->second;
      score = 1;
    }
    out << std::lround(a.box.x) << "," << std::lround(a.box.y) << "," << std::lround(a.box.w)
        << "," << std::lround(a.box.h) << "," << score << "," << cat << ",0,0\n";
  }
}

std::vector<ImageSample> load_dataset_dir(const fs::path& root,
                                          const std::map<int, int>& class_map, int input_size) {
  fs::path imgdir = root / "images";
  if (!fs::is_directory(imgdir)) throw MissingArtifactError("dataset missing: " + imgdir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(imgdir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<ImageSample> out;
  for (const auto& f : files) {
    Tensor raw = load_image_rgb01(f);
    for (auto& v : raw.vec()) v *= 255.0f;
    fs::path ann = root / "annotations" / (f.stem().string() + ".txt");
    std::vector<Annotation> annotations;
    if (fs::exists(ann)) annotations = load_annotations(ann, class_map);
    out.push_back(to_canonical(raw, std::move(annotations), input_size, f.stem().string()));
  }
  return out;
}

void write_procedural_textures(const fs::path& dir, int count, int side, uint64_t seed) {
  fs::create_directories(dir);
  Rng rng(seed);
  for (int t = 0; t < count; ++t) {
    Tensor img({side, side, 3});
    int kind = t % 5;
    float c1[3], c2[3];
    for (int c = 0; c < 3; ++c) {
      c1[c] = static_cast<float>(rng.uniform(0.0, 1.0));
      c2[c] = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    int period = static_cast<int>(rng.uniform_int(4, 16));
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        float mixv = 0.0f;
        switch (kind) {
          case 0: mixv = ((x / period + y / period) % 2 == 0) ? 0.0f : 1.0f; break;  // checker
          case 1: mixv = (x / period) % 2 == 0 ? 0.0f : 1.0f; break;                 // stripes
          case 2: mixv = static_cast<float>(rng.uniform());  break;                  // noise
          case 3: mixv = 0.5f + 0.5f * std::sin(0.25f * x) * std::sin(0.21f * y); break;
          default: {
            int cx = x % (2 * period), cy = y % (2 * period);
            float dx = cx - period, dy = cy - period;
            mixv = dx * dx + dy * dy < period * period * 0.35f ? 1.0f : 0.0f;        // dots
          }
        }
        for (int c = 0; c < 3; ++c) img.at3(y, x, c) = c1[c] * (1.0f - mixv) + c2[c] * mixv;
      }
    char name[32];
    std::snprintf(name, sizeof(name), "tex_%03d.png", t);
    save_image_rgb01(dir / name, img);
  }
}

}  // namespace uavpd
