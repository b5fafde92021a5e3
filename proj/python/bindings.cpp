#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "uavpd/attack.hpp"
#include "uavpd/datasets.hpp"
#include "uavpd/defense.hpp"
#include "uavpd/detector.hpp"
#include "uavpd/eval.hpp"
#include "uavpd/patching.hpp"
#include "uavpd/workbench.hpp"

namespace py = pybind11;
using namespace uavpd;

namespace {

py::array_t<float> tensor_to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
  return out;
}

Tensor numpy_to_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
  Tensor t(shape);
  std::copy(a.data(), a.data() + t.numel(), t.data());
  return t;
}

py::dict annotation_to_dict(const Annotation& a) {
  py::dict d;
  d["box"] = py::make_tuple(a.box.x, a.box.y, a.box.w, a.box.h);
  d["class_id"] = a.class_id;
  d["ignore"] = a.ignore;
  return d;
}

Annotation dict_to_annotation(const py::dict& d) {
  Annotation a;
  auto box = d["box"].cast<py::tuple>();
  a.box = {box[0].cast<float>(), box[1].cast<float>(), box[2].cast<float>(),
           box[3].cast<float>()};
  a.class_id = d.contains("class_id") ? d["class_id"].cast<int>() : 0;
  a.ignore = d.contains("ignore") ? d["ignore"].cast<bool>() : false;
  return a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adversarial patch attack/defense workbench core";

  m.def("iou", [](py::tuple a, py::tuple b) {
    BoundingBox ba{a[0].cast<float>(), a[1].cast<float>(), a[2].cast<float>(), a[3].cast<float>()};
    BoundingBox bb{b[0].cast<float>(), b[1].cast<float>(), b[2].cast<float>(), b[3].cast<float>()};
    return iou(ba, bb);
  }, py::arg("a"), py::arg("b"), "IoU of two (x, y, w, h) boxes");

  m.def("generate_toy_scene",
        [](uint64_t seed, int canvas, int n_min, int n_max) {
          ToySceneConfig cfg;
          cfg.canvas = canvas;
          cfg.n_objects_min = n_min;
          cfg.n_objects_max = n_max;
          ImageSample s = generate_toy_scene(seed, cfg);
          py::list anns;
          for (const auto& a : s.annotations) anns.append(annotation_to_dict(a));
          return py::make_tuple(tensor_to_numpy(s.image), anns);
        },
        py::arg("seed"), py::arg("canvas") = 96, py::arg("n_objects_min") = 2,
        py::arg("n_objects_max") = 5,
        "Deterministic synthetic aerial scene; returns (HWC image in [-1,1], annotations)");

  m.def("patch_size_for", [](py::tuple box, double frac) {
    return patch_size_for({box[0].cast<float>(), box[1].cast<float>(), box[2].cast<float>(),
                           box[3].cast<float>()}, frac);
  }, py::arg("box"), py::arg("scale_frac"));

  m.def("sample_transform",
        [](uint64_t seed, const std::string& mode, int noise_side) {
          Rng rng(seed);
          auto t = sample_transform(rng, mode == "train" ? PatchMode::Train : PatchMode::Eval,
                                    noise_side);
          py::dict d;
          d["flip_h"] = t.flip_h;
          d["flip_v"] = t.flip_v;
          d["hue_shift"] = t.hue_shift;
          d["contrast"] = t.contrast;
          d["saturation"] = t.saturation;
          d["brightness"] = t.brightness;
          d["rotation_deg"] = t.rotation_deg;
          d["scale_frac"] = t.scale_frac;
          d["offset"] = py::make_tuple(t.off_u, t.off_v);
          return d;
        },
        py::arg("seed"), py::arg("mode") = "train", py::arg("noise_side") = 64);

  m.def("patch_objects",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> image, py::list anns,
           const std::string& source, uint64_t seed, const std::string& mode,
           py::object patch_pixels) {
          ImageSample s;
          s.image = numpy_to_tensor(image);
          for (auto a : anns) s.annotations.push_back(dict_to_annotation(a.cast<py::dict>()));
          s.original_size = {s.image.dim(1), s.image.dim(0)};
          Rng rng(seed);
          Patch p;
          ObjectPatchSource src = ObjectPatchSource::gray();
          if (source == "random") src = ObjectPatchSource::random();
          else if (source == "patch") {
            p.pixels = numpy_to_tensor(
                patch_pixels.cast<py::array_t<float, py::array::c_style | py::array::forcecast>>());
            p.source = PatchSourceKind::Adversarial;
            src = ObjectPatchSource::fixed_patch(p);
          }
          auto res = patch_objects(s, src, rng,
                                   mode == "train" ? PatchMode::Train : PatchMode::Eval);
          return py::make_tuple(tensor_to_numpy(res.sample.image),
                                static_cast<int>(res.applications.size()),
                                res.skipped_objects);
        },
        py::arg("image"), py::arg("annotations"), py::arg("source") = "gray", py::arg("seed") = 0,
        py::arg("mode") = "eval", py::arg("patch_pixels") = py::none(),
        "Apply per-object stochastic patches; returns (patched image, n_applied, n_skipped)");

  m.def("nps", [](py::array_t<float, py::array::c_style | py::array::forcecast> patch,
                  std::vector<std::array<float, 3>> colors, bool normalized) {
    Patch p;
    p.pixels = numpy_to_tensor(patch);
    return nps(p, PrintableColorSet{std::move(colors)}, normalized);
  }, py::arg("patch"), py::arg("colors"), py::arg("normalized") = true);

  m.def("total_variation", [](py::array_t<float, py::array::c_style | py::array::forcecast> patch,
                              bool normalized) {
    Patch p;
    p.pixels = numpy_to_tensor(patch);
    return total_variation(p, normalized);
  }, py::arg("patch"), py::arg("normalized") = true);

  m.def("ap_from_detections",
        [](py::list dets, py::list gts, int num_classes) {
          MetricsAccumulator acc(num_classes);
          std::vector<Detection> dv;
          for (auto d : dets) {
            auto t = d.cast<py::tuple>();
            dv.push_back({{t[0].cast<float>(), t[1].cast<float>(), t[2].cast<float>(),
                           t[3].cast<float>()}, t[4].cast<int>(), t[5].cast<float>()});
          }
          std::vector<Annotation> gv;
          for (auto g : gts) gv.push_back(dict_to_annotation(g.cast<py::dict>()));
          acc.add_image(dv, gv);
          auto m2 = compute_metrics(acc);
          py::dict out;
          out["mean_ap"] = m2.mean_ap;
          out["mean_ar"] = m2.mean_ar;
          out["per_class_ap"] = m2.per_class_ap;
          return out;
        },
        py::arg("detections"), py::arg("ground_truths"), py::arg("num_classes") = 4,
        "Single-image AP/AR; detections are (x, y, w, h, class_id, confidence) tuples");

  m.def("restore_image",
        [](const std::string& checkpoint,
           py::array_t<float, py::array::c_style | py::array::forcecast> image) {
          auto model = RestorationModel::load(checkpoint);
          return tensor_to_numpy(model->run(numpy_to_tensor(image)));
        },
        py::arg("checkpoint"), py::arg("image"),
        "Run a trained restoration checkpoint over an HWC image in [-1,1]");

  m.def("detect",
        [](const std::string& checkpoint,
           py::array_t<float, py::array::c_style | py::array::forcecast> image) {
          auto det = TinyDetector::load(checkpoint);
          ImageSample s;
          s.image = numpy_to_tensor(image);
          s.original_size = {s.image.dim(1), s.image.dim(0)};
          py::list out;
          for (const auto& d : det->detect(s)) {
            py::dict e;
            e["box"] = py::make_tuple(d.box.x, d.box.y, d.box.w, d.box.h);
            e["class_id"] = d.class_id;
            e["confidence"] = d.confidence;
            out.append(e);
          }
          return out;
        },
        py::arg("checkpoint"), py::arg("image"));

  m.attr("__version__") = "0.1.0";
}
