#include "uavpd/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "uavpd/detector.hpp"
#include "uavpd/errors.hpp"

namespace fs = std::filesystem;

namespace uavpd {

MatchResult match_detections(std::vector<Detection> dets, const std::vector<Annotation>& gts,
                             double thr) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    if (a.box.y != b.box.y) return a.box.y < b.box.y;
    if (a.box.w != b.box.w) return a.box.w < b.box.w;
    return a.box.h < b.box.h;
  });
  MatchResult res;
  res.det_flag.assign(dets.size(), 0);
  res.ann_matched_det.assign(gts.size(), -1);
  std::vector<bool> gt_used(gts.size(), false);
  for (size_t d = 0; d < dets.size(); ++d) {
    double best_iou = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].ignore || gt_used[g] || gts[g].class_id != dets[d].class_id) continue;
      double v = iou(dets[d].box, gts[g].box);
      if (v >= thr && v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      res.det_flag[d] = 1;
      gt_used[static_cast<size_t>(best_gt)] = true;
      res.ann_matched_det[static_cast<size_t>(best_gt)] = static_cast<int>(d);
      continue;
    }
    // Ignore regions absorb otherwise-unmatched detections of any class.
    bool absorbed = false;
    for (size_t g = 0; g < gts.size() && !absorbed; ++g)
      if (gts[g].ignore && iou(dets[d].box, gts[g].box) >= thr) absorbed = true;
    res.det_flag[d] = absorbed ? -1 : 0;
  }
  res.dets = std::move(dets);
  return res;
}

void MetricsAccumulator::add_image(const std::vector<Detection>& dets,
                                   const std::vector<Annotation>& gts, double thr) {
  MatchResult m = match_detections(dets, gts, thr);
  for (size_t d = 0; d < m.dets.size(); ++d) {
    if (m.det_flag[d] < 0) continue;
    auto cid = static_cast<size_t>(m.dets[d].class_id);
    if (cid >= classes_.size()) continue;
    classes_[cid].records.emplace_back(m.dets[d].confidence, m.det_flag[d]);
  }
  for (const auto& g : gts)
    if (!g.ignore && static_cast<size_t>(g.class_id) < classes_.size())
      classes_[static_cast<size_t>(g.class_id)].n_gt++;
}

namespace {
// (recall, precision) points at distinct confidence thresholds, walking the
// records by descending confidence. Tie groups enter together so tie order
// never affects the curve.
std::vector<std::pair<double, double>> pr_points(const ClassAgg& agg) {
  auto rec = agg.records;
  std::sort(rec.begin(), rec.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::pair<double, double>> pts;
  int tp = 0, fp = 0;
  for (size_t i = 0; i < rec.size(); ++i) {
    if (rec[i].second == 1) ++tp;
    else ++fp;
    bool boundary = i + 1 == rec.size() || rec[i + 1].first != rec[i].first;
    if (boundary && agg.n_gt > 0)
      pts.emplace_back(double(tp) / agg.n_gt, double(tp) / (tp + fp));
  }
  return pts;
}
}  // namespace

PrCurve pr_curve_and_ap(const ClassAgg& agg) {
  PrCurve out;
  if (agg.n_gt == 0) return out;
  auto pts = pr_points(agg);
  // Monotonize: running max from high recall toward low.
  for (size_t i = pts.size(); i-- > 1;) pts[i - 1].second = std::max(pts[i - 1].second, pts[i].second);
  double ap = 0.0;
  for (int k = 0; k <= 100; ++k) {
    double r = k / 100.0;
    double p = 0.0;
    for (const auto& [rec, prec] : pts)
      if (rec >= r - 1e-12) {
        p = prec;  // first point at recall >= r carries the running max
        break;
      }
    out.precision[static_cast<size_t>(k)] = p;
    ap += p;
  }
  out.ap = ap / 101.0;
  return out;
}

double average_recall(const ClassAgg& agg) {
  if (agg.n_gt == 0) return 0.0;
  int tp = 0;
  for (const auto& [conf, flag] : agg.records)
    if (flag == 1) ++tp;
  return double(tp) / agg.n_gt;
}

ConditionMetrics compute_metrics(const MetricsAccumulator& acc) {
  ConditionMetrics out;
  int valid = 0;
  double sum_ap = 0.0, sum_ar = 0.0;
  for (const auto& agg : acc.classes()) {
    PrCurve c = pr_curve_and_ap(agg);
    double ar = average_recall(agg);
    bool ok = agg.n_gt > 0;
    out.per_class_ap.push_back(ok ? c.ap : 0.0);
    out.per_class_ar.push_back(ok ? ar : 0.0);
    out.class_valid.push_back(ok);
    out.curves.push_back(c);
    if (ok) {
      ++valid;
      sum_ap += c.ap;
      sum_ar += ar;
    }
  }
  out.mean_ap = valid ? sum_ap / valid : 0.0;
  out.mean_ar = valid ? sum_ar / valid : 0.0;
  return out;
}

ConditionMetrics evaluate_detections(const DetectorContract& det,
                                     const std::vector<ImageSample>& samples) {
  MetricsAccumulator acc(det.classes().size());
  for (const auto& s : samples) acc.add_image(det.detect(s), s.annotations);
  return compute_metrics(acc);
}

AsrResult attack_success_rate(const MetricsAccumulator& clean, const MetricsAccumulator& patched) {
  if (clean.classes().size() != patched.classes().size())
    throw ContractViolation("attack_success_rate: class count mismatch");
  AsrResult out;
  double sum = 0.0;
  int valid = 0;
  for (size_t k = 0; k < clean.classes().size(); ++k) {
    const ClassAgg& ca = clean.classes()[k];
    const ClassAgg& pa = patched.classes()[k];
    if (ca.n_gt != pa.n_gt)
      throw ContractViolation("attack_success_rate: clean and patched runs cover different images");
    std::vector<float> ctp, ptp;
    for (const auto& [conf, flag] : ca.records)
      if (flag == 1) ctp.push_back(conf);
    for (const auto& [conf, flag] : pa.records)
      if (flag == 1) ptp.push_back(conf);
    std::sort(ctp.begin(), ctp.end(), std::greater<float>());
    std::sort(ptp.begin(), ptp.end(), std::greater<float>());
    double acc = 0.0;
    int npts = 0;
    for (int i = 0; i <= 100; ++i) {
      int needed = static_cast<int>(std::ceil(i / 100.0 * ca.n_gt - 1e-9));
      if (needed < 1 || needed > static_cast<int>(ctp.size())) continue;
      float t = ctp[static_cast<size_t>(needed - 1)];
      int mc = static_cast<int>(std::count_if(ctp.begin(), ctp.end(), [&](float x) { return x >= t; }));
      int mp = static_cast<int>(std::count_if(ptp.begin(), ptp.end(), [&](float x) { return x >= t; }));
      if (mc == 0) continue;
      double asr = 1.0 - double(mp) / mc;
      acc += std::clamp(asr, 0.0, 1.0);
      ++npts;
    }
    bool ok = npts > 0;
    out.per_class.push_back(ok ? acc / npts : 0.0);
    out.class_valid.push_back(ok);
    if (ok) {
      sum += acc / npts;
      ++valid;
    }
  }
  out.mean = valid ? sum / valid : 0.0;
  return out;
}

OverheadResult measure_overhead(const std::function<void(const ImageSample&)>& detect_fn,
                                const std::function<ImageSample(const ImageSample&)>& preprocess_fn,
                                const std::vector<ImageSample>& images, int repetitions) {
  if (images.size() < 100)
    throw ContractViolation("measure_overhead: needs at least 100 images");
  if (repetitions < 1) throw ContractViolation("measure_overhead: repetitions >= 1");
  using clock = std::chrono::steady_clock;
  // Empirical clock granularity: smallest positive tick observed.
  double gran_ns = 1e18;
  for (int i = 0; i < 1000; ++i) {
    auto a = clock::now();
    auto b = clock::now();
    while (b == a) b = clock::now();
    gran_ns = std::min(gran_ns, std::chrono::duration<double, std::nano>(b - a).count());
  }
  // Warmup pass (excluded from measurements).
  size_t warm = std::min<size_t>(images.size(), 16);
  for (size_t i = 0; i < warm; ++i) {
    detect_fn(images[i]);
    detect_fn(preprocess_fn(images[i]));
  }
  std::vector<double> overheads;
  double det_ms = 0.0, pipe_ms = 0.0;
  for (int rep = 0; rep < repetitions; ++rep) {
    auto t0 = clock::now();
    for (const auto& img : images) detect_fn(img);
    auto t1 = clock::now();
    for (const auto& img : images) detect_fn(preprocess_fn(img));
    auto t2 = clock::now();
    double d = std::chrono::duration<double, std::milli>(t1 - t0).count() / images.size();
    double p = std::chrono::duration<double, std::milli>(t2 - t1).count() / images.size();
    if (d * 1e6 < 10.0 * gran_ns)
      throw NumericalError(
          "measure_overhead: per-image detection time is below 10x the clock granularity; "
          "time larger batches instead");
    det_ms += d;
    pipe_ms += p;
    overheads.push_back((p - d) / d * 100.0);
  }
  OverheadResult res;
  res.repetitions = repetitions;
  res.detect_ms_per_image = det_ms / repetitions;
  res.pipeline_ms_per_image = pipe_ms / repetitions;
  double mean = 0.0;
  for (double v : overheads) mean += v;
  mean /= overheads.size();
  double var = 0.0;
  for (double v : overheads) var += (v - mean) * (v - mean);
  res.mean_pct = mean;
  res.std_pct = overheads.size() > 1 ? std::sqrt(var / (overheads.size() - 1)) : 0.0;
  return res;
}

namespace {

struct Aggregate {
  double mean = 0.0, min = 0.0, max = 0.0;
  std::vector<double> values;
};

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.values = values;
  if (values.empty()) return a;
  a.min = a.max = values[0];
  for (double v : values) {
    a.mean += v;
    a.min = std::min(a.min, v);
    a.max = std::max(a.max, v);
  }
  a.mean /= values.size();
  return a;
}

nlohmann::ordered_json agg_json(const Aggregate& a) {
  nlohmann::ordered_json j;
  j["mean"] = a.mean;
  j["min"] = a.min;
  j["max"] = a.max;
  j["runs"] = a.values;
  return j;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_svg_header(std::ofstream& f, int w, int h) {
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
    << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
}

const char* kPalette[] = {"#c0392b", "#2980b9", "#d4a017", "#27ae60",
                          "#8e44ad", "#16a085", "#7f8c8d", "#2c3e50"};

}  // namespace

void render_report(const EvalReport& report, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw IoError("cannot create report directory: " + out_dir.string());

  int K = report.class_set.size();
  std::vector<Aggregate> ap(static_cast<size_t>(K)), ar(static_cast<size_t>(K)),
      asr(static_cast<size_t>(K));
  std::vector<double> mean_ap_runs, mean_ar_runs, mean_asr_runs;
  for (int k = 0; k < K; ++k) {
    std::vector<double> a, r, s;
    for (const auto& run : report.runs) {
      a.push_back(run.metrics.per_class_ap[static_cast<size_t>(k)]);
      r.push_back(run.metrics.per_class_ar[static_cast<size_t>(k)]);
      s.push_back(run.asr.per_class[static_cast<size_t>(k)]);
    }
    ap[static_cast<size_t>(k)] = aggregate(a);
    ar[static_cast<size_t>(k)] = aggregate(r);
    asr[static_cast<size_t>(k)] = aggregate(s);
  }
  for (const auto& run : report.runs) {
    mean_ap_runs.push_back(run.metrics.mean_ap);
    mean_ar_runs.push_back(run.metrics.mean_ar);
    mean_asr_runs.push_back(run.asr.mean);
  }

  // report.json
  {
    nlohmann::ordered_json j;
    j["schema_version"] = report.schema_version;
    j["meta"] = report.meta;
    nlohmann::ordered_json pc;
    for (int k = 0; k < K; ++k) {
      nlohmann::ordered_json c;
      c["ap"] = agg_json(ap[static_cast<size_t>(k)]);
      c["ar"] = agg_json(ar[static_cast<size_t>(k)]);
      c["asr"] = agg_json(asr[static_cast<size_t>(k)]);
      pc[report.class_set.names[static_cast<size_t>(k)]] = c;
    }
    j["per_class"] = pc;
    nlohmann::ordered_json means;
    means["ap"] = agg_json(aggregate(mean_ap_runs));
    means["ar"] = agg_json(aggregate(mean_ar_runs));
    means["asr"] = agg_json(aggregate(mean_asr_runs));
    j["means"] = means;
    nlohmann::ordered_json curves;
    for (int k = 0; k < K; ++k) {
      std::vector<double> meanp(101, 0.0);
      for (const auto& run : report.runs)
        for (int i = 0; i <= 100; ++i)
          meanp[static_cast<size_t>(i)] +=
              run.metrics.curves[static_cast<size_t>(k)].precision[static_cast<size_t>(i)];
      if (!report.runs.empty())
        for (auto& v : meanp) v /= static_cast<double>(report.runs.size());
      curves[report.class_set.names[static_cast<size_t>(k)]] = meanp;
    }
    j["curves"] = curves;
    if (report.timing) {
      nlohmann::ordered_json t;
      t["overhead_pct_mean"] = report.timing->mean_pct;
      t["overhead_pct_std"] = report.timing->std_pct;
      t["detect_ms_per_image"] = report.timing->detect_ms_per_image;
      t["pipeline_ms_per_image"] = report.timing->pipeline_ms_per_image;
      t["repetitions"] = report.timing->repetitions;
      j["timing"] = t;
    } else {
      j["timing"] = nullptr;
    }
    std::ofstream f(out_dir / "report.json");
    f << j.dump(2) << "\n";
  }

  // per_class.csv
  {
    std::ofstream f(out_dir / "per_class.csv");
    f << "class,ap_mean,ap_min,ap_max,ar_mean,ar_min,ar_max,asr_mean,asr_min,asr_max\n";
    for (int k = 0; k < K; ++k) {
      const auto& a = ap[static_cast<size_t>(k)];
      const auto& r = ar[static_cast<size_t>(k)];
      const auto& s = asr[static_cast<size_t>(k)];
      f << report.class_set.names[static_cast<size_t>(k)] << "," << fmt(a.mean) << ","
        << fmt(a.min) << "," << fmt(a.max) << "," << fmt(r.mean) << "," << fmt(r.min) << ","
        << fmt(r.max) << "," << fmt(s.mean) << "," << fmt(s.min) << "," << fmt(s.max) << "\n";
    }
  }

  // pr_curves.svg: mean precision vs recall per class.
  {
    int W = 480, H = 360, mx = 50, my = 30;
    std::ofstream f(out_dir / "pr_curves.svg");
    write_svg_header(f, W, H);
    f << "<g stroke=\"#444\" stroke-width=\"1\">"
      << "<line x1=\"" << mx << "\" y1=\"" << H - my << "\" x2=\"" << W - 10 << "\" y2=\""
      << H - my << "\"/>"
      << "<line x1=\"" << mx << "\" y1=\"" << H - my << "\" x2=\"" << mx << "\" y2=\"10\"/></g>\n";
    f << "<text x=\"" << W / 2 << "\" y=\"" << H - 6 << "\" font-size=\"12\">recall</text>\n";
    f << "<text x=\"12\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 "
      << H / 2 << ")\">precision</text>\n";
    auto px = [&](double r) { return mx + r * (W - 10 - mx); };
    auto py = [&](double p) { return (H - my) - p * (H - my - 10); };
    for (int k = 0; k < K; ++k) {
      std::vector<double> meanp(101, 0.0);
      for (const auto& run : report.runs)
        for (int i = 0; i <= 100; ++i)
          meanp[static_cast<size_t>(i)] +=
              run.metrics.curves[static_cast<size_t>(k)].precision[static_cast<size_t>(i)];
      if (!report.runs.empty())
        for (auto& v : meanp) v /= static_cast<double>(report.runs.size());
      f << "<polyline fill=\"none\" stroke=\"" << kPalette[k % 8] << "\" stroke-width=\"1.5\" points=\"";
      for (int i = 0; i <= 100; ++i)
        f << fmt(px(i / 100.0)) << "," << fmt(py(meanp[static_cast<size_t>(i)])) << " ";
      f << "\"/>\n";
      f << "<text x=\"" << W - 120 << "\" y=\"" << 20 + 14 * k << "\" font-size=\"11\" fill=\""
        << kPalette[k % 8] << "\">" << report.class_set.names[static_cast<size_t>(k)] << "</text>\n";
    }
    f << "</svg>\n";
  }

  // asr_by_class.svg: bars with min/max whiskers.
  {
    int W = 480, H = 360, mx = 50, my = 40;
    std::ofstream f(out_dir / "asr_by_class.svg");
    write_svg_header(f, W, H);
    f << "<line x1=\"" << mx << "\" y1=\"" << H - my << "\" x2=\"" << W - 10 << "\" y2=\""
      << H - my << "\" stroke=\"#444\"/>\n";
    f << "<line x1=\"" << mx << "\" y1=\"" << H - my << "\" x2=\"" << mx
      << "\" y2=\"10\" stroke=\"#444\"/>\n";
    f << "<text x=\"12\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 "
      << H / 2 << ")\">ASR</text>\n";
    auto py = [&](double v) { return (H - my) - v * (H - my - 10); };
    double bw = double(W - mx - 20) / std::max(1, K);
    for (int k = 0; k < K; ++k) {
      const auto& s = asr[static_cast<size_t>(k)];
      double x0 = mx + k * bw + bw * 0.2, x1 = mx + k * bw + bw * 0.8;
      double cx = (x0 + x1) / 2;
      f << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(py(s.mean)) << "\" width=\""
        << fmt(x1 - x0) << "\" height=\"" << fmt(py(0) - py(s.mean)) << "\" fill=\""
        << kPalette[k % 8] << "\"/>\n";
      f << "<line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(py(s.min)) << "\" x2=\"" << fmt(cx)
        << "\" y2=\"" << fmt(py(s.max)) << "\" stroke=\"#111\"/>\n";
      f << "<line x1=\"" << fmt(cx - 4) << "\" y1=\"" << fmt(py(s.min)) << "\" x2=\""
        << fmt(cx + 4) << "\" y2=\"" << fmt(py(s.min)) << "\" stroke=\"#111\"/>\n";
      f << "<line x1=\"" << fmt(cx - 4) << "\" y1=\"" << fmt(py(s.max)) << "\" x2=\""
        << fmt(cx + 4) << "\" y2=\"" << fmt(py(s.max)) << "\" stroke=\"#111\"/>\n";
      f << "<text x=\"" << fmt(x0) << "\" y=\"" << H - my + 16 << "\" font-size=\"11\">"
        << report.class_set.names[static_cast<size_t>(k)] << "</text>\n";
    }
    f << "</svg>\n";
  }
}

void write_detection_dump(const fs::path& path,
                          const std::vector<std::pair<std::string, std::vector<Detection>>>& dets,
                          const ClassSet& classes) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write detection dump: " + path.string());
  for (const auto& [id, v] : dets)
    for (const auto& d : v)
      f << id << " " << classes.name_of(d.class_id) << " " << fmt(d.box.x) << " " << fmt(d.box.y)
        << " " << fmt(d.box.w) << " " << fmt(d.box.h) << " " << fmt(d.confidence) << "\n";
}

std::map<std::string, std::vector<Detection>> read_detection_dump(const fs::path& path,
                                                                  const ClassSet& classes) {
  std::ifstream f(path);
  if (!f) throw MissingArtifactError("detection dump not found: " + path.string());
  std::map<std::string, std::vector<Detection>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id, cls;
    Detection d;
    if (!(ss >> id >> cls >> d.box.x >> d.box.y >> d.box.w >> d.box.h >> d.confidence))
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad detection record");
    d.class_id = classes.id_of(cls);
    if (d.class_id < 0)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": unknown class " + cls);
    out[id].push_back(d);
  }
  return out;
}

}  // namespace uavpd
