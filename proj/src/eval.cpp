#include "odssd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "odssd/error.hpp"

namespace odssd {

DisparityMap disparity_from_image16(const Image16& raw) {
  DisparityMap m;
  m.width = raw.width;
  m.height = raw.height;
  m.values.resize(raw.pixels.size());
  m.valid.resize(raw.pixels.size());
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
    m.valid[i] = raw.pixels[i] != 0;
    m.values[i] = static_cast<float>(raw.pixels[i]) / 256.0f;
  }
  return m;
}

DisparityMap read_disparity_gt(std::span<const std::uint8_t> png_bytes) {
  return disparity_from_image16(decode_png16(png_bytes));
}

std::optional<double> bbox_percentile_disparity(const DisparityMap& map, const BBox& box, double q) {
  if (!(q > 0.0 && q <= 100.0)) throw InvalidInput("percentile must lie in (0, 100]");
  if (!box.valid() || box.xmax <= 0 || box.ymax <= 0 || box.xmin >= map.width || box.ymin >= map.height) {
    throw InvalidInput("box does not intersect the disparity map");
  }
  // Pixel (x, y) belongs to the box when its center does.
  const int x0 = std::max(0, static_cast<int>(std::ceil(box.xmin - 0.5)));
  const int x1 = std::min(map.width - 1, static_cast<int>(std::floor(box.xmax - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(box.ymin - 0.5)));
  const int y1 = std::min(map.height - 1, static_cast<int>(std::floor(box.ymax - 0.5)));
  std::vector<float> sample;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const auto i = static_cast<std::size_t>(y) * map.width + x;
      if (map.valid[i]) sample.push_back(map.values[i]);
    }
  }
  if (sample.empty()) return std::nullopt;
  const auto n = sample.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(rank - 1), sample.end());
  return sample[rank - 1];
}

MatchResult match_detections(std::span<const BBox> detections, std::span<const double> scores,
                             std::span<const BBox> ground_truth, double iou_threshold) {
  if (detections.size() != scores.size()) throw InvalidInput("match_detections: boxes and scores differ in length");
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> taken(ground_truth.size(), false);
  MatchResult r;
  for (auto d : order) {
    double best = -1.0;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(detections[d], ground_truth[g]);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best >= iou_threshold && best >= 0.0) {
      taken[best_gt] = true;
      r.pairs.emplace_back(d, best_gt);
      ++r.true_positives;
    } else {
      ++r.false_positives;
    }
  }
  r.false_negatives = ground_truth.size() - r.true_positives;
  return r;
}

ErrorHistogram disparity_error_histogram(std::span<const double> errors) {
  ErrorHistogram h;
  if (errors.empty()) return h;
  double sum = 0.0;
  for (double e : errors) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw InvalidInput("disparity errors must be finite and non-negative");
    h.max = std::max(h.max, e);
    sum += e;
  }
  h.total = errors.size();
  h.mean = sum / static_cast<double>(errors.size());
  h.counts.assign(static_cast<std::size_t>(std::floor(h.max)) + 1, 0);
  for (double e : errors) ++h.counts[static_cast<std::size_t>(std::floor(e))];
  return h;
}

double ClassStats::precision() const {
  const auto d = true_positives + false_positives;
  return d == 0 ? 0.0 : static_cast<double>(true_positives) / static_cast<double>(d);
}

double ClassStats::recall() const {
  const auto d = true_positives + false_negatives;
  return d == 0 ? 0.0 : static_cast<double>(true_positives) / static_cast<double>(d);
}

EvalReport evaluate(std::span<const EvalSample> samples, std::span<const DetectionRecord> detections,
                    const EvalOptions& options) {
  EvalReport report;
  std::map<std::string, const EvalSample*> by_id;
  for (const auto& s : samples) {
    if (!by_id.emplace(s.id, &s).second) throw InvalidInput("duplicate sample id '" + s.id + "'");
  }
  report.images = by_id.size();

  std::map<std::string, std::vector<const DetectionRecord*>> dets_by_image;
  std::set<std::string> unknown;
  for (const auto& d : detections) {
    if (!by_id.contains(d.image_id)) {
      unknown.insert(d.image_id);
      continue;
    }
    if (d.detection.score >= options.score_threshold) dets_by_image[d.image_id].push_back(&d);
  }
  for (const auto& id : unknown) report.issues.push_back("detections for unknown image '" + id + "'");

  const std::set<std::string> masked(options.dense_masked_classes.begin(), options.dense_masked_classes.end());
  std::map<std::string, ClassStats> stats;
  std::vector<double> errors;
  for (const auto& [id, sample] : by_id) {
    const auto& dets = dets_by_image[id];
    std::set<std::string> names;
    for (const auto& o : sample->objects) names.insert(o.label);
    for (const auto* d : dets) names.insert(d->class_name);
    for (const auto& name : names) {
      std::vector<BBox> det_boxes, gt_boxes;
      std::vector<double> scores;
      std::vector<const DetectionRecord*> det_refs;
      std::vector<const StereoObject*> gt_refs;
      for (const auto* d : dets) {
        if (d->class_name != name) continue;
        det_boxes.push_back(d->detection.left_box);
        scores.push_back(d->detection.score);
        det_refs.push_back(d);
      }
      for (const auto& o : sample->objects) {
        if (o.label != name) continue;
        gt_boxes.push_back(o.left_box);
        gt_refs.push_back(&o);
      }
      const auto m = match_detections(det_boxes, scores, gt_boxes, options.iou_threshold);
      if (!(sample->dense && masked.contains(name))) {
        auto& cs = stats[name];
        cs.name = name;
        cs.true_positives += m.true_positives;
        cs.false_positives += m.false_positives;
        cs.false_negatives += m.false_negatives;
      }
      auto pairs = m.pairs;
      std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
      for (const auto& [di, gi] : pairs) {
        const auto& det = det_refs[di]->detection;
        DetectionRow row{id, name, det.score, det.dx, gt_refs[gi]->disparity.dx, std::nullopt, std::nullopt};
        if (sample->dense) {
          row.dense_dx95 = bbox_percentile_disparity(*sample->dense, det.left_box, 95.0);
          row.dense_dx97 = bbox_percentile_disparity(*sample->dense, det.left_box, 97.0);
          if (!row.dense_dx95) ++report.dense_no_data;
        }
        errors.push_back(std::abs(row.predicted_dx - row.gt_dx));
        report.rows.push_back(std::move(row));
      }
    }
  }
  for (auto& [name, cs] : stats) report.classes.push_back(cs);
  report.histogram = disparity_error_histogram(errors);
  return report;
}

EvalReport evaluate_dataset(const DatasetIndex& index, std::span<const DetectionRecord> detections,
                            const std::optional<std::filesystem::path>& gt_dir, const EvalOptions& options) {
  std::vector<EvalSample> samples;
  std::vector<std::string> issues;
  for (const auto& e : index.entries) {
    EvalSample s;
    s.id = e.id();
    try {
      const auto bytes = read_file(e.annotation);
      const auto doc = parse_annotation(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
      auto conv = doc_to_targets(doc);
      s.objects = std::move(conv.objects);
      for (const auto& w : conv.warnings) issues.push_back(s.id + ": " + w);
    } catch (const Error& ex) {
      issues.push_back(s.id + ": annotation skipped: " + ex.what());
      continue;
    }
    if (gt_dir) {
      const auto path = *gt_dir / (s.id + ".png");
      try {
        s.dense = read_disparity_gt(read_file(path));
      } catch (const Error& ex) {
        issues.push_back(s.id + ": dense ground truth unavailable: " + ex.what());
      }
    }
    samples.push_back(std::move(s));
  }
  auto report = evaluate(samples, detections, options);
  issues.insert(issues.end(), report.issues.begin(), report.issues.end());
  report.issues = std::move(issues);
  return report;
}

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string rounded(const std::optional<double>& v) {
  if (!v) return "-";
  return std::to_string(static_cast<long long>(std::lround(*v)));
}

}  // namespace

std::string summary_row(const DetectionRow& row) {
  return row.class_name + ", " + fixed(row.confidence, 2) + ", " + rounded(row.predicted_dx) + ", " +
         rounded(row.gt_dx) + ", " + rounded(row.dense_dx95) + ", " + rounded(row.dense_dx97);
}

void write_report_text(std::ostream& os, const EvalReport& report) {
  os << "Total test stereo images\t" << report.images << "\n";
  for (const auto& c : report.classes) {
    os << "Precision (" << c.name << ")\t" << fixed(100.0 * c.precision(), 1) << "%\n";
    os << "Recall (" << c.name << ")\t" << fixed(100.0 * c.recall(), 1) << "%\n";
  }
  os << "Mean abs obj disparity error\t" << fixed(report.histogram.mean, 2) << " pixels\n";
  os << "Max abs obj disparity error\t" << fixed(report.histogram.max, 2) << " pixels\n";
  os << "Abs obj disparity error histogram (pixel)\tNumber of objects\n";
  for (std::size_t i = 0; i < report.histogram.counts.size(); ++i) {
    os << "[" << i << ", " << i + 1 << ")\t" << report.histogram.counts[i] << "\n";
  }
  os << "\nimage\tObj detected, Confidence, Predicted dx, Ground truth dx, 95% dx, 97% dx\n";
  for (const auto& r : report.rows) os << r.image_id << "\t" << summary_row(r) << "\n";
  for (const auto& issue : report.issues) os << "issue\t" << issue << "\n";
}

void write_report_kv(std::ostream& os, const EvalReport& report) {
  os << "images=" << report.images << "\n";
  for (const auto& c : report.classes) {
    os << "class." << c.name << ".tp=" << c.true_positives << "\n";
    os << "class." << c.name << ".fp=" << c.false_positives << "\n";
    os << "class." << c.name << ".fn=" << c.false_negatives << "\n";
    os << "class." << c.name << ".precision=" << c.precision() << "\n";
    os << "class." << c.name << ".recall=" << c.recall() << "\n";
  }
  os << "matched=" << report.histogram.total << "\n";
  os << "mean_abs_dx_error=" << report.histogram.mean << "\n";
  os << "max_abs_dx_error=" << report.histogram.max << "\n";
  for (std::size_t i = 0; i < report.histogram.counts.size(); ++i) {
    os << "histogram." << i << "=" << report.histogram.counts[i] << "\n";
  }
  os << "dense_no_data=" << report.dense_no_data << "\n";
  os << "issues=" << report.issues.size() << "\n";
}

}  // namespace odssd
