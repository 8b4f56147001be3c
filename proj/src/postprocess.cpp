#include "odssd/postprocess.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "odssd/error.hpp"

namespace odssd {

std::vector<std::size_t> nms(std::span<const BBox> boxes, std::span<const double> scores, double iou_threshold,
                             std::size_t top_k) {
  if (boxes.size() != scores.size()) throw InvalidInput("nms: boxes and scores differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (auto i : order) {
    if (kept.size() >= top_k) break;
    bool suppressed = false;
    for (auto j : kept) {
      if (iou(boxes[i], boxes[j]) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

std::vector<double> softmax(std::span<const float> row) {
  std::vector<double> out(row.size());
  if (row.empty()) return out;
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : row) mx = std::max(mx, double(v));
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) z += (out[i] = std::exp(double(row[i]) - mx));
  for (auto& v : out) v /= z;
  return out;
}

std::vector<std::vector<Detection>> detect(const Tensor<float>& confidences, const Tensor<float>& locations,
                                           std::span<const Prior> priors, const ModelConfig& config) {
  const auto p = static_cast<std::int64_t>(priors.size());
  const auto k = static_cast<std::int64_t>(config.num_classes());
  if (confidences.rank() != 3 || confidences.dim(1) != p || confidences.dim(2) != k || locations.rank() != 3 ||
      locations.dim(0) != confidences.dim(0) || locations.dim(1) != p || locations.dim(2) != 6) {
    throw ShapeError("detect: confidences " + shape_str(confidences.shape()) + ", locations " +
                     shape_str(locations.shape()) + " for " + std::to_string(p) + " priors and " + std::to_string(k) +
                     " classes");
  }
  const auto params = CodecParams::from(config);
  const auto n = confidences.dim(0);
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<std::vector<double>> probs(static_cast<std::size_t>(p));
    for (std::int64_t j = 0; j < p; ++j) {
      probs[static_cast<std::size_t>(j)] =
          softmax(std::span<const float>(confidences.data() + (i * p + j) * k, static_cast<std::size_t>(k)));
    }
    const auto decoded = decode_locations<float>(
        std::span<const float>(locations.data() + i * p * 6, static_cast<std::size_t>(p * 6)), priors, params);
    std::vector<Detection> all;
    for (int c = 1; c < k; ++c) {
      std::vector<BBox> boxes;
      std::vector<double> scores;
      std::vector<std::size_t> source;
      for (std::int64_t j = 0; j < p; ++j) {
        const double s = probs[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        if (s < config.score_threshold) continue;
        boxes.push_back(decoded[static_cast<std::size_t>(j)].left_box);
        scores.push_back(s);
        source.push_back(static_cast<std::size_t>(j));
      }
      for (auto idx : nms(boxes, scores, config.nms_iou_threshold, static_cast<std::size_t>(config.top_k))) {
        const auto& d = decoded[source[idx]];
        all.push_back({c, scores[idx], d.left_box, d.dx, d.dy});
      }
    }
    std::stable_sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (all.size() > static_cast<std::size_t>(config.top_k)) all.resize(static_cast<std::size_t>(config.top_k));
    out[static_cast<std::size_t>(i)] = std::move(all);
  }
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& field, std::size_t line_no) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw FormatError("detection records line " + std::to_string(line_no) + ": bad number '" + field + "'");
  }
  return v;
}

}  // namespace

void write_detection_records(std::ostream& os, std::span<const DetectionRecord> records) {
  for (const auto& r : records) {
    const auto& d = r.detection;
    os << r.image_id << '\t' << r.class_name << '\t' << fmt_double(d.score) << '\t' << fmt_double(d.left_box.xmin)
       << '\t' << fmt_double(d.left_box.ymin) << '\t' << fmt_double(d.left_box.xmax) << '\t'
       << fmt_double(d.left_box.ymax) << '\t' << fmt_double(d.dx) << '\t' << fmt_double(d.dy) << '\n';
  }
}

std::vector<DetectionRecord> read_detection_records(std::istream& is) {
  std::vector<DetectionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 9) {
      throw FormatError("detection records line " + std::to_string(line_no) + ": expected 9 fields, got " +
                        std::to_string(fields.size()));
    }
    DetectionRecord r;
    r.image_id = fields[0];
    r.class_name = fields[1];
    r.detection.score = parse_double(fields[2], line_no);
    r.detection.left_box = {parse_double(fields[3], line_no), parse_double(fields[4], line_no),
                            parse_double(fields[5], line_no), parse_double(fields[6], line_no)};
    r.detection.dx = parse_double(fields[7], line_no);
    r.detection.dy = parse_double(fields[8], line_no);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace odssd
