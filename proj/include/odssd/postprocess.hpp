#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "odssd/codec.hpp"
#include "odssd/geometry.hpp"
#include "odssd/model.hpp"
#include "odssd/tensor.hpp"

namespace odssd {

struct Detection {
  int class_id = 0;
  double score = 0.0;
  BBox left_box;  // view pixels
  double dx = 0.0;
  double dy = 0.0;

  /// The left box moved by the disparity into the right-view frame.
  BBox right_box() const { return left_box.translated(-dx, -dy); }
};

/// Greedy hard NMS. Candidates are visited by descending score (ties: lower
/// index first); a candidate is kept unless its IoU with an already kept box
/// exceeds `iou_threshold`. At most `top_k` indices are returned, in keep order.
std::vector<std::size_t> nms(std::span<const BBox> boxes, std::span<const double> scores, double iou_threshold,
                             std::size_t top_k);

/// Softmax over one row of raw class scores.
std::vector<double> softmax(std::span<const float> row);

/// Turns forward() outputs into detections, one list per image.
/// Per foreground class: softmax score >= score_threshold, decode, class-wise
/// NMS; then all classes merged by score and capped at top_k.
std::vector<std::vector<Detection>> detect(const Tensor<float>& confidences, const Tensor<float>& locations,
                                           std::span<const Prior> priors, const ModelConfig& config);

/// Tab-separated detection records:
///   image_id  class  score  xmin  ymin  xmax  ymax  dx  dy
/// Values are written with round-trip precision.
struct DetectionRecord {
  std::string image_id;
  std::string class_name;
  Detection detection;
};

void write_detection_records(std::ostream& os, std::span<const DetectionRecord> records);
/// Throws FormatError naming the line on malformed input.
std::vector<DetectionRecord> read_detection_records(std::istream& is);

}  // namespace odssd
