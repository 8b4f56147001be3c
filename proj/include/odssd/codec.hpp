#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "odssd/geometry.hpp"
#include "odssd/model.hpp"
#include "odssd/tensor.hpp"

namespace odssd {

/// Encoded regression target / prediction for one prior.
struct LocationVector {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0, dx = 0.0, dy = 0.0;
};

struct CodecParams {
  double view_width = 640.0;
  double view_height = 320.0;
  double center_variance = 0.1;
  double size_variance = 0.2;

  static CodecParams from(const ModelConfig& config) {
    return {static_cast<double>(config.view_width), static_cast<double>(config.view_height), config.center_variance,
            config.size_variance};
  }
};

/// Pixel box -> box normalized by the view size.
BBox normalize_box(const BBox& box, double view_width, double view_height);
BBox prior_to_box(const Prior& prior);

/// Per-prior assignment: index of the matched ground truth or -1.
struct PriorMatch {
  std::vector<int> gt_index;
  /// Ground truths left out because their normalized box has no area.
  std::vector<std::size_t> excluded;
};

/// Threshold + best-prior matching. Every prior takes its best-IoU ground
/// truth if that IoU reaches `iou_threshold`; then each ground truth, in
/// order, claims its own best prior unconditionally (later ground truths win
/// a contested prior). Argmax ties go to the lower index.
/// `gt_boxes` are normalized left-view boxes.
PriorMatch match_priors(std::span<const BBox> gt_boxes, std::span<const Prior> priors, double iou_threshold);

/// Encodes a pixel-space object (left box + disparity) against a prior.
LocationVector encode(const BBox& left_box, const ObjectDisparity& disparity, const Prior& prior,
                      const CodecParams& params);

struct DecodedBox {
  BBox left_box;  // view pixels
  double dx = 0.0;
  double dy = 0.0;
  /// The size exponent was clamped to avoid overflow.
  bool clamped = false;
};

DecodedBox decode(const LocationVector& loc, const Prior& prior, const CodecParams& params);

/// Decodes one image's (P, 6) location rows.
template <typename T>
std::vector<DecodedBox> decode_locations(std::span<const T> rows, std::span<const Prior> priors,
                                         const CodecParams& params);

struct EncodedTargets {
  std::vector<int> labels;              // per prior, 0 = background
  std::vector<LocationVector> locations;  // zero for background priors
  std::vector<std::string> warnings;

  std::int64_t positives() const;
};

/// Matches and encodes one image's ground truth. Object labels must be in
/// `config.class_names`; unknown labels throw InvalidInput.
EncodedTargets encode_targets(std::span<const StereoObject> objects, std::span<const Prior> priors,
                              const ModelConfig& config);

/// Hard-negative selection for one image: positives are always kept; of the
/// background priors, the ones with the largest background loss are kept up
/// to ratio * positives. Ties go to the lower index.
std::vector<std::uint8_t> hard_negative_mask(std::span<const double> background_loss, std::span<const int> labels,
                                             double neg_pos_ratio);

double smooth_l1(double x);

template <typename T>
struct LossResult {
  Tensor<T> total;  // scalar
  double classification = 0.0;
  double regression = 0.0;
  std::int64_t positives = 0;
  std::string warning;
};

/// (1/N_pos) * [cross entropy over positives and mined negatives +
/// SmoothL1 over all six location channels of positives].
/// confidences: (N,P,K), locations: (N,P,6), one EncodedTargets per image.
template <typename T>
LossResult<T> multibox_disparity_loss(Graph<T>* graph, const Tensor<T>& confidences, const Tensor<T>& locations,
                                      std::span<const EncodedTargets> targets, double neg_pos_ratio,
                                      double disparity_weight = 1.0);

}  // namespace odssd
