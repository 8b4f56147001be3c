#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odssd/annotation.hpp"
#include "odssd/geometry.hpp"
#include "odssd/image.hpp"
#include "odssd/postprocess.hpp"

namespace odssd {

/// Dense disparity ground truth in pixels. Invalid pixels hold 0 and have
/// valid == 0.
struct DisparityMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;
};

/// KITTI convention: 16-bit gray PNG, disparity = raw / 256, raw 0 = no data.
DisparityMap read_disparity_gt(std::span<const std::uint8_t> png_bytes);
DisparityMap disparity_from_image16(const Image16& raw);

/// Nearest-rank percentile (sorted ascending, index ceil(q*n/100) - 1) over
/// valid pixels whose centers lie inside the box. nullopt when the box holds
/// no valid pixel. Throws InvalidInput for q outside (0, 100] or a box that
/// misses the map.
std::optional<double> bbox_percentile_disparity(const DisparityMap& map, const BBox& box, double q);

struct MatchResult {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  /// (detection index, gt index) in matching order.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// Greedy matching: detections by descending score (ties: lower index),
/// each takes the still-free gt with the highest IoU (ties: lower index)
/// if that IoU reaches the threshold.
MatchResult match_detections(std::span<const BBox> detections, std::span<const double> scores,
                             std::span<const BBox> ground_truth, double iou_threshold);

struct ErrorHistogram {
  /// counts[i] covers [i, i+1) px.
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  double mean = 0.0;
  double max = 0.0;
};

/// Throws InvalidInput for negative or non-finite errors.
ErrorHistogram disparity_error_histogram(std::span<const double> errors);

struct EvalOptions {
  double iou_threshold = 0.5;
  double score_threshold = 0.0;
  /// Classes dropped from precision/recall when dense ground truth is used.
  std::vector<std::string> dense_masked_classes{"person", "bike"};
};

struct EvalSample {
  std::string id;
  std::vector<StereoObject> objects;
  std::optional<DisparityMap> dense;
};

/// One matched detection, the Table-1 style row.
struct DetectionRow {
  std::string image_id;
  std::string class_name;
  double confidence = 0.0;
  double predicted_dx = 0.0;
  double gt_dx = 0.0;
  std::optional<double> dense_dx95;
  std::optional<double> dense_dx97;
};

struct ClassStats {
  std::string name;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;

  double precision() const;
  double recall() const;
};

struct EvalReport {
  std::size_t images = 0;
  std::vector<ClassStats> classes;  // sorted by name
  ErrorHistogram histogram;          // |predicted dx - annotated dx| of matches
  std::vector<DetectionRow> rows;    // by image id, class name, then gt index
  /// Matched objects whose box held no valid dense pixel.
  std::size_t dense_no_data = 0;
  std::vector<std::string> issues;
};

/// Detections whose image id is not among the samples are reported as issues.
EvalReport evaluate(std::span<const EvalSample> samples, std::span<const DetectionRecord> detections,
                    const EvalOptions& options = {});

/// Loads annotations (and `<gt_dir>/<id>.png` dense maps when gt_dir is set)
/// for every index entry. Unreadable files are listed in `issues` and the
/// sample is skipped.
EvalReport evaluate_dataset(const DatasetIndex& index, std::span<const DetectionRecord> detections,
                            const std::optional<std::filesystem::path>& gt_dir, const EvalOptions& options = {});

/// "car, 0.99, 33, 33, 28, 31": class, confidence, predicted dx, gt dx and
/// the two dense columns ("-" when missing), disparities rounded.
std::string summary_row(const DetectionRow& row);

void write_report_text(std::ostream& os, const EvalReport& report);
/// One key=value per line for machines.
void write_report_kv(std::ostream& os, const EvalReport& report);

}  // namespace odssd
