#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odssd/codec.hpp"
#include "odssd/image.hpp"
#include "odssd/model.hpp"
#include "odssd/postprocess.hpp"
#include "odssd/synth.hpp"

namespace odssd {

/// Stacked 8-bit images (all the same size) to an (N, 3, H, W) tensor
/// normalized as (v - 127) / 128. Gray images are replicated to 3 channels.
Tensor<float> images_to_tensor(std::span<const Image> stacked);

struct TrainOptions {
  ModelConfig model = ModelConfig::toy();
  SceneSpec scenes;
  std::size_t train_scenes = 200;
  int epochs = 50;
  int batch_size = 8;
  double learning_rate = 0.005;
  double momentum = 0.9;
  double weight_decay = 5e-3;
  /// Learning rate is multiplied by lr_gamma every lr_step_epochs (0 = never).
  int lr_step_epochs = 40;
  double lr_gamma = 0.1;
  /// Global gradient norm cap (0 = off).
  double grad_clip = 10.0;
  /// Epochs with linearly ramped learning rate at the start.
  int warmup_epochs = 2;
  /// Each epoch, every scene is replaced with probability 1/2 by its mirror
  /// pair (both views flipped horizontally and swapped), which keeps dx and
  /// negates dy.
  bool mirror_augment = true;
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 1;
  /// fp32 weights written after every completed epoch when set.
  std::optional<std::filesystem::path> checkpoint;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double classification = 0.0;
  double regression = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Model<float> model;
  /// Mean loss of the initial weights over the training set.
  double initial_loss = 0.0;
  std::vector<EpochStats> curve;
  bool diverged = false;
  std::string message;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// SGD with momentum over the multibox + disparity loss on `train_scenes`
/// synthetic scenes (indices 0..train_scenes-1 of `options.scenes`).
/// A non-finite loss stops training and restores the last completed epoch.
TrainResult train_toy(const TrainOptions& options, const EpochCallback& on_epoch = {});

/// Mirror pair of a stereo scene: left' = flip(right), right' = flip(left).
/// Boxes follow; dx is unchanged and dy changes sign.
std::pair<Image, Image> mirror_pair(const Image& left, const Image& right);
std::vector<StereoObject> mirror_objects(std::span<const StereoObject> objects, int view_width);

/// Runs forward + detect on a single stacked image.
std::vector<Detection> detect_image(const Model<float>& model, const Image& stacked);
/// Same, with the score threshold replaced.
std::vector<Detection> detect_image(const Model<float>& model, const Image& stacked, double score_threshold);

struct HeldOutResult {
  std::size_t scenes = 0;
  std::size_t objects = 0;
  std::size_t detected = 0;  // objects matched by a same-class detection at IoU >= 0.5
  double mean_abs_dx_error = 0.0;
  double max_abs_dx_error = 0.0;
  double detection_rate() const { return objects == 0 ? 0.0 : static_cast<double>(detected) / objects; }
};

/// Scores scenes first_index .. first_index+count-1 of `spec`.
HeldOutResult evaluate_held_out(const Model<float>& model, const SceneSpec& spec, std::uint64_t first_index,
                                std::size_t count);

struct ShiftResult {
  int shift = 0;
  double true_dx_before = 0.0;
  double true_dx_after = 0.0;
  std::optional<Detection> before;
  std::optional<Detection> after;

  bool detected() const { return before.has_value() && after.has_value(); }
  /// Predicted dx change; only meaningful when detected().
  double dx_change() const { return detected() ? after->dx - before->dx : 0.0; }
  /// Distance between left box centers before and after.
  double left_center_drift() const;
};

/// Adds `shift` px of disparity to object `object_index` by editing the right
/// view only, and reports the matching detection before and after.
/// `score_threshold` overrides the model's threshold for both probes.
ShiftResult shift_object_test(const Model<float>& model, const SceneLayout& layout, std::size_t object_index,
                              int shift, std::optional<double> score_threshold = std::nullopt);

struct BenchTiming {
  int input_width = 0;
  int input_height = 0;
  int iterations = 0;
  double inference_ms = 0.0;      // forward pass per frame
  double inference_nms_ms = 0.0;  // forward + detect per frame
  double mean_detections = 0.0;
};

/// Times forward and forward + detect on one synthetic scene sized for the
/// model. Both figures come from the same iterations, so the second is never
/// below the first. `config` supplies the detection thresholds.
BenchTiming time_inference(const Model<float>& model, const ModelConfig& config, int iterations, int warmup,
                           std::uint64_t scene_seed);

}  // namespace odssd
