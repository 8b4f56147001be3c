#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "odssd/ops.hpp"
#include "odssd/tensor.hpp"

namespace odssd {

/// Class vocabulary used by the stereo annotations; index 0 is background.
std::vector<std::string> stereo_class_names();
/// Pascal VOC vocabulary (20 classes + background).
std::vector<std::string> voc_class_names();

struct ModelConfig {
  int view_width = 640;
  int view_height = 320;
  /// Index 0 is background.
  std::vector<std::string> class_names = stereo_class_names();
  /// Scales every base/extras channel count. 1.0 reproduces the full network.
  double width_multiplier = 1.0;

  int priors_per_cell = 6;
  double min_scale = 0.1;
  double max_scale = 0.9;
  std::vector<double> aspect_ratios{2.0, 3.0};
  double center_variance = 0.1;
  double size_variance = 0.2;

  double score_threshold = 0.5;
  double nms_iou_threshold = 0.45;
  int top_k = 100;

  double match_iou_threshold = 0.5;
  double neg_pos_ratio = 3.0;
  /// Weight of the dx/dy channels inside the SmoothL1 term.
  double disparity_weight = 1.0;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int input_width() const { return view_width; }
  int input_height() const { return 2 * view_height; }

  /// Throws InvalidInput on inconsistent settings.
  void validate() const;

  /// 640x320 views, stacked 640x640.
  static ModelConfig stereo640();
  /// 320x160 views, stacked 320x320.
  static ModelConfig stereo320();
  /// 640 geometry with the 21-class VOC head width of the reference
  /// detector code base; used for model-size reporting.
  static ModelConfig voc_reference640();
  /// Reduced-width 160x80 configuration for desk-scale training.
  static ModelConfig toy();

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Normalized center-form anchor in the left-view frame.
struct Prior {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

struct GridSize {
  std::int64_t height = 0;
  std::int64_t width = 0;
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

/// Detection head grids for a configuration, computed from the layer chain.
std::vector<GridSize> head_grids(const ModelConfig& config);
std::int64_t prior_count(const ModelConfig& config);

/// Priors ordered head-major, row-major within a head, and within a cell:
/// small square, large square, then (r, 1/r) pairs for each aspect ratio.
std::vector<Prior> generate_priors(const ModelConfig& config);

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct ForwardResult {
  Tensor<T> confidences;  // (N, P, K) raw scores
  Tensor<T> locations;    // (N, P, 6): cx, cy, w, h, dx, dy offsets
  Shape tap_shape;
  Shape folded_tap_shape;
  std::vector<GridSize> grids;
};

/// The stereo SqueezeNet SSD-lite network.
///
/// Base: conv3x3/s2 + relu, ceil pool, 2 Fire, ceil pool, 2 Fire, ceil pool,
/// 4 Fire with the last two reduced to 128/128 expands. The 256-channel map
/// after base entry 11 is folded (left/right halves to channels) for head 0;
/// the map after entry 12 is folded and feeds three extras blocks, each
/// followed by a head. Heads are separable convs emitting 6 values per prior
/// for regression and K values per prior for classification.
template <typename T>
class Model {
 public:
  struct Conv {
    std::size_t weight = 0;  // parameter indices
    std::size_t bias = 0;
    ops::Conv2dOptions options;
  };
  struct Fire {
    Conv squeeze, expand1x1, expand3x3;
  };
  struct Separable {
    Conv depthwise, pointwise;
  };
  struct BaseEntry {
    enum class Kind { Conv, Relu, Pool, Fire } kind;
    Conv conv;
    Fire fire;
  };
  struct Extra {
    Conv reduce;
    Separable separable;
  };

  /// Builds the network and initializes weights with centered uniform
  /// fan-in scaling. Throws ShapeError naming the layer if the channel
  /// arithmetic does not close.
  explicit Model(ModelConfig config, std::uint64_t seed = 1);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParameter<T>>& parameters() { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  /// Parameter handles only, for optimizers and backward reports.
  std::vector<Tensor<T>> parameter_tensors() const;

  std::int64_t parameter_count() const;

  /// stacked: (N, 3, 2*view_height, view_width).
  ForwardResult<T> forward(Graph<T>* graph, const Tensor<T>& stacked) const;

  void set_requires_grad(bool on);
  void fill_parameters(T value);

 private:
  std::size_t add_param(const std::string& name, Shape shape);
  Conv make_conv(const std::string& name, int in, int out, int kernel, int stride, int padding, int groups);
  Fire make_fire(const std::string& name, int in, int squeeze, int e1, int e3);
  Separable make_separable(const std::string& name, int in, int out, int stride, int padding);
  void initialize(std::uint64_t seed);

  Tensor<T> run_conv(Graph<T>* g, const Conv& c, const Tensor<T>& x) const;
  Tensor<T> run_fire(Graph<T>* g, const Fire& f, const Tensor<T>& x) const;
  Tensor<T> run_separable(Graph<T>* g, const Separable& s, const Tensor<T>& x) const;

  ModelConfig config_;
  std::vector<NamedParameter<T>> params_;
  std::vector<double> init_gain_;
  std::vector<BaseEntry> base_;
  std::size_t tap_index_ = 0;
  std::vector<Extra> extras_;
  std::vector<Separable> regression_;
  std::vector<Separable> classification_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace odssd
