#include "odssd/model.hpp"

#include <algorithm>
#include <cmath>
#include "json.hpp"

#include "odssd/error.hpp"
#include "odssd/rng.hpp"

namespace odssd {

std::vector<std::string> stereo_class_names() { return {"background", "car", "person", "bike", "trafficsign"}; }

std::vector<std::string> voc_class_names() {
  return {"background", "aeroplane", "bicycle", "bird",  "boat",        "bottle", "bus",
          "car",        "cat",       "chair",   "cow",   "diningtable", "dog",    "horse",
          "motorbike",  "person",    "pottedplant", "sheep", "sofa",   "train",  "tvmonitor"};
}

void ModelConfig::validate() const {
  if (view_width < 1 || view_height < 1) throw InvalidInput("view size must be positive");
  if (class_names.size() < 2) throw InvalidInput("need background plus at least one class");
  if (!(width_multiplier > 0.0)) throw InvalidInput("width_multiplier must be positive");
  if (priors_per_cell != 2 + 2 * static_cast<int>(aspect_ratios.size())) {
    throw InvalidInput("priors_per_cell must equal 2 + 2 * number of aspect ratios");
  }
  if (!(min_scale > 0.0 && max_scale >= min_scale)) throw InvalidInput("bad prior scales");
  if (!(center_variance > 0.0 && size_variance > 0.0)) throw InvalidInput("variances must be positive");
  if (top_k < 1) throw InvalidInput("top_k must be positive");
  if (!(neg_pos_ratio >= 0.0)) throw InvalidInput("neg_pos_ratio must be non-negative");
}

ModelConfig ModelConfig::stereo640() { return ModelConfig{}; }

ModelConfig ModelConfig::stereo320() {
  ModelConfig c;
  c.view_width = 320;
  c.view_height = 160;
  return c;
}

ModelConfig ModelConfig::voc_reference640() {
  ModelConfig c;
  c.class_names = voc_class_names();
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.view_width = 160;
  c.view_height = 80;
  c.width_multiplier = 0.5;
  // Small views leave few priors above 0.5 IoU; a looser match and a heavier
  // disparity term give the regression head enough signal.
  c.match_iou_threshold = 0.4;
  c.disparity_weight = 3.0;
  return c;
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["view_width"] = view_width;
  j["view_height"] = view_height;
  j["class_names"] = class_names;
  j["width_multiplier"] = width_multiplier;
  j["priors_per_cell"] = priors_per_cell;
  j["min_scale"] = min_scale;
  j["max_scale"] = max_scale;
  j["aspect_ratios"] = aspect_ratios;
  j["center_variance"] = center_variance;
  j["size_variance"] = size_variance;
  j["score_threshold"] = score_threshold;
  j["nms_iou_threshold"] = nms_iou_threshold;
  j["top_k"] = top_k;
  j["match_iou_threshold"] = match_iou_threshold;
  j["neg_pos_ratio"] = neg_pos_ratio;
  j["disparity_weight"] = disparity_weight;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  try {
    get("view_width", c.view_width);
    get("view_height", c.view_height);
    get("class_names", c.class_names);
    get("width_multiplier", c.width_multiplier);
    get("priors_per_cell", c.priors_per_cell);
    get("min_scale", c.min_scale);
    get("max_scale", c.max_scale);
    get("aspect_ratios", c.aspect_ratios);
    get("center_variance", c.center_variance);
    get("size_variance", c.size_variance);
    get("score_threshold", c.score_threshold);
    get("nms_iou_threshold", c.nms_iou_threshold);
    get("top_k", c.top_k);
    get("match_iou_threshold", c.match_iou_threshold);
    get("neg_pos_ratio", c.neg_pos_ratio);
    get("disparity_weight", c.disparity_weight);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<GridSize> head_grids(const ModelConfig& config) {
  std::int64_t h = config.input_height();
  std::int64_t w = config.input_width();
  h = ops::conv_output_size(h, 3, 2, 1);
  w = ops::conv_output_size(w, 3, 2, 1);
  for (int i = 0; i < 3; ++i) {
    h = ops::pool_ceil_output_size(h, 3, 2);
    w = ops::pool_ceil_output_size(w, 3, 2);
  }
  if (h < 2 || h % 2 != 0 || w < 1) {
    throw ShapeError("stacked input " + std::to_string(config.input_width()) + "x" +
                     std::to_string(config.input_height()) + " gives an unfoldable tap of height " +
                     std::to_string(h));
  }
  std::vector<GridSize> grids{{h / 2, w}};
  h /= 2;
  for (int i = 0; i < 3; ++i) {
    h = ops::conv_output_size(h, 3, 2, 1);
    w = ops::conv_output_size(w, 3, 2, 1);
    grids.push_back({h, w});
  }
  return grids;
}

std::int64_t prior_count(const ModelConfig& config) {
  std::int64_t cells = 0;
  for (const auto& g : head_grids(config)) cells += g.height * g.width;
  return cells * config.priors_per_cell;
}

std::vector<Prior> generate_priors(const ModelConfig& config) {
  config.validate();
  const auto grids = head_grids(config);
  const auto heads = grids.size();
  auto scale = [&](std::size_t k) {
    return config.min_scale + (config.max_scale - config.min_scale) * static_cast<double>(k) /
                                  static_cast<double>(heads - 1);
  };
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  std::vector<Prior> priors;
  priors.reserve(static_cast<std::size_t>(prior_count(config)));
  for (std::size_t k = 0; k < heads; ++k) {
    const double s = scale(k);
    const double s_large = std::sqrt(s * scale(k + 1));
    for (std::int64_t r = 0; r < grids[k].height; ++r) {
      for (std::int64_t q = 0; q < grids[k].width; ++q) {
        const double cx = (static_cast<double>(q) + 0.5) / static_cast<double>(grids[k].width);
        const double cy = (static_cast<double>(r) + 0.5) / static_cast<double>(grids[k].height);
        auto push = [&](double w, double h) { priors.push_back({clamp01(cx), clamp01(cy), clamp01(w), clamp01(h)}); };
        push(s, s);
        push(s_large, s_large);
        for (double ratio : config.aspect_ratios) {
          const double root = std::sqrt(ratio);
          push(s * root, s / root);
          push(s / root, s * root);
        }
      }
    }
  }
  return priors;
}

namespace {

int scaled(int channels, double multiplier) {
  return std::max(1, static_cast<int>(std::lround(channels * multiplier)));
}

constexpr double kReluGain = 1.4142135623730951;
// Heads start near zero output so the first updates are small.
constexpr double kHeadGain = 0.1;

}  // namespace

template <typename T>
std::size_t Model<T>::add_param(const std::string& name, Shape shape) {
  params_.push_back({name, Tensor<T>(std::move(shape))});
  init_gain_.push_back(kReluGain);
  return params_.size() - 1;
}

template <typename T>
typename Model<T>::Conv Model<T>::make_conv(const std::string& name, int in, int out, int kernel, int stride,
                                            int padding, int groups) {
  Conv c;
  c.weight = add_param(name + ".weight", Shape{out, in / groups, kernel, kernel});
  c.bias = add_param(name + ".bias", Shape{out});
  c.options = {stride, padding, groups};
  return c;
}

template <typename T>
typename Model<T>::Fire Model<T>::make_fire(const std::string& name, int in, int squeeze, int e1, int e3) {
  return {make_conv(name + ".squeeze", in, squeeze, 1, 1, 0, 1), make_conv(name + ".expand1x1", squeeze, e1, 1, 1, 0, 1),
          make_conv(name + ".expand3x3", squeeze, e3, 3, 1, 1, 1)};
}

template <typename T>
typename Model<T>::Separable Model<T>::make_separable(const std::string& name, int in, int out, int stride,
                                                      int padding) {
  return {make_conv(name + ".depthwise", in, in, 3, stride, padding, in), make_conv(name + ".pointwise", in, out, 1, 1, 0, 1)};
}

template <typename T>
Model<T>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const double m = config_.width_multiplier;
  auto sc = [m](int c) { return scaled(c, m); };
  int channels = 3;
  auto expect = [&channels](const std::string& layer, int declared) {
    if (declared != channels) {
      throw ShapeError(layer + ": declares " + std::to_string(declared) + " input channels but its predecessor produces " +
                       std::to_string(channels));
    }
  };

  struct FireSpec {
    int in, squeeze, e1, e3;
  };
  auto add_fire = [&](const FireSpec& f) {
    const std::string name = "base_net." + std::to_string(base_.size());
    expect(name, sc(f.in));
    BaseEntry e{BaseEntry::Kind::Fire, {}, make_fire(name, sc(f.in), sc(f.squeeze), sc(f.e1), sc(f.e3))};
    base_.push_back(e);
    channels = sc(f.e1) + sc(f.e3);
  };
  auto add_pool = [&] { base_.push_back({BaseEntry::Kind::Pool, {}, {}}); };

  // Base network: the SqueezeNet 1.1 feature stack with padding 1 on the
  // stem, ceil-mode pooling, and 128/128 expands on the last two Fires.
  expect("base_net.0", 3);
  base_.push_back({BaseEntry::Kind::Conv, make_conv("base_net.0", 3, sc(64), 3, 2, 1, 1), {}});
  channels = sc(64);
  base_.push_back({BaseEntry::Kind::Relu, {}, {}});
  add_pool();
  add_fire({64, 16, 64, 64});
  add_fire({128, 16, 64, 64});
  add_pool();
  add_fire({128, 32, 128, 128});
  add_fire({256, 32, 128, 128});
  add_pool();
  add_fire({256, 48, 192, 192});
  add_fire({384, 48, 192, 192});
  add_fire({384, 64, 128, 128});
  tap_index_ = base_.size();  // head 0 reads the output of entry 11
  const int tap_channels = channels;
  add_fire({256, 64, 128, 128});

  // Folding doubles the channel count.
  channels *= 2;
  struct ExtraSpec {
    int in, mid, out;
  };
  const ExtraSpec extra_specs[] = {{512, 256, 512}, {512, 256, 512}, {512, 128, 256}};
  std::vector<int> head_inputs{2 * tap_channels};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& e = extra_specs[i];
    const std::string name = "extras." + std::to_string(i);
    expect(name, sc(e.in));
    Extra x{make_conv(name + ".0", sc(e.in), sc(e.mid), 1, 1, 0, 1), make_separable(name + ".2", sc(e.mid), sc(e.out), 2, 1)};
    extras_.push_back(x);
    channels = sc(e.out);
    head_inputs.push_back(channels);
  }

  const int anchors = config_.priors_per_cell;
  for (std::size_t i = 0; i < head_inputs.size(); ++i) {
    regression_.push_back(
        make_separable("regression_headers." + std::to_string(i), head_inputs[i], anchors * 6, 1, 1));
    init_gain_[regression_.back().pointwise.weight] = kHeadGain;
  }
  for (std::size_t i = 0; i < head_inputs.size(); ++i) {
    classification_.push_back(make_separable("classification_headers." + std::to_string(i), head_inputs[i],
                                             anchors * config_.num_classes(), 1, 1));
    init_gain_[classification_.back().pointwise.weight] = kHeadGain;
  }
  initialize(seed);
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    if (t.rank() == 1) {
      std::fill(t.values().begin(), t.values().end(), T(0));
      continue;
    }
    const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
    const double bound = init_gain_[i] * std::sqrt(3.0 / fan_in);
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameter_tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::int64_t Model<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void Model<T>::set_requires_grad(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

template <typename T>
void Model<T>::fill_parameters(T value) {
  for (auto& p : params_) std::fill(p.tensor.values().begin(), p.tensor.values().end(), value);
}

template <typename T>
Tensor<T> Model<T>::run_conv(Graph<T>* g, const Conv& c, const Tensor<T>& x) const {
  return ops::conv2d(g, x, params_[c.weight].tensor, params_[c.bias].tensor, c.options);
}

template <typename T>
Tensor<T> Model<T>::run_fire(Graph<T>* g, const Fire& f, const Tensor<T>& x) const {
  auto s = ops::relu(g, run_conv(g, f.squeeze, x));
  auto e1 = ops::relu(g, run_conv(g, f.expand1x1, s));
  auto e3 = ops::relu(g, run_conv(g, f.expand3x3, s));
  return ops::channel_concat(g, e1, e3);
}

template <typename T>
Tensor<T> Model<T>::run_separable(Graph<T>* g, const Separable& s, const Tensor<T>& x) const {
  return ops::separable_conv2d(g, x, params_[s.depthwise.weight].tensor, params_[s.depthwise.bias].tensor,
                               params_[s.pointwise.weight].tensor, params_[s.pointwise.bias].tensor,
                               s.depthwise.options.stride, s.depthwise.options.padding);
}

template <typename T>
ForwardResult<T> Model<T>::forward(Graph<T>* g, const Tensor<T>& stacked) const {
  const Shape& s = stacked.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != config_.input_height() || s[3] != config_.input_width()) {
    throw ShapeError("model expects stacked input (N,3," + std::to_string(config_.input_height()) + "," +
                     std::to_string(config_.input_width()) + "), got " + shape_str(s));
  }
  ForwardResult<T> result;
  std::vector<Tensor<T>> sources;
  Tensor<T> x = stacked;
  for (std::size_t i = 0; i < base_.size(); ++i) {
    if (i == tap_index_) {
      result.tap_shape = x.shape();
      auto folded = ops::fold_stacked(g, x);
      result.folded_tap_shape = folded.shape();
      sources.push_back(folded);
    }
    const auto& e = base_[i];
    switch (e.kind) {
      case BaseEntry::Kind::Conv:
        x = run_conv(g, e.conv, x);
        break;
      case BaseEntry::Kind::Relu:
        x = ops::relu(g, x);
        break;
      case BaseEntry::Kind::Pool:
        x = ops::max_pool2d_ceil(g, x, 3, 2);
        break;
      case BaseEntry::Kind::Fire:
        x = run_fire(g, e.fire, x);
        break;
    }
  }
  x = ops::fold_stacked(g, x);
  for (const auto& extra : extras_) {
    x = ops::relu(g, run_conv(g, extra.reduce, x));
    x = run_separable(g, extra.separable, x);
    sources.push_back(x);
  }
  std::vector<Tensor<T>> loc_maps, conf_maps;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    loc_maps.push_back(run_separable(g, regression_[i], sources[i]));
    conf_maps.push_back(run_separable(g, classification_[i], sources[i]));
    result.grids.push_back({sources[i].dim(2), sources[i].dim(3)});
  }
  result.locations = ops::flatten_heads<T>(g, loc_maps, 6);
  result.confidences = ops::flatten_heads<T>(g, conf_maps, config_.num_classes());
  return result;
}

template class Model<float>;
template class Model<double>;

}  // namespace odssd
