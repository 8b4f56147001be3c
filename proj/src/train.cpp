#include "odssd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "odssd/annotation.hpp"
#include "odssd/error.hpp"
#include "odssd/rng.hpp"
#include "odssd/weights.hpp"

namespace odssd {

Tensor<float> images_to_tensor(std::span<const Image> stacked) {
  if (stacked.empty()) throw InvalidInput("images_to_tensor: no images");
  const int w = stacked[0].width, h = stacked[0].height;
  Tensor<float> t(Shape{static_cast<std::int64_t>(stacked.size()), 3, h, w});
  float* out = t.data();
  const auto plane = static_cast<std::size_t>(w) * h;
  for (std::size_t n = 0; n < stacked.size(); ++n) {
    const auto& img = stacked[n];
    if (img.width != w || img.height != h) throw ShapeError("images_to_tensor: images differ in size");
    if (img.channels != 1 && img.channels != 3) throw InvalidInput("images_to_tensor: need 1 or 3 channels");
    for (int c = 0; c < 3; ++c) {
      float* dst = out + (n * 3 + c) * plane;
      const int src_c = img.channels == 3 ? c : 0;
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] = (static_cast<float>(img.pixels[i * img.channels + src_c]) - 127.0f) / 128.0f;
      }
    }
  }
  return t;
}

namespace {

Image flip_horizontal(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
    }
  }
  return out;
}

BBox flip_box(const BBox& b, int view_width) { return {view_width - b.xmax, b.ymin, view_width - b.xmin, b.ymax}; }

}  // namespace

std::pair<Image, Image> mirror_pair(const Image& left, const Image& right) {
  return {flip_horizontal(right), flip_horizontal(left)};
}

std::vector<StereoObject> mirror_objects(std::span<const StereoObject> objects, int view_width) {
  std::vector<StereoObject> out;
  for (const auto& o : objects) {
    out.push_back({o.label, flip_box(o.right_box, view_width), flip_box(o.left_box, view_width),
                   {o.disparity.dx, -o.disparity.dy}});
  }
  return out;
}

namespace {

struct Sample {
  Image stacked;
  EncodedTargets targets;
  Image mirrored;
  EncodedTargets mirrored_targets;
  bool use_mirror = false;
};

std::vector<std::vector<float>> snapshot(const Model<float>& model) {
  std::vector<std::vector<float>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore(Model<float>& model, const std::vector<std::vector<float>>& snap) {
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(snap[i].begin(), snap[i].end(), params[i].tensor.data());
}

LossResult<float> batch_loss(const Model<float>& model, Graph<float>* graph, std::span<const Sample* const> batch,
                             std::span<const EncodedTargets> targets) {
  std::vector<Image> images;
  images.reserve(batch.size());
  for (const auto* s : batch) images.push_back(s->use_mirror ? s->mirrored : s->stacked);
  const auto input = images_to_tensor(images);
  const auto out = model.forward(graph, input);
  const auto& cfg = model.config();
  return multibox_disparity_loss(graph, out.confidences, out.locations, targets, cfg.neg_pos_ratio,
                                 cfg.disparity_weight);
}

}  // namespace

TrainResult train_toy(const TrainOptions& options, const EpochCallback& on_epoch) {
  options.model.validate();
  options.scenes.validate();
  if (options.scenes.view_width != options.model.view_width ||
      options.scenes.view_height != options.model.view_height) {
    throw InvalidInput("scene view size must match the model view size");
  }
  if (options.train_scenes == 0 || options.batch_size <= 0 || options.epochs < 0) {
    throw InvalidInput("train_toy: need scenes, a positive batch size and non-negative epochs");
  }
  if (!(options.learning_rate >= 0.0) || !(options.momentum >= 0.0) || !(options.weight_decay >= 0.0)) {
    throw InvalidInput("train_toy: optimizer parameters must be non-negative");
  }

  TrainResult result{Model<float>(options.model, options.init_seed), 0.0, {}, false, {}};
  Model<float>& model = result.model;
  const auto priors = generate_priors(options.model);

  std::vector<Sample> data(options.train_scenes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto scene = generate_scene(options.scenes, i);
    data[i].stacked = stack_pair(scene.left, scene.right);
    data[i].targets = encode_targets(scene.objects, priors, options.model);
    if (options.mirror_augment) {
      const auto [l, r] = mirror_pair(scene.left, scene.right);
      data[i].mirrored = stack_pair(l, r);
      data[i].mirrored_targets =
          encode_targets(mirror_objects(scene.objects, options.scenes.view_width), priors, options.model);
    }
  }

  const auto bs = static_cast<std::size_t>(options.batch_size);
  auto batches_of = [&](const std::vector<std::size_t>& order) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + bs)));
    }
    return out;
  };
  auto run_batch = [&](const std::vector<std::size_t>& idx, Graph<float>* graph) {
    std::vector<const Sample*> batch;
    std::vector<EncodedTargets> targets;
    for (auto i : idx) {
      batch.push_back(&data[i]);
      targets.push_back(data[i].use_mirror ? data[i].mirrored_targets : data[i].targets);
    }
    return batch_loss(model, graph, batch, targets);
  };

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  {
    double total = 0.0;
    for (const auto& b : batches_of(order)) total += run_batch(b, nullptr).total.item() * static_cast<double>(b.size());
    result.initial_loss = total / static_cast<double>(data.size());
  }

  auto params = model.parameter_tensors();
  std::vector<std::vector<float>> velocity;
  for (const auto& p : params) velocity.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
  model.set_requires_grad(true);
  auto good = snapshot(model);
  const auto steps_per_epoch = batches_of(order).size();
  std::size_t step = 0;

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double lr = options.learning_rate;
    if (options.lr_step_epochs > 0) lr *= std::pow(options.lr_gamma, (epoch - 1) / options.lr_step_epochs);
    SplitMix64 rng(mix_seed(options.shuffle_seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    if (options.mirror_augment) {
      for (auto& d : data) d.use_mirror = rng.below(2) == 1;
    }

    double loss_sum = 0.0, cls_sum = 0.0, reg_sum = 0.0;
    bool finite = true;
    for (const auto& b : batches_of(order)) {
      Graph<float> graph;
      auto loss = run_batch(b, &graph);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        finite = false;
        break;
      }
      const auto weight = static_cast<double>(b.size());
      loss_sum += value * weight;
      cls_sum += loss.classification * weight;
      reg_sum += loss.regression * weight;
      if (loss.positives == 0) continue;
      graph.backward(loss.total, params);

      double norm2 = 0.0;
      for (const auto& p : params) {
        for (float g : p.grad()) norm2 += static_cast<double>(g) * g;
      }
      if (!std::isfinite(norm2)) {
        finite = false;
        break;
      }
      const double norm = std::sqrt(norm2);
      const double clip = (options.grad_clip > 0.0 && norm > options.grad_clip) ? options.grad_clip / norm : 1.0;
      double step_lr = lr;
      const auto warm_steps = static_cast<std::size_t>(std::max(0, options.warmup_epochs)) * steps_per_epoch;
      if (step < warm_steps) step_lr *= static_cast<double>(step + 1) / static_cast<double>(warm_steps);
      ++step;
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k].values();
        auto g = params[k].grad();
        auto& v = velocity[k];
        for (std::size_t j = 0; j < w.size(); ++j) {
          const double grad = clip * g[j] + options.weight_decay * w[j];
          v[j] = static_cast<float>(options.momentum * v[j] + grad);
          w[j] = static_cast<float>(w[j] - step_lr * v[j]);
        }
      }
    }
    if (!finite) {
      restore(model, good);
      result.diverged = true;
      result.message = "loss diverged in epoch " + std::to_string(epoch) + "; restored weights of epoch " +
                       std::to_string(epoch - 1);
      break;
    }
    good = snapshot(model);
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(data.size());
    stats.classification = cls_sum / static_cast<double>(data.size());
    stats.regression = reg_sum / static_cast<double>(data.size());
    stats.learning_rate = lr;
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.curve.push_back(stats);
    if (options.checkpoint) save_weights(*options.checkpoint, model, WeightPrecision::Float32);
    if (on_epoch) on_epoch(stats);
  }
  model.set_requires_grad(false);
  for (auto& p : params) p.clear_grad();
  return result;
}

std::vector<Detection> detect_image(const Model<float>& model, const Image& stacked) {
  return detect_image(model, stacked, model.config().score_threshold);
}

std::vector<Detection> detect_image(const Model<float>& model, const Image& stacked, double score_threshold) {
  auto cfg = model.config();
  cfg.score_threshold = score_threshold;
  if (stacked.width != cfg.input_width() || stacked.height != cfg.input_height()) {
    throw ShapeError("image is " + std::to_string(stacked.width) + "x" + std::to_string(stacked.height) +
                     ", model expects " + std::to_string(cfg.input_width()) + "x" + std::to_string(cfg.input_height()));
  }
  const auto out = model.forward(nullptr, images_to_tensor(std::span<const Image>(&stacked, 1)));
  const auto priors = generate_priors(cfg);
  return detect(out.confidences, out.locations, priors, cfg).front();
}

namespace {

std::optional<Detection> best_match(const std::vector<Detection>& dets, const StereoObject& gt,
                                    const ModelConfig& cfg) {
  std::optional<Detection> best;
  for (const auto& d : dets) {
    if (cfg.class_names[static_cast<std::size_t>(d.class_id)] != gt.label) continue;
    if (iou(d.left_box, gt.left_box) < 0.5) continue;
    if (!best || d.score > best->score) best = d;
  }
  return best;
}

}  // namespace

HeldOutResult evaluate_held_out(const Model<float>& model, const SceneSpec& spec, std::uint64_t first_index,
                                std::size_t count) {
  HeldOutResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto scene = generate_scene(spec, first_index + i);
    const auto dets = detect_image(model, stack_pair(scene.left, scene.right));
    ++r.scenes;
    for (const auto& gt : scene.objects) {
      ++r.objects;
      const auto m = best_match(dets, gt, model.config());
      if (!m) continue;
      ++r.detected;
      const double err = std::abs(m->dx - gt.disparity.dx);
      sum += err;
      r.max_abs_dx_error = std::max(r.max_abs_dx_error, err);
    }
  }
  r.mean_abs_dx_error = r.detected == 0 ? 0.0 : sum / static_cast<double>(r.detected);
  return r;
}

double ShiftResult::left_center_drift() const {
  if (!detected()) return 0.0;
  return std::hypot(after->left_box.cx() - before->left_box.cx(), after->left_box.cy() - before->left_box.cy());
}

ShiftResult shift_object_test(const Model<float>& model, const SceneLayout& layout, std::size_t object_index,
                              int shift, std::optional<double> score_threshold) {
  if (object_index >= layout.objects.size()) throw InvalidInput("shift_object_test: no such object");
  ShiftResult r;
  r.shift = shift;
  const auto before = render_scene(layout);
  const auto moved_layout = shift_right_view_object(layout, object_index, shift);
  const auto after = render_scene(moved_layout);
  // The shifted layout may be re-sorted; find the object by its left box.
  const auto& target = layout.objects[object_index];
  const StereoObject* gt_before = nullptr;
  const StereoObject* gt_after = nullptr;
  for (const auto& o : before.objects) {
    if (o.left_box == target.left_box()) gt_before = &o;
  }
  for (const auto& o : after.objects) {
    if (o.left_box == target.left_box()) gt_after = &o;
  }
  if (gt_before == nullptr || gt_after == nullptr) throw InvalidInput("shift_object_test: object is not visible");
  r.true_dx_before = gt_before->disparity.dx;
  r.true_dx_after = gt_after->disparity.dx;
  const double thr = score_threshold.value_or(model.config().score_threshold);
  r.before = best_match(detect_image(model, stack_pair(before.left, before.right), thr), *gt_before, model.config());
  r.after = best_match(detect_image(model, stack_pair(after.left, after.right), thr), *gt_after, model.config());
  return r;
}

BenchTiming time_inference(const Model<float>& model, const ModelConfig& config, int iterations, int warmup,
                           std::uint64_t scene_seed) {
  if (iterations < 1 || warmup < 0) throw InvalidInput("time_inference: need iterations >= 1 and warmup >= 0");
  const auto priors = generate_priors(config);
  SceneSpec spec;
  spec.view_width = config.view_width;
  spec.view_height = config.view_height;
  spec.max_disparity = config.view_width / 8;
  spec.max_object_width = config.view_width / 3;
  spec.min_object_width = std::min(spec.min_object_width, spec.max_object_width);
  spec.max_object_height = config.view_height / 3;
  spec.min_object_height = std::min(spec.min_object_height, spec.max_object_height);
  spec.max_objects = 4;
  const auto scene = generate_scene(spec, scene_seed);
  const auto stacked = stack_pair(scene.left, scene.right);
  const auto input = images_to_tensor(std::span<const Image>(&stacked, 1));

  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
  };
  BenchTiming r;
  r.input_width = config.input_width();
  r.input_height = config.input_height();
  r.iterations = iterations;
  std::size_t detections = 0;
  for (int it = 0; it < warmup + iterations; ++it) {
    const auto t0 = Clock::now();
    const auto out = model.forward(nullptr, input);
    const double f = ms_since(t0);
    const auto t1 = Clock::now();
    const auto dets = detect(out.confidences, out.locations, priors, config);
    const double p = ms_since(t1);
    if (it < warmup) continue;
    r.inference_ms += f;
    r.inference_nms_ms += f + p;
    detections += dets.front().size();
  }
  r.inference_ms /= iterations;
  r.inference_nms_ms /= iterations;
  r.mean_detections = static_cast<double>(detections) / iterations;
  return r;
}

}  // namespace odssd
