#include "odssd/codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "odssd/error.hpp"

namespace odssd {

namespace {
constexpr double kMaxSizeExponent = 10.0;
}

BBox normalize_box(const BBox& box, double view_width, double view_height) {
  return {box.xmin / view_width, box.ymin / view_height, box.xmax / view_width, box.ymax / view_height};
}

BBox prior_to_box(const Prior& p) { return {p.cx - p.w / 2, p.cy - p.h / 2, p.cx + p.w / 2, p.cy + p.h / 2}; }

PriorMatch match_priors(std::span<const BBox> gt_boxes, std::span<const Prior> priors, double iou_threshold) {
  PriorMatch m;
  m.gt_index.assign(priors.size(), -1);
  std::vector<std::size_t> usable;
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    if (gt_boxes[g].valid() && gt_boxes[g].area() > 0.0) {
      usable.push_back(g);
    } else {
      m.excluded.push_back(g);
    }
  }
  if (usable.empty() || priors.empty()) return m;

  std::vector<BBox> prior_boxes;
  prior_boxes.reserve(priors.size());
  for (const auto& p : priors) prior_boxes.push_back(prior_to_box(p));

  std::vector<double> best_iou_for_gt(usable.size(), -1.0);
  std::vector<std::size_t> best_prior_for_gt(usable.size(), 0);
  for (std::size_t p = 0; p < priors.size(); ++p) {
    double best = -1.0;
    int best_g = -1;
    for (std::size_t k = 0; k < usable.size(); ++k) {
      const double o = iou(prior_boxes[p], gt_boxes[usable[k]]);
      if (o > best) {
        best = o;
        best_g = static_cast<int>(usable[k]);
      }
      if (o > best_iou_for_gt[k]) {
        best_iou_for_gt[k] = o;
        best_prior_for_gt[k] = p;
      }
    }
    if (best >= iou_threshold) m.gt_index[p] = best_g;
  }
  for (std::size_t k = 0; k < usable.size(); ++k) m.gt_index[best_prior_for_gt[k]] = static_cast<int>(usable[k]);
  return m;
}

LocationVector encode(const BBox& left_box, const ObjectDisparity& disparity, const Prior& p,
                      const CodecParams& params) {
  const BBox g = normalize_box(left_box, params.view_width, params.view_height);
  LocationVector v;
  v.cx = ((g.cx() - p.cx) / p.w) / params.center_variance;
  v.cy = ((g.cy() - p.cy) / p.h) / params.center_variance;
  v.w = std::log(g.width() / p.w) / params.size_variance;
  v.h = std::log(g.height() / p.h) / params.size_variance;
  v.dx = ((disparity.dx / params.view_width) / p.w) / params.center_variance;
  v.dy = ((disparity.dy / params.view_height) / p.h) / params.center_variance;
  return v;
}

DecodedBox decode(const LocationVector& loc, const Prior& p, const CodecParams& params) {
  DecodedBox d;
  const double cx = p.cx + loc.cx * params.center_variance * p.w;
  const double cy = p.cy + loc.cy * params.center_variance * p.h;
  double ew = loc.w * params.size_variance;
  double eh = loc.h * params.size_variance;
  if (ew > kMaxSizeExponent || eh > kMaxSizeExponent) d.clamped = true;
  ew = std::min(ew, kMaxSizeExponent);
  eh = std::min(eh, kMaxSizeExponent);
  const double w = p.w * std::exp(ew);
  const double h = p.h * std::exp(eh);
  d.left_box = {(cx - w / 2) * params.view_width, (cy - h / 2) * params.view_height, (cx + w / 2) * params.view_width,
                (cy + h / 2) * params.view_height};
  d.dx = loc.dx * params.center_variance * p.w * params.view_width;
  d.dy = loc.dy * params.center_variance * p.h * params.view_height;
  return d;
}

template <typename T>
std::vector<DecodedBox> decode_locations(std::span<const T> rows, std::span<const Prior> priors,
                                         const CodecParams& params) {
  if (rows.size() != priors.size() * 6) {
    throw ShapeError("decode_locations: " + std::to_string(rows.size()) + " values for " +
                     std::to_string(priors.size()) + " priors");
  }
  std::vector<DecodedBox> out;
  out.reserve(priors.size());
  for (std::size_t i = 0; i < priors.size(); ++i) {
    const T* r = rows.data() + i * 6;
    LocationVector v{double(r[0]), double(r[1]), double(r[2]), double(r[3]), double(r[4]), double(r[5])};
    out.push_back(decode(v, priors[i], params));
  }
  return out;
}

template std::vector<DecodedBox> decode_locations(std::span<const float>, std::span<const Prior>, const CodecParams&);
template std::vector<DecodedBox> decode_locations(std::span<const double>, std::span<const Prior>,
                                                  const CodecParams&);

std::int64_t EncodedTargets::positives() const {
  return std::count_if(labels.begin(), labels.end(), [](int l) { return l > 0; });
}

EncodedTargets encode_targets(std::span<const StereoObject> objects, std::span<const Prior> priors,
                              const ModelConfig& config) {
  const auto params = CodecParams::from(config);
  std::vector<BBox> boxes;
  std::vector<int> classes;
  for (const auto& o : objects) {
    auto it = std::find(config.class_names.begin(), config.class_names.end(), o.label);
    if (it == config.class_names.end() || it == config.class_names.begin()) {
      throw InvalidInput("object label '" + o.label + "' is not a foreground class of the model");
    }
    classes.push_back(static_cast<int>(it - config.class_names.begin()));
    boxes.push_back(normalize_box(o.left_box, params.view_width, params.view_height));
  }
  const auto match = match_priors(boxes, priors, config.match_iou_threshold);
  EncodedTargets t;
  t.labels.assign(priors.size(), 0);
  t.locations.assign(priors.size(), LocationVector{});
  for (auto g : match.excluded) {
    t.warnings.push_back("object " + std::to_string(g) + " (" + objects[g].label + ") has a degenerate box, excluded");
  }
  for (std::size_t p = 0; p < priors.size(); ++p) {
    const int g = match.gt_index[p];
    if (g < 0) continue;
    t.labels[p] = classes[static_cast<std::size_t>(g)];
    t.locations[p] = encode(objects[static_cast<std::size_t>(g)].left_box, objects[static_cast<std::size_t>(g)].disparity,
                            priors[p], params);
  }
  return t;
}

std::vector<std::uint8_t> hard_negative_mask(std::span<const double> background_loss, std::span<const int> labels,
                                             double neg_pos_ratio) {
  if (background_loss.size() != labels.size()) throw ShapeError("hard_negative_mask: size mismatch");
  std::vector<std::uint8_t> mask(labels.size(), 0);
  std::vector<std::size_t> negatives;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0) {
      mask[i] = 1;
      ++positives;
    } else {
      negatives.push_back(i);
    }
  }
  const auto budget = std::min(negatives.size(), static_cast<std::size_t>(std::floor(neg_pos_ratio * positives)));
  std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(budget), negatives.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (background_loss[a] != background_loss[b]) return background_loss[a] > background_loss[b];
                      return a < b;
                    });
  for (std::size_t i = 0; i < budget; ++i) mask[negatives[i]] = 1;
  return mask;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

template <typename T>
LossResult<T> multibox_disparity_loss(Graph<T>* graph, const Tensor<T>& confidences, const Tensor<T>& locations,
                                      std::span<const EncodedTargets> targets, double neg_pos_ratio,
                                      double disparity_weight) {
  if (confidences.rank() != 3 || locations.rank() != 3 || locations.dim(2) != 6 ||
      confidences.dim(0) != locations.dim(0) || confidences.dim(1) != locations.dim(1)) {
    throw ShapeError("multibox loss: confidences " + shape_str(confidences.shape()) + " vs locations " +
                     shape_str(locations.shape()));
  }
  const auto n = confidences.dim(0), priors = confidences.dim(1), k = confidences.dim(2);
  if (static_cast<std::int64_t>(targets.size()) != n) throw ShapeError("multibox loss: one target set per image");
  for (const auto& t : targets) {
    if (static_cast<std::int64_t>(t.labels.size()) != priors || static_cast<std::int64_t>(t.locations.size()) != priors) {
      throw ShapeError("multibox loss: targets do not cover " + std::to_string(priors) + " priors");
    }
  }

  LossResult<T> result;
  for (const auto& t : targets) result.positives += t.positives();

  const T* conf = confidences.data();
  const T* loc = locations.data();
  // Per-prior softmax probabilities and the selection mask are kept for the
  // reverse pass; mining is treated as a constant selection.
  std::vector<double> probs(static_cast<std::size_t>(n * priors * k));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n * priors));
  double cls = 0.0, reg = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& tgt = targets[static_cast<std::size_t>(i)];
    std::vector<double> bg_loss(static_cast<std::size_t>(priors));
    for (std::int64_t p = 0; p < priors; ++p) {
      const T* row = conf + (i * priors + p) * k;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t c = 0; c < k; ++c) mx = std::max(mx, double(row[c]));
      double z = 0.0;
      for (std::int64_t c = 0; c < k; ++c) z += std::exp(double(row[c]) - mx);
      const double lse = mx + std::log(z);
      double* pr = probs.data() + (i * priors + p) * k;
      for (std::int64_t c = 0; c < k; ++c) pr[c] = std::exp(double(row[c]) - lse);
      bg_loss[static_cast<std::size_t>(p)] = lse - double(row[0]);
    }
    auto m = hard_negative_mask(bg_loss, tgt.labels, neg_pos_ratio);
    for (std::int64_t p = 0; p < priors; ++p) {
      if (!m[static_cast<std::size_t>(p)]) continue;
      mask[static_cast<std::size_t>(i * priors + p)] = 1;
      const int label = tgt.labels[static_cast<std::size_t>(p)];
      cls += -std::log(std::max(probs[static_cast<std::size_t>((i * priors + p) * k + label)], 1e-300));
      if (label > 0) {
        const T* lr = loc + (i * priors + p) * 6;
        const auto& lv = tgt.locations[static_cast<std::size_t>(p)];
        const double target[6] = {lv.cx, lv.cy, lv.w, lv.h, lv.dx, lv.dy};
        for (int d = 0; d < 6; ++d) {
          const double w = d >= 4 ? disparity_weight : 1.0;
          reg += w * smooth_l1(double(lr[d]) - target[d]);
        }
      }
    }
  }

  if (result.positives == 0) {
    result.total = Tensor<T>::scalar(T(0));
    result.warning = "no positive priors in batch; loss is zero";
    return result;
  }
  const double scale = 1.0 / static_cast<double>(result.positives);
  result.classification = cls * scale;
  result.regression = reg * scale;
  result.total = Tensor<T>::scalar(static_cast<T>(result.classification + result.regression));

  if (needs_grad(graph, {&confidences, &locations})) {
    result.total.set_requires_grad(true);
    std::vector<EncodedTargets> tcopy(targets.begin(), targets.end());
    graph->record([confidences, locations, total = result.total, probs = std::move(probs), mask = std::move(mask),
                   tcopy = std::move(tcopy), n, priors, k, scale, disparity_weight]() mutable {
      if (!total.has_grad()) return;
      const double g = double(total.grad()[0]) * scale;
      if (confidences.requires_grad()) {
        T* dc = confidences.grad().data();
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t p = 0; p < priors; ++p) {
            if (!mask[static_cast<std::size_t>(i * priors + p)]) continue;
            const int label = tcopy[static_cast<std::size_t>(i)].labels[static_cast<std::size_t>(p)];
            const double* pr = probs.data() + (i * priors + p) * k;
            T* row = dc + (i * priors + p) * k;
            for (std::int64_t c = 0; c < k; ++c) {
              row[c] += static_cast<T>(g * (pr[c] - (c == label ? 1.0 : 0.0)));
            }
          }
        }
      }
      if (locations.requires_grad()) {
        T* dl = locations.grad().data();
        const T* lv = locations.data();
        for (std::int64_t i = 0; i < n; ++i) {
          const auto& tgt = tcopy[static_cast<std::size_t>(i)];
          for (std::int64_t p = 0; p < priors; ++p) {
            if (tgt.labels[static_cast<std::size_t>(p)] <= 0) continue;
            const auto& t = tgt.locations[static_cast<std::size_t>(p)];
            const double target[6] = {t.cx, t.cy, t.w, t.h, t.dx, t.dy};
            for (int d = 0; d < 6; ++d) {
              const double diff = double(lv[(i * priors + p) * 6 + d]) - target[d];
              const double slope = std::abs(diff) < 1.0 ? diff : (diff > 0 ? 1.0 : -1.0);
              const double w = d >= 4 ? disparity_weight : 1.0;
              dl[(i * priors + p) * 6 + d] += static_cast<T>(g * w * slope);
            }
          }
        }
      }
    });
  }
  return result;
}

template LossResult<float> multibox_disparity_loss(Graph<float>*, const Tensor<float>&, const Tensor<float>&,
                                                   std::span<const EncodedTargets>, double, double);
template LossResult<double> multibox_disparity_loss(Graph<double>*, const Tensor<double>&, const Tensor<double>&,
                                                    std::span<const EncodedTargets>, double, double);

}  // namespace odssd
