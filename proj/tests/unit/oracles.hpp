#pragma once

// Brute-force reference implementations. They are written straight from the
// definitions, without the shortcuts the library takes, and are only used to
// generate expectations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "odssd/eval.hpp"
#include "odssd/geometry.hpp"
#include "odssd/model.hpp"
#include "odssd/rng.hpp"

namespace oracle {

using odssd::BBox;

// Line-for-line transcription of the object disparity pseudocode.
inline std::pair<double, double> object_disparity(double lxmin, double lymin, double lxmax, double lymax,
                                                  double rxmin, double rymin, double rxmax, double rymax,
                                                  double img_width, double img_height) {
  double dx, dy;
  if (lxmin == 0 || rxmin == 0)
    dx = lxmax - rxmax;
  else if (lxmax == img_width || rxmax == img_width)
    dx = lxmin - rxmin;
  else
    dx = (lxmin + lxmax) / 2 - (rxmin + rxmax) / 2;

  if (lymin == 0 || rymin == 0)
    dy = lymax - rymax;
  else if (lymax == img_height || rymax == img_height)
    dy = lymin - rymin;
  else
    dy = (lymin + lymax) / 2 - (rymin + rymax) / 2;
  return {dx, dy};
}

// Intersection counted on an integer-free grid: explicit overlap lengths.
inline double overlap(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
  const double iy = std::max(0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
  const double inter = ix * iy;
  const double uni = (a.xmax - a.xmin) * (a.ymax - a.ymin) + (b.xmax - b.xmin) * (b.ymax - b.ymin) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// True when candidate a outranks b: higher score, then lower index.
inline bool outranks(const std::vector<double>& scores, std::size_t a, std::size_t b) {
  return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
}

// Repeatedly picks the best-ranked unvisited candidate by linear scan and
// keeps it unless some kept box overlaps it by more than the threshold.
inline std::vector<std::size_t> nms(const std::vector<BBox>& boxes, const std::vector<double>& scores, double thr,
                                    std::size_t top_k) {
  const std::size_t n = boxes.size();
  std::vector<bool> visited(n, false);
  std::vector<std::size_t> kept;
  for (std::size_t round = 0; round < n; ++round) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!visited[i] && (best == n || outranks(scores, i, best))) best = i;
    }
    visited[best] = true;
    bool suppressed = false;
    for (auto k : kept) suppressed = suppressed || overlap(boxes[k], boxes[best]) > thr;
    if (!suppressed) kept.push_back(best);
  }
  if (kept.size() > top_k) kept.resize(top_k);
  return kept;
}

inline BBox prior_box(const odssd::Prior& p) {
  return {p.cx - p.w / 2, p.cy - p.h / 2, p.cx + p.w / 2, p.cy + p.h / 2};
}

// Full P x G IoU matrix, then the two matching rules applied in order.
inline std::vector<int> match_priors(const std::vector<BBox>& gts, const std::vector<odssd::Prior>& priors,
                                     double thr) {
  const std::size_t P = priors.size(), G = gts.size();
  std::vector<std::vector<double>> m(P, std::vector<double>(G, 0.0));
  std::vector<bool> usable(G);
  for (std::size_t g = 0; g < G; ++g) usable[g] = gts[g].xmax > gts[g].xmin && gts[g].ymax > gts[g].ymin;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t g = 0; g < G; ++g) m[p][g] = overlap(prior_box(priors[p]), gts[g]);

  std::vector<int> out(P, -1);
  for (std::size_t p = 0; p < P; ++p) {
    int best = -1;
    for (std::size_t g = 0; g < G; ++g) {
      if (usable[g] && (best < 0 || m[p][g] > m[p][static_cast<std::size_t>(best)])) best = static_cast<int>(g);
    }
    if (best >= 0 && m[p][static_cast<std::size_t>(best)] >= thr) out[p] = best;
  }
  for (std::size_t g = 0; g < G; ++g) {
    if (!usable[g]) continue;
    std::size_t best = 0;
    for (std::size_t p = 1; p < P; ++p) {
      if (m[p][g] > m[best][g]) best = p;
    }
    out[best] = static_cast<int>(g);
  }
  return out;
}

// Sort every negative by (loss desc, index asc) and take the budget.
inline std::vector<std::uint8_t> hard_negatives(const std::vector<double>& loss, const std::vector<int>& labels,
                                                double ratio) {
  std::vector<std::uint8_t> mask(labels.size(), 0);
  std::vector<std::pair<double, std::size_t>> neg;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0) {
      mask[i] = 1;
      ++pos;
    } else {
      neg.push_back({-loss[i], i});
    }
  }
  std::sort(neg.begin(), neg.end());
  const auto budget = std::min(neg.size(), static_cast<std::size_t>(std::floor(ratio * static_cast<double>(pos))));
  for (std::size_t i = 0; i < budget; ++i) mask[neg[i].second] = 1;
  return mask;
}

// Visits every pixel; keeps valid ones whose center is inside the box; full
// sort, nearest rank.
inline std::optional<double> percentile_in_box(const odssd::DisparityMap& map, const BBox& box, double q) {
  std::vector<double> v;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      const auto i = static_cast<std::size_t>(y) * map.width + x;
      if (map.valid[i] && cx >= box.xmin && cx <= box.xmax && cy >= box.ymin && cy <= box.ymax) {
        v.push_back(map.values[i]);
      }
    }
  }
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()) / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

struct Matching {
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

// Greedy PR matching with an explicit priority scan instead of a sort.
inline Matching match_detections(const std::vector<BBox>& dets, const std::vector<double>& scores,
                                 const std::vector<BBox>& gts, double thr) {
  Matching r;
  std::vector<bool> used_det(dets.size(), false), used_gt(gts.size(), false);
  for (std::size_t round = 0; round < dets.size(); ++round) {
    std::size_t d = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (!used_det[i] && (d == dets.size() || outranks(scores, i, d))) d = i;
    }
    used_det[d] = true;
    std::optional<std::size_t> g;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used_gt[j]) continue;
      if (!g || overlap(dets[d], gts[j]) > overlap(dets[d], gts[*g])) g = j;
    }
    if (g && overlap(dets[d], gts[*g]) >= thr) {
      used_gt[*g] = true;
      r.pairs.push_back({d, *g});
      ++r.tp;
    } else {
      ++r.fp;
    }
  }
  r.fn = gts.size() - r.tp;
  return r;
}

// Size of a maximum matching between detections and gts at IoU >= thr, by
// exhaustive search over gt subsets (small inputs only).
inline std::size_t max_matching(const std::vector<BBox>& dets, const std::vector<BBox>& gts, double thr) {
  const std::size_t G = gts.size();
  std::vector<int> best(std::size_t{1} << G, -1);
  best[0] = 0;
  for (const auto& d : dets) {
    auto next = best;
    for (std::size_t mask = 0; mask < best.size(); ++mask) {
      if (best[mask] < 0) continue;
      for (std::size_t g = 0; g < G; ++g) {
        if ((mask >> g) & 1U) continue;
        if (overlap(d, gts[g]) < thr) continue;
        const auto m2 = mask | (std::size_t{1} << g);
        next[m2] = std::max(next[m2], best[mask] + 1);
      }
    }
    best = std::move(next);
  }
  return static_cast<std::size_t>(*std::max_element(best.begin(), best.end()));
}

// Random box with integer-ish or fractional corners inside [0,w]x[0,h].
inline BBox random_box(odssd::SplitMix64& rng, double w, double h, bool snap) {
  auto coord = [&](double extent) {
    double v = rng.uniform(0, extent);
    if (snap) v = std::round(v);
    return v;
  };
  double x0 = coord(w), x1 = coord(w), y0 = coord(h), y1 = coord(h);
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  return {x0, y0, x1, y1};
}

// Parameter count of the full-width network from per-layer formulas.
inline std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t groups = 1) {
  return out * (in / groups) * k * k + out;
}
inline std::int64_t fire_params(std::int64_t in, std::int64_t s, std::int64_t e1, std::int64_t e3) {
  return (in * s + s) + (s * e1 + e1) + (9 * s * e3 + e3);
}
inline std::int64_t separable_params(std::int64_t in, std::int64_t out) {
  return conv_params(in, in, 3, in) + conv_params(in, out, 1);
}
inline std::int64_t base_params() {
  return conv_params(3, 64, 3) + fire_params(64, 16, 64, 64) + fire_params(128, 16, 64, 64) +
         fire_params(128, 32, 128, 128) + fire_params(256, 32, 128, 128) + fire_params(256, 48, 192, 192) +
         fire_params(384, 48, 192, 192) + fire_params(384, 64, 128, 128) + fire_params(256, 64, 128, 128);
}
inline std::int64_t model_params(std::int64_t num_classes, std::int64_t anchors = 6) {
  std::int64_t n = base_params();
  n += conv_params(512, 256, 1) + separable_params(256, 512);
  n += conv_params(512, 256, 1) + separable_params(256, 512);
  n += conv_params(512, 128, 1) + separable_params(128, 256);
  for (std::int64_t in : {512, 512, 512, 256}) {
    n += separable_params(in, anchors * 6) + separable_params(in, anchors * num_classes);
  }
  return n;
}

}  // namespace oracle
