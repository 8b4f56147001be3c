#include "odssd/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "odssd/error.hpp"
#include "odssd/rng.hpp"

namespace odssd {

void SceneSpec::validate() const {
  if (view_width < 8 || view_height < 8) throw InvalidInput("scene view too small");
  if (min_objects < 0 || max_objects < min_objects) throw InvalidInput("bad object count range");
  if (min_disparity < 0 || max_disparity < min_disparity || max_disparity > view_width / 4) {
    throw InvalidInput("disparity range must lie within [0, view_width/4]");
  }
  if (dy_jitter < 0 || dy_jitter > 16) throw InvalidInput("dy jitter must lie within [0, 16]");
  if (min_object_width < 2 || max_object_width < min_object_width || min_object_height < 2 ||
      max_object_height < min_object_height) {
    throw InvalidInput("bad object size range");
  }
  if (max_object_width + max_disparity + 2 > view_width || max_object_height + 2 * dy_jitter + 2 > view_height) {
    throw InvalidInput("objects cannot fit in both views");
  }
  if (palette.empty()) throw InvalidInput("empty shape palette");
}

BBox PlacedObject::left_box() const {
  return {static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + width),
          static_cast<double>(y + height)};
}

namespace {

std::uint64_t hash3(std::uint64_t seed, std::int64_t a, std::int64_t b) {
  SplitMix64 r(seed ^ (static_cast<std::uint64_t>(a) * 0x9E3779B97F4A7C15ULL) ^
               (static_cast<std::uint64_t>(b) * 0xC2B2AE3D27D4EB4FULL));
  return r.next();
}

double hash_unit(std::uint64_t seed, std::int64_t a, std::int64_t b) {
  return static_cast<double>(hash3(seed, a, b) >> 11) * 0x1.0p-53;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Bilinear value noise on a lattice of `cell` pixels, in [0, 1).
double value_noise(std::uint64_t seed, std::int64_t x, std::int64_t y, int cell) {
  const std::int64_t gx = floor_div(x, cell), gy = floor_div(y, cell);
  const double fx = static_cast<double>(x - gx * cell) / cell;
  const double fy = static_cast<double>(y - gy * cell) / cell;
  const double a = hash_unit(seed, gx, gy), b = hash_unit(seed, gx + 1, gy);
  const double c = hash_unit(seed, gx, gy + 1), d = hash_unit(seed, gx + 1, gy + 1);
  const double top = a + (b - a) * fx, bottom = c + (d - c) * fx;
  return top + (bottom - top) * fy;
}

std::array<std::uint8_t, 3> background_pixel(std::uint64_t seed, std::int64_t x, std::int64_t y, double amplitude) {
  const double coarse = value_noise(seed, x, y, 16) - 0.5;
  const double fine = value_noise(seed + 1, x, y, 4) - 0.5;
  const double base = 0.45 + 0.1 * (static_cast<double>(y) / 200.0);
  std::array<std::uint8_t, 3> px{};
  for (int c = 0; c < 3; ++c) {
    const double tint = (c == 2 ? 0.03 : 0.0);
    const double v = base + tint + amplitude * (0.7 * coarse + 0.6 * fine);
    px[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  }
  return px;
}

bool inside_shape(const PlacedObject& o, int u, int v) {
  if (u < 0 || v < 0 || u >= o.width || v >= o.height) return false;
  if (o.shape == ShapeKind::Rectangle) return true;
  const double ex = (u + 0.5 - o.width / 2.0) / (o.width / 2.0);
  const double ey = (v + 0.5 - o.height / 2.0) / (o.height / 2.0);
  return ex * ex + ey * ey <= 1.0;
}

bool on_border(const PlacedObject& o, int u, int v) {
  constexpr int kBorder = 2;
  for (int du = -kBorder; du <= kBorder; du += kBorder) {
    for (int dv = -kBorder; dv <= kBorder; dv += kBorder) {
      if (!inside_shape(o, u + du, v + dv)) return true;
    }
  }
  return false;
}

// Object texture in object-local coordinates, so both views see the same
// surface at their own offsets.
std::array<std::uint8_t, 3> object_pixel(const PlacedObject& o, int u, int v) {
  SplitMix64 color_rng(o.texture_seed);
  std::array<double, 3> base{};
  for (auto& c : base) c = color_rng.uniform(0.15, 0.9);
  std::array<std::uint8_t, 3> px{};
  if (on_border(o, u, v)) {
    for (int c = 0; c < 3; ++c) px[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(base[static_cast<std::size_t>(c)] * 60.0);
    return px;
  }
  const double n1 = value_noise(o.texture_seed + 11, u, v, 6) - 0.5;
  const double n2 = hash_unit(o.texture_seed + 17, u, v) - 0.5;
  for (int c = 0; c < 3; ++c) {
    const double val = base[static_cast<std::size_t>(c)] + 0.35 * n1 + 0.15 * n2;
    px[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::clamp(val, 0.0, 1.0) * 255.0 + 0.5);
  }
  return px;
}

}  // namespace

SceneLayout sample_layout(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  SplitMix64 rng(mix_seed(spec.seed, index));
  SceneLayout layout;
  layout.view_width = spec.view_width;
  layout.view_height = spec.view_height;
  layout.background_seed = rng.next();
  layout.background_texture = spec.background_texture;
  layout.rig_dy = static_cast<int>(rng.between(-spec.dy_jitter, spec.dy_jitter));
  const int count = static_cast<int>(rng.between(spec.min_objects, spec.max_objects));
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_placement_retries && !placed; ++attempt) {
      PlacedObject o;
      const auto& cls = spec.palette[rng.below(spec.palette.size())];
      o.label = cls.label;
      o.shape = cls.shape;
      o.width = static_cast<int>(rng.between(spec.min_object_width, spec.max_object_width));
      o.height = static_cast<int>(rng.between(spec.min_object_height, spec.max_object_height));
      o.dx = static_cast<int>(rng.between(spec.min_disparity, spec.max_disparity));
      o.dy = layout.rig_dy;
      o.texture_seed = rng.next();
      // Keep a one-pixel margin in both views so no box touches a view edge.
      const int x_lo = 1 + o.dx, x_hi = spec.view_width - 1 - o.width;
      const int y_lo = 1 + std::max(0, o.dy), y_hi = spec.view_height - 1 - o.height + std::min(0, o.dy);
      if (x_hi < x_lo || y_hi < y_lo) continue;
      o.x = static_cast<int>(rng.between(x_lo, x_hi));
      o.y = static_cast<int>(rng.between(y_lo, y_hi));
      bool overlaps = false;
      for (const auto& other : layout.objects) {
        if (iou(other.left_box(), o.left_box()) > 0.1 || iou(other.right_box(), o.right_box()) > 0.1) overlaps = true;
      }
      if (overlaps) continue;
      layout.objects.push_back(o);
      placed = true;
    }
    if (!placed) ++layout.skipped;
  }
  // Far objects first so nearer ones occlude them identically in both views.
  std::stable_sort(layout.objects.begin(), layout.objects.end(),
                   [](const PlacedObject& a, const PlacedObject& b) { return a.dx < b.dx; });
  return layout;
}

Scene render_scene(const SceneLayout& layout) {
  Scene s;
  s.layout = layout;
  const int w = layout.view_width, h = layout.view_height;
  s.left = Image(w, h, 3);
  s.right = Image(w, h, 3);
  s.dense_disparity.width = w;
  s.dense_disparity.height = h;
  s.dense_disparity.pixels.assign(static_cast<std::size_t>(w) * h, 0);
  const double amplitude = layout.background_texture;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto l = background_pixel(layout.background_seed, x, y, amplitude);
      const auto r = background_pixel(layout.background_seed, x, y + layout.rig_dy, amplitude);
      for (int c = 0; c < 3; ++c) {
        s.left.at(x, y, c) = l[static_cast<std::size_t>(c)];
        s.right.at(x, y, c) = r[static_cast<std::size_t>(c)];
      }
    }
  }
  for (const auto& o : layout.objects) {
    for (int v = 0; v < o.height; ++v) {
      for (int u = 0; u < o.width; ++u) {
        if (!inside_shape(o, u, v)) continue;
        const auto px = object_pixel(o, u, v);
        const int lx = o.x + u, ly = o.y + v;
        const int rx = lx - o.dx, ry = ly - o.dy;
        if (lx >= 0 && lx < w && ly >= 0 && ly < h) {
          for (int c = 0; c < 3; ++c) s.left.at(lx, ly, c) = px[static_cast<std::size_t>(c)];
          s.dense_disparity.pixels[static_cast<std::size_t>(ly) * w + lx] = static_cast<std::uint16_t>(o.dx * 256);
        }
        if (rx >= 0 && rx < w && ry >= 0 && ry < h) {
          for (int c = 0; c < 3; ++c) s.right.at(rx, ry, c) = px[static_cast<std::size_t>(c)];
        }
      }
    }
    s.objects.push_back({o.label, o.left_box(), o.right_box(), {static_cast<double>(o.dx), static_cast<double>(o.dy)}});
  }
  return s;
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t index) { return render_scene(sample_layout(spec, index)); }

SceneLayout shift_right_view_object(const SceneLayout& layout, std::size_t object_index, int shift) {
  if (object_index >= layout.objects.size()) throw InvalidInput("shift: no such object");
  SceneLayout out = layout;
  auto& o = out.objects[object_index];
  o.dx += shift;
  const auto r = o.right_box();
  if (r.xmin < 0 || r.xmax > layout.view_width) {
    throw InvalidInput("shift of " + std::to_string(shift) + " px moves the object out of the right view");
  }
  std::stable_sort(out.objects.begin(), out.objects.end(),
                   [](const PlacedObject& a, const PlacedObject& b) { return a.dx < b.dx; });
  return out;
}

}  // namespace odssd
