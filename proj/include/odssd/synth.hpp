#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odssd/geometry.hpp"
#include "odssd/image.hpp"

namespace odssd {

enum class ShapeKind { Rectangle, Ellipse };

struct ShapeClass {
  ShapeKind shape = ShapeKind::Rectangle;
  std::string label = "car";
};

/// Parameters of the synthetic stereo scene family.
struct SceneSpec {
  std::uint64_t seed = 1;
  int view_width = 160;
  int view_height = 80;
  int min_objects = 1;
  int max_objects = 1;
  /// Integer disparities drawn uniformly from [min, max]; max <= view_width / 4.
  int min_disparity = 0;
  int max_disparity = 40;
  /// Per-scene vertical rig misalignment drawn from [-dy_jitter, dy_jitter];
  /// applied to the whole right view. |dy_jitter| <= 16.
  int dy_jitter = 0;
  int min_object_width = 32;
  int max_object_width = 72;
  int min_object_height = 24;
  int max_object_height = 56;
  std::vector<ShapeClass> palette{{ShapeKind::Rectangle, "car"}, {ShapeKind::Ellipse, "trafficsign"}};
  /// Background noise amplitude as a fraction of full scale.
  double background_texture = 0.15;
  int max_placement_retries = 50;

  /// Throws InvalidInput when a range is empty or out of bounds.
  void validate() const;
};

struct PlacedObject {
  std::string label;
  ShapeKind shape = ShapeKind::Rectangle;
  /// Integer pixel corners in the left view.
  int x = 0, y = 0, width = 0, height = 0;
  int dx = 0;
  int dy = 0;
  std::uint64_t texture_seed = 0;

  BBox left_box() const;
  BBox right_box() const { return left_box().translated(-dx, -dy); }
};

/// Everything needed to render a scene; editing a layout and re-rendering is
/// how the right view is modified for shift experiments.
struct SceneLayout {
  int view_width = 0;
  int view_height = 0;
  int rig_dy = 0;
  std::uint64_t background_seed = 0;
  double background_texture = 0.15;
  std::vector<PlacedObject> objects;  // drawn in order, later on top
  int skipped = 0;                    // objects that could not be placed
};

struct Scene {
  Image left;
  Image right;
  std::vector<StereoObject> objects;
  /// Left-view dense disparity in 1/256 px units (0 = no data), KITTI style.
  Image16 dense_disparity;
  SceneLayout layout;
};

/// Deterministic per (spec.seed, index).
SceneLayout sample_layout(const SceneSpec& spec, std::uint64_t index);
Scene render_scene(const SceneLayout& layout);
Scene generate_scene(const SceneSpec& spec, std::uint64_t index);

/// Copy of `layout` whose object `object_index` is moved left by `shift`
/// pixels in the right view only (its disparity grows by `shift`).
/// Throws InvalidInput if the moved object would leave the right view.
SceneLayout shift_right_view_object(const SceneLayout& layout, std::size_t object_index, int shift);

}  // namespace odssd
