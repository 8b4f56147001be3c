#pragma once

#include <string>

namespace odssd {

/// Axis-aligned box in corner form, real-valued pixel coordinates.
struct BBox {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (xmin + xmax); }
  double cy() const { return 0.5 * (ymin + ymax); }

  /// Finite coordinates with xmin <= xmax and ymin <= ymax.
  bool valid() const;

  BBox translated(double tx, double ty) const { return {xmin + tx, ymin + ty, xmax + tx, ymax + ty}; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Signed left-minus-right displacement of an object, in pixels.
struct ObjectDisparity {
  double dx = 0.0;
  double dy = 0.0;

  friend bool operator==(const ObjectDisparity&, const ObjectDisparity&) = default;
};

/// One object seen by both cameras: the left box lives in the left-view frame,
/// the right box in the right-view frame.
struct StereoObject {
  std::string label;
  BBox left_box;
  BBox right_box;
  ObjectDisparity disparity;

  friend bool operator==(const StereoObject&, const StereoObject&) = default;
};

/// Object disparity between a left and a right box of the same object.
///
/// Each axis is resolved independently. If either box touches the low edge
/// (coordinate 0) the high edges are differenced; otherwise, if either box
/// touches the high edge (view_w / view_h) the low edges are differenced;
/// otherwise the box centers are. The branches are tested in exactly that
/// order, so a box spanning the full view takes the low-edge branch.
///
/// Throws InvalidInput for invalid boxes, non-positive view sizes or boxes
/// leaving the [0, view_w] x [0, view_h] rectangle.
ObjectDisparity object_disparity(const BBox& left, const BBox& right, double view_w, double view_h);

/// Intersection over union; 0 when the union has zero area.
double iou(const BBox& a, const BBox& b);

/// Clips a box to [0, w] x [0, h].
BBox clamp_to_view(const BBox& box, double w, double h);

}  // namespace odssd
