#include "odssd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "odssd/error.hpp"

namespace odssd {

bool BBox::valid() const {
  return std::isfinite(xmin) && std::isfinite(ymin) && std::isfinite(xmax) && std::isfinite(ymax) &&
         xmin <= xmax && ymin <= ymax;
}

namespace {

std::string describe(const BBox& b) {
  std::ostringstream os;
  os << "(" << b.xmin << ", " << b.ymin << ", " << b.xmax << ", " << b.ymax << ")";
  return os.str();
}

void require_inside(const BBox& b, double w, double h, const char* which) {
  if (!b.valid()) {
    throw InvalidInput(std::string(which) + " box is not a valid box: " + describe(b));
  }
  if (b.xmin < 0.0 || b.ymin < 0.0 || b.xmax > w || b.ymax > h) {
    std::ostringstream os;
    os << which << " box " << describe(b) << " leaves the " << w << "x" << h << " view";
    throw InvalidInput(os.str());
  }
}

double axis_disparity(double lmin, double lmax, double rmin, double rmax, double extent) {
  if (lmin == 0.0 || rmin == 0.0) return lmax - rmax;
  if (lmax == extent || rmax == extent) return lmin - rmin;
  return (lmin + lmax) / 2.0 - (rmin + rmax) / 2.0;
}

}  // namespace

ObjectDisparity object_disparity(const BBox& left, const BBox& right, double view_w, double view_h) {
  if (!(std::isfinite(view_w) && std::isfinite(view_h)) || view_w <= 0.0 || view_h <= 0.0) {
    throw InvalidInput("view size must be positive and finite");
  }
  require_inside(left, view_w, view_h, "left");
  require_inside(right, view_w, view_h, "right");
  return {axis_disparity(left.xmin, left.xmax, right.xmin, right.xmax, view_w),
          axis_disparity(left.ymin, left.ymax, right.ymin, right.ymax, view_h)};
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) return 0.0;
  return inter / uni;
}

BBox clamp_to_view(const BBox& box, double w, double h) {
  return {std::clamp(box.xmin, 0.0, w), std::clamp(box.ymin, 0.0, h), std::clamp(box.xmax, 0.0, w),
          std::clamp(box.ymax, 0.0, h)};
}

}  // namespace odssd
