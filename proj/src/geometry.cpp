#include "exdiff/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace exdiff {

ScaledBox to_signal(const BBox& b, double scale) {
  ScaledBox s;
  s.v[0] = (b.cx - 0.5) * 2.0 * scale;
  s.v[1] = (b.cy - 0.5) * 2.0 * scale;
  s.v[2] = (b.w - 0.5) * 2.0 * scale;
  s.v[3] = (b.h - 0.5) * 2.0 * scale;
  return s;
}

BBox from_signal(const ScaledBox& s, double scale) {
  auto unscale = [scale](double v) { return v / (2.0 * scale) + 0.5; };
  BBox b;
  b.cx = std::clamp(unscale(s.v[0]), 0.0, 1.0);
  b.cy = std::clamp(unscale(s.v[1]), 0.0, 1.0);
  b.w = std::clamp(unscale(s.v[2]), kMinBoxDim, 1.0);
  b.h = std::clamp(unscale(s.v[3]), kMinBoxDim, 1.0);
  return b;
}

Corners corners(const BBox& b) {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0,
          b.cy + b.h / 2.0};
}

BBox from_corners(double x1, double y1, double x2, double y2) {
  BBox b;
  b.cx = (x1 + x2) / 2.0;
  b.cy = (y1 + y2) / 2.0;
  b.w = x2 - x1;
  b.h = y2 - y1;
  return b;
}

double iou(const BBox& a, const BBox& b) {
  Corners ca = corners(a);
  Corners cb = corners(b);
  double iw = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  double ih = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  double inter = iw * ih;
  double uni = a.w * a.h + b.w * b.h - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

}  // namespace exdiff
