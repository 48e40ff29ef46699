#pragma once

#include <array>

namespace exdiff {

// Axis-aligned box in fraction-of-image units: center, width, height all in
// [0,1]. Scores live alongside because detections carry one everywhere.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  int class_id = 0;
  double score = 0.0;
};

// Where a proposal came from. exemplar_index >= 0 means it was seeded from
// that exemplar and has not been renewed since; -1 means random.
struct Provenance {
  int exemplar_index = -1;
};

// A box in diffusion signal space: 4 unconstrained coordinates plus origin.
struct ScaledBox {
  std::array<double, 4> v{0.0, 0.0, 0.0, 0.0};
  Provenance origin;
};

inline constexpr double kMinBoxDim = 1e-4;
inline constexpr double kDefaultSignalScale = 2.0;

// Fraction space -> signal space: each coordinate mapped by (u - 0.5) * 2s.
ScaledBox to_signal(const BBox& b, double scale);

// Signal space -> fraction space, clamping centers to [0,1] and dims to
// [kMinBoxDim, 1]. class_id/score are not represented in signal space and
// come back zeroed.
BBox from_signal(const ScaledBox& s, double scale);

double iou(const BBox& a, const BBox& b);

// Corners in fraction units; used by eval and the wire format.
struct Corners {
  double x1, y1, x2, y2;
};
Corners corners(const BBox& b);
BBox from_corners(double x1, double y1, double x2, double y2);

}  // namespace exdiff
