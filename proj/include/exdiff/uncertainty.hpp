#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "exdiff/evalkit.hpp"
#include "exdiff/sampler.hpp"
#include "exdiff/synthworld.hpp"

namespace exdiff {

struct InsufficientSamples : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// M independent sampler runs with seeds base_seed + i, kept per member.
// Members are computed in parallel slots, so aggregation never depends on
// completion order.
std::vector<SampleResult> run_ensemble(const Scene& scene,
                                       const std::vector<BBox>& exemplars,
                                       const DenoiserFactory& factory,
                                       const SamplerConfig& cfg,
                                       const Schedule& sched, int ensemble,
                                       std::uint64_t base_seed);

// Per member, the highest-score detection with IoU >= iou_thr against the
// anchor box; members with none contribute nothing. Throws
// InsufficientSamples when fewer than two members match.
std::vector<BBox> match_to_exemplar(const std::vector<SampleResult>& members,
                                    const BBox& anchor, double iou_thr = 0.5);

// Per-corner (upper-left, bottom-right) sample means and unbiased 2x2
// covariances of the matched boxes. degenerate flags a covariance whose
// trace is numerically zero (e.g. identical members).
struct CornerStats {
  std::array<double, 2> mean_ul{0.0, 0.0};
  std::array<double, 2> mean_br{0.0, 0.0};
  std::array<double, 4> cov_ul{0.0, 0.0, 0.0, 0.0};  // row-major
  std::array<double, 4> cov_br{0.0, 0.0, 0.0, 0.0};
  int count = 0;
  bool degenerate = false;
};

CornerStats fit_corners(const std::vector<BBox>& matched);

// sqrt((x-mu)^T cov^-1 (x-mu)); a ridge of 1e-9 * trace is added to the
// diagonal when the matrix is too close to singular to invert.
double mahalanobis(const std::array<double, 2>& x,
                   const std::array<double, 2>& mu,
                   const std::array<double, 4>& cov);

// Regularized lower incomplete gamma P(a, x); series for x < a + 1,
// continued fraction otherwise.
double gamma_p(double a, double x);
double chi2_cdf(double x, int dof);
// Inverse chi-square CDF by bisection on gamma_p to 1e-8.
double chi2_quantile(double alpha, int dof);

struct Ellipse {
  std::array<double, 2> center{0.0, 0.0};
  double a = 0.0;  // semi-axis along angle_rad
  double b = 0.0;
  double angle_rad = 0.0;
  double alpha = 0.0;
};

// Level set (x-mu)^T cov^-1 (x-mu) = chi2_quantile(alpha, 2); semi-axes are
// sqrt(eigenvalue * quantile).
Ellipse confidence_ellipse(const std::array<double, 2>& mu,
                           const std::array<double, 4>& cov, double alpha);

// (count - 1)-weighted sums of exemplar-cluster corner covariances. Pools
// merge across scenes so the fitted covariance rests on every exemplar
// cluster in a dataset, not the handful of members one scene provides.
// Zero-variance clusters stay in the pool (they add zero spread), which
// keeps a noise-free detector's regions collapsed instead of undefined.
struct CornerPool {
  std::array<double, 4> ul{0.0, 0.0, 0.0, 0.0};
  std::array<double, 4> br{0.0, 0.0, 0.0, 0.0};
  double weight = 0.0;
  void merge(const CornerPool& other);
  bool usable() const { return weight > 0.0; }
  std::array<double, 4> cov_ul() const;
  std::array<double, 4> cov_br() const;
};

CornerPool pool_exemplar_corners(const std::vector<SampleResult>& members,
                                 const std::vector<ExemplarRef>& exemplars,
                                 double iou_thr = 0.5);

struct SceneCalibration {
  int covered = 0;
  int total = 0;
  bool valid = false;  // false when no region or no cluster was available
  double coverage() const {
    return total > 0 ? static_cast<double>(covered) / total : 0.0;
  }
};

// Coverage counting against externally fitted corner covariances: the
// regions are translated to each cluster's own corner means, and a member
// prediction counts as covered when both of its corners fall inside the
// corresponding regions at level alpha. Zero-trace covariances count a
// corner as covered only when it sits exactly on the cluster mean.
SceneCalibration count_cluster_coverage(
    const std::vector<std::vector<BBox>>& clusters,
    const std::array<double, 4>& cov_ul, const std::array<double, 4>& cov_br,
    double alpha);

// As above, with clusters built by matching members to each held-out GT box.
SceneCalibration calibrate_scene(const std::vector<SampleResult>& members,
                                 const std::array<double, 4>& cov_ul,
                                 const std::array<double, 4>& cov_br,
                                 const std::vector<BBox>& heldout_gt,
                                 double alpha, double iou_thr = 0.5);

// Single-scene convenience: fit the covariances from this scene's own
// exemplar clusters, then count as above.
SceneCalibration calibrate_scene(const std::vector<SampleResult>& members,
                                 const std::vector<ExemplarRef>& exemplars,
                                 const std::vector<BBox>& heldout_gt,
                                 double alpha, double iou_thr = 0.5);

double median(std::vector<double> values);

// Whole percentage points between nominal and observed coverage.
double calibration_error_points(double alpha, double observed_coverage);

}  // namespace exdiff
