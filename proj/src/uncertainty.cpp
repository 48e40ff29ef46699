#include "exdiff/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace exdiff {

std::vector<SampleResult> run_ensemble(const Scene& scene,
                                       const std::vector<BBox>& exemplars,
                                       const DenoiserFactory& factory,
                                       const SamplerConfig& cfg,
                                       const Schedule& sched, int ensemble,
                                       std::uint64_t base_seed) {
  if (ensemble < 2)
    throw std::invalid_argument("run_ensemble: ensemble must be >= 2");
  std::vector<SampleResult> members(ensemble);
  std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < ensemble; ++i) {
    try {
      SamplerConfig member_cfg = cfg;
      member_cfg.seed = base_seed + static_cast<std::uint64_t>(i);
      members[i] = run_single(scene, exemplars, factory, member_cfg, sched);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return members;
}

std::vector<BBox> match_to_exemplar(const std::vector<SampleResult>& members,
                                    const BBox& anchor, double iou_thr) {
  std::vector<BBox> matched;
  for (const SampleResult& member : members) {
    int best = -1;
    double best_score = -1.0;
    for (std::size_t i = 0; i < member.detections.size(); ++i) {
      const BBox& det = member.detections[i];
      if (iou(det, anchor) < iou_thr) continue;
      if (det.score > best_score) {
        best_score = det.score;
        best = static_cast<int>(i);
      }
    }
    if (best >= 0) matched.push_back(member.detections[best]);
  }
  if (matched.size() < 2)
    throw InsufficientSamples(
        "match_to_exemplar: fewer than 2 members matched the anchor");
  return matched;
}

namespace {

void accumulate_stats(const std::vector<std::array<double, 2>>& pts,
                      std::array<double, 2>& mean, std::array<double, 4>& cov) {
  const double n = static_cast<double>(pts.size());
  mean = {0.0, 0.0};
  for (const auto& p : pts) {
    mean[0] += p[0];
    mean[1] += p[1];
  }
  mean[0] /= n;
  mean[1] /= n;
  cov = {0.0, 0.0, 0.0, 0.0};
  for (const auto& p : pts) {
    double dx = p[0] - mean[0];
    double dy = p[1] - mean[1];
    cov[0] += dx * dx;
    cov[1] += dx * dy;
    cov[3] += dy * dy;
  }
  cov[0] /= n - 1.0;
  cov[1] /= n - 1.0;
  cov[3] /= n - 1.0;
  cov[2] = cov[1];
}

}  // namespace

CornerStats fit_corners(const std::vector<BBox>& matched) {
  if (matched.size() < 2)
    throw InsufficientSamples("fit_corners: need at least 2 samples");
  std::vector<std::array<double, 2>> ul, br;
  ul.reserve(matched.size());
  br.reserve(matched.size());
  for (const BBox& b : matched) {
    Corners c = corners(b);
    ul.push_back({c.x1, c.y1});
    br.push_back({c.x2, c.y2});
  }
  CornerStats stats;
  stats.count = static_cast<int>(matched.size());
  accumulate_stats(ul, stats.mean_ul, stats.cov_ul);
  accumulate_stats(br, stats.mean_br, stats.cov_br);
  double tr_ul = stats.cov_ul[0] + stats.cov_ul[3];
  double tr_br = stats.cov_br[0] + stats.cov_br[3];
  stats.degenerate = (tr_ul < 1e-15) || (tr_br < 1e-15);
  return stats;
}

double mahalanobis(const std::array<double, 2>& x,
                   const std::array<double, 2>& mu,
                   const std::array<double, 4>& cov) {
  double a = cov[0], b = cov[1], b2 = cov[2], c = cov[3];
  double scale = std::max({std::abs(a), std::abs(b), std::abs(c), 1e-300});
  if (std::abs(b - b2) > 1e-9 * scale)
    throw std::invalid_argument("mahalanobis: covariance not symmetric");
  double trace = a + c;
  double det = a * c - b * b;
  if (det <= 1e-12 * trace * trace || trace <= 0.0) {
    double ridge = 1e-9 * trace;
    a += ridge;
    c += ridge;
    det = a * c - b * b;
    if (det <= 0.0 || trace <= 0.0)
      throw std::invalid_argument(
          "mahalanobis: covariance not positive definite");
  }
  double dx = x[0] - mu[0];
  double dy = x[1] - mu[1];
  double quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
  return std::sqrt(std::max(0.0, quad));
}

namespace {

// Cephes-style regularized incomplete gamma pieces.
double igam_series(double a, double x) {
  double ax = a * std::log(x) - x - std::lgamma(a);
  if (ax < -709.0) return 0.0;
  ax = std::exp(ax);
  double r = a;
  double c = 1.0;
  double ans = 1.0;
  do {
    r += 1.0;
    c *= x / r;
    ans += c;
  } while (c / ans > 1e-16);
  return ans * ax / a;
}

double igamc_cf(double a, double x) {
  double ax = a * std::log(x) - x - std::lgamma(a);
  if (ax < -709.0) return 0.0;
  ax = std::exp(ax);
  // Lentz continued fraction.
  double big = 4.503599627370496e15;
  double biginv = 2.22044604925031308085e-16;
  double y = 1.0 - a;
  double z = x + y + 1.0;
  double c = 0.0;
  double pkm2 = 1.0, qkm2 = x;
  double pkm1 = x + 1.0, qkm1 = z * x;
  double ans = pkm1 / qkm1;
  double t;
  do {
    c += 1.0;
    y += 1.0;
    z += 2.0;
    double yc = y * c;
    double pk = pkm1 * z - pkm2 * yc;
    double qk = qkm1 * z - qkm2 * yc;
    if (qk != 0.0) {
      double r = pk / qk;
      t = std::abs((ans - r) / r);
      ans = r;
    } else {
      t = 1.0;
    }
    pkm2 = pkm1;
    pkm1 = pk;
    qkm2 = qkm1;
    qkm1 = qk;
    if (std::abs(pk) > big) {
      pkm2 *= biginv;
      pkm1 *= biginv;
      qkm2 *= biginv;
      qkm1 *= biginv;
    }
  } while (t > 1e-16);
  return ans * ax;
}

}  // namespace

double gamma_p(double a, double x) {
  if (a <= 0.0) throw std::invalid_argument("gamma_p: a must be > 0");
  if (x < 0.0) throw std::invalid_argument("gamma_p: x must be >= 0");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return igam_series(a, x);
  return 1.0 - igamc_cf(a, x);
}

double chi2_cdf(double x, int dof) {
  if (dof < 1) throw std::invalid_argument("chi2_cdf: dof must be >= 1");
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * dof, 0.5 * x);
}

double chi2_quantile(double alpha, int dof) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("chi2_quantile: alpha must be in (0, 1)");
  if (dof < 1) throw std::invalid_argument("chi2_quantile: dof must be >= 1");
  double lo = 0.0;
  double hi = 1.0;
  while (chi2_cdf(hi, dof) < alpha) {
    hi *= 2.0;
    if (hi > 1e12)
      throw std::runtime_error("chi2_quantile: bracket expansion failed");
  }
  while (hi - lo > 1e-8) {
    double mid = 0.5 * (lo + hi);
    if (chi2_cdf(mid, dof) < alpha)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

Ellipse confidence_ellipse(const std::array<double, 2>& mu,
                           const std::array<double, 4>& cov, double alpha) {
  double a = cov[0], b = cov[1], c = cov[3];
  double mean = 0.5 * (a + c);
  double half = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  double l1 = mean + half;  // major
  double l2 = std::max(0.0, mean - half);
  double q = chi2_quantile(alpha, 2);
  Ellipse e;
  e.center = mu;
  e.a = std::sqrt(std::max(0.0, l1) * q);
  e.b = std::sqrt(l2 * q);
  if (std::abs(b) < 1e-300 && a >= c)
    e.angle_rad = 0.0;
  else if (std::abs(b) < 1e-300)
    e.angle_rad = M_PI / 2.0;
  else
    e.angle_rad = std::atan2(l1 - a, b);
  e.alpha = alpha;
  return e;
}

void CornerPool::merge(const CornerPool& other) {
  for (int i = 0; i < 4; ++i) {
    ul[i] += other.ul[i];
    br[i] += other.br[i];
  }
  weight += other.weight;
}

std::array<double, 4> CornerPool::cov_ul() const {
  std::array<double, 4> out{0, 0, 0, 0};
  if (weight > 0.0)
    for (int i = 0; i < 4; ++i) out[i] = ul[i] / weight;
  return out;
}

std::array<double, 4> CornerPool::cov_br() const {
  std::array<double, 4> out{0, 0, 0, 0};
  if (weight > 0.0)
    for (int i = 0; i < 4; ++i) out[i] = br[i] / weight;
  return out;
}

CornerPool pool_exemplar_corners(const std::vector<SampleResult>& members,
                                 const std::vector<ExemplarRef>& exemplars,
                                 double iou_thr) {
  CornerPool pool;
  for (const ExemplarRef& ex : exemplars) {
    std::vector<BBox> matched;
    try {
      matched = match_to_exemplar(members, ex.box, iou_thr);
    } catch (const InsufficientSamples&) {
      continue;
    }
    CornerStats stats = fit_corners(matched);
    double w = static_cast<double>(stats.count - 1);
    for (int i = 0; i < 4; ++i) {
      pool.ul[i] += w * stats.cov_ul[i];
      pool.br[i] += w * stats.cov_br[i];
    }
    pool.weight += w;
  }
  return pool;
}

namespace {

bool corner_inside(const std::array<double, 2>& pt,
                   const std::array<double, 2>& mean,
                   const std::array<double, 4>& cov, double q) {
  if (cov[0] + cov[3] <= 1e-15)
    return std::abs(pt[0] - mean[0]) <= 1e-12 &&
           std::abs(pt[1] - mean[1]) <= 1e-12;
  double d = mahalanobis(pt, mean, cov);
  return d * d <= q;
}

}  // namespace

SceneCalibration count_cluster_coverage(
    const std::vector<std::vector<BBox>>& clusters,
    const std::array<double, 4>& cov_ul, const std::array<double, 4>& cov_br,
    double alpha) {
  SceneCalibration result;
  double q = chi2_quantile(alpha, 2);
  for (const std::vector<BBox>& cluster : clusters) {
    if (cluster.size() < 2) continue;
    std::vector<std::array<double, 2>> ul, br;
    for (const BBox& b : cluster) {
      Corners c = corners(b);
      ul.push_back({c.x1, c.y1});
      br.push_back({c.x2, c.y2});
    }
    std::array<double, 2> mean_ul{0, 0}, mean_br{0, 0};
    for (std::size_t i = 0; i < cluster.size(); ++i) {
      mean_ul[0] += ul[i][0];
      mean_ul[1] += ul[i][1];
      mean_br[0] += br[i][0];
      mean_br[1] += br[i][1];
    }
    double n = static_cast<double>(cluster.size());
    mean_ul[0] /= n;
    mean_ul[1] /= n;
    mean_br[0] /= n;
    mean_br[1] /= n;
    for (std::size_t i = 0; i < cluster.size(); ++i) {
      bool inside = corner_inside(ul[i], mean_ul, cov_ul, q) &&
                    corner_inside(br[i], mean_br, cov_br, q);
      result.covered += inside ? 1 : 0;
      result.total += 1;
    }
  }
  result.valid = result.total > 0;
  return result;
}

SceneCalibration calibrate_scene(const std::vector<SampleResult>& members,
                                 const std::array<double, 4>& cov_ul,
                                 const std::array<double, 4>& cov_br,
                                 const std::vector<BBox>& heldout_gt,
                                 double alpha, double iou_thr) {
  std::vector<std::vector<BBox>> clusters;
  for (const BBox& gt : heldout_gt) {
    try {
      clusters.push_back(match_to_exemplar(members, gt, iou_thr));
    } catch (const InsufficientSamples&) {
    }
  }
  return count_cluster_coverage(clusters, cov_ul, cov_br, alpha);
}

SceneCalibration calibrate_scene(const std::vector<SampleResult>& members,
                                 const std::vector<ExemplarRef>& exemplars,
                                 const std::vector<BBox>& heldout_gt,
                                 double alpha, double iou_thr) {
  CornerPool pool = pool_exemplar_corners(members, exemplars, iou_thr);
  if (!pool.usable()) return SceneCalibration{};  // no region: scene skipped
  return calibrate_scene(members, pool.cov_ul(), pool.cov_br(), heldout_gt,
                         alpha, iou_thr);
}

double median(std::vector<double> values) {
  if (values.empty())
    throw std::invalid_argument("median: empty input");
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double calibration_error_points(double alpha, double observed_coverage) {
  return std::round(std::abs(alpha - observed_coverage) * 100.0);
}

}  // namespace exdiff
