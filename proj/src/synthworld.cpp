#include "exdiff/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "exdiff/kernels.hpp"

namespace exdiff {

std::string layout_name(Layout layout) {
  switch (layout) {
    case Layout::kGridArc: return "grid_arc";
    case Layout::kGridColumn: return "grid_column";
    case Layout::kUniformRandom: return "uniform_random";
    case Layout::kExternal: return "external";
  }
  return "unknown";
}

Layout layout_from_name(const std::string& name) {
  if (name == "grid_arc" || name == "grid-arc") return Layout::kGridArc;
  if (name == "grid_column" || name == "grid-column")
    return Layout::kGridColumn;
  if (name == "uniform_random" || name == "uniform")
    return Layout::kUniformRandom;
  if (name == "external") return Layout::kExternal;
  throw std::invalid_argument("unknown layout: " + name);
}

namespace {

constexpr double kArcRadius = 0.36;
constexpr double kArcSpanRad = 2.0 * M_PI / 3.0;
constexpr double kArcW = 0.07, kArcH = 0.12;
constexpr double kColW = 0.16, kColH = 0.10;
constexpr double kUniW = 0.10, kUniH = 0.10;

void arc_slot(int k, int m, double& cx, double& cy) {
  double phi = (m == 1) ? 0.0 : (static_cast<double>(k) / (m - 1) - 0.5) * kArcSpanRad;
  cx = 0.5 + kArcRadius * std::sin(phi);
  cy = 0.28 + kArcRadius * (1.0 - std::cos(phi));
}

void check_capacity(Layout layout, int m) {
  if (m < 1) throw std::invalid_argument("objects_per_scene must be >= 1");
  int limit = 0;
  switch (layout) {
    case Layout::kGridArc: limit = 11; break;
    case Layout::kGridColumn: limit = 7; break;
    case Layout::kUniformRandom: limit = 24; break;
    case Layout::kExternal:
      throw std::invalid_argument("external layout cannot be generated");
  }
  if (m > limit)
    throw std::invalid_argument(layout_name(layout) + " fits at most " +
                                std::to_string(limit) +
                                " non-overlapping objects, got " +
                                std::to_string(m));
}

// Shared per-object tail: small center jitter, relative size jitter,
// visibility draw. Draw order is part of the format; keep it stable.
GtObject finish_object(double cx, double cy, double w0, double h0, int k,
                       const WorldConfig& cfg, Rng& rng) {
  GtObject obj;
  double j = cfg.jitter;
  obj.box.cx = cx + 0.5 * j * rng.normal();
  obj.box.cy = cy + 0.5 * j * rng.normal();
  obj.box.w = std::clamp(w0 * (1.0 + 2.0 * j * rng.normal()), kMinBoxDim, 1.0);
  obj.box.h = std::clamp(h0 * (1.0 + 2.0 * j * rng.normal()), kMinBoxDim, 1.0);
  obj.box.cx = std::clamp(obj.box.cx, 0.0, 1.0);
  obj.box.cy = std::clamp(obj.box.cy, 0.0, 1.0);
  obj.box.class_id = k % cfg.num_classes;
  obj.visibility = rng.uniform(0.3, 0.9);
  return obj;
}

Scene make_scene(int scene_id, const WorldConfig& cfg, Rng& rng) {
  Scene scene;
  scene.scene_id = scene_id;
  scene.width = cfg.width;
  scene.height = cfg.height;
  int m = cfg.objects_per_scene;
  double j = cfg.jitter;

  switch (cfg.layout) {
    case Layout::kGridArc: {
      double dx = rng.uniform(-2.0 * j, 2.0 * j);
      double dy = rng.uniform(-2.0 * j, 2.0 * j);
      for (int k = 0; k < m; ++k) {
        double cx, cy;
        arc_slot(k, m, cx, cy);
        scene.objects.push_back(
            finish_object(cx + dx, cy + dy, kArcW, kArcH, k, cfg, rng));
      }
      break;
    }
    case Layout::kGridColumn: {
      double sway = rng.uniform(-10.0 * j, 10.0 * j);
      double dy = rng.uniform(-2.0 * j, 2.0 * j);
      for (int k = 0; k < m; ++k) {
        double cy = (m == 1) ? 0.5 : 0.18 + 0.64 * k / (m - 1);
        scene.objects.push_back(
            finish_object(0.5 + sway, cy + dy, kColW, kColH, k, cfg, rng));
      }
      break;
    }
    case Layout::kUniformRandom: {
      for (int k = 0; k < m; ++k) {
        double cx = 0.0, cy = 0.0;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
          cx = rng.uniform(0.08, 0.92);
          cy = rng.uniform(0.08, 0.92);
          placed = true;
          for (const GtObject& other : scene.objects) {
            if (std::abs(cx - other.box.cx) < 1.1 * kUniW &&
                std::abs(cy - other.box.cy) < 1.1 * kUniH) {
              placed = false;
              break;
            }
          }
        }
        if (!placed)
          throw std::runtime_error(
              "uniform_random: could not place non-overlapping object");
        scene.objects.push_back(
            finish_object(cx, cy, kUniW, kUniH, k, cfg, rng));
      }
      break;
    }
    case Layout::kExternal:
      break;
  }
  return scene;
}

}  // namespace

Dataset generate_dataset(const WorldConfig& cfg) {
  if (cfg.num_scenes < 1)
    throw std::invalid_argument("num_scenes must be >= 1");
  if (cfg.num_classes < 1)
    throw std::invalid_argument("num_classes must be >= 1");
  if (cfg.jitter < 0.0) throw std::invalid_argument("jitter must be >= 0");
  check_capacity(cfg.layout, cfg.objects_per_scene);

  Dataset ds;
  ds.name = layout_name(cfg.layout);
  ds.layout = cfg.layout;
  ds.seed = cfg.seed;
  ds.jitter = cfg.jitter;
  ds.width = cfg.width;
  ds.height = cfg.height;
  ds.num_classes = cfg.num_classes;
  ds.scenes.reserve(cfg.num_scenes);
  for (int i = 0; i < cfg.num_scenes; ++i) {
    Rng rng(split_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    ds.scenes.push_back(make_scene(i, cfg, rng));
  }
  return ds;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace {

inline int nearest_object(const std::vector<GtObject>& objects, double cx,
                          double cy, double& dist_out) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < objects.size(); ++j) {
    double ddx = cx - objects[j].box.cx;
    double ddy = cy - objects[j].box.cy;
    double d = std::sqrt(ddx * ddx + ddy * ddy) / M_SQRT2;
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  dist_out = best_d;
  return best;
}

inline void predict_one(const OraclePredictIn& in, const OraclePredictOut& out,
                        std::size_t i) {
  const BBox& p = (*in.decoded)[i];
  double d = std::numeric_limits<double>::infinity();
  int j = nearest_object(*in.objects, p.cx, p.cy, d);
  (*out.nearest)[i] = j;
  (*out.dist)[i] = d;

  double* score_row = out.scores->data() + i * in.num_classes;
  for (int c = 0; c < in.num_classes; ++c) score_row[c] = 0.0;

  BBox predicted;
  if (j >= 0 && d <= in.rho) {
    const GtObject& gt = (*in.objects)[j];
    const double* eps = in.noise + 4 * i;
    predicted = gt.box;
    predicted.cx += in.eta * eps[0];
    predicted.cy += in.eta * eps[1];
    predicted.w += in.eta * eps[2];
    predicted.h += in.eta * eps[3];
    score_row[gt.box.class_id] =
        logistic(in.slope * ((*in.v_eff)[j] - d / in.rho));
  } else {
    predicted = p;
    if (j >= 0)
      score_row[(*in.objects)[j].box.class_id] =
          logistic(in.slope * (-d / in.rho));
  }
  ScaledBox sig = to_signal(predicted, in.signal_scale);
  (*out.x0_hat)[i] = sig.v;
}

}  // namespace

namespace serial {
void oracle_predict(const OraclePredictIn& in, const OraclePredictOut& out) {
  for (std::size_t i = 0; i < in.decoded->size(); ++i) predict_one(in, out, i);
}
}  // namespace serial

namespace omp {
void oracle_predict(const OraclePredictIn& in, const OraclePredictOut& out) {
  std::int64_t n = static_cast<std::int64_t>(in.decoded->size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    predict_one(in, out, static_cast<std::size_t>(i));
}
}  // namespace omp

OracleDenoiser::OracleDenoiser(const Scene& scene, const OracleParams& params,
                               int num_classes, double signal_scale,
                               double context_h, int t_max, std::uint64_t seed)
    : scene_(scene),
      params_(params),
      num_classes_(num_classes),
      signal_scale_(signal_scale),
      context_h_(context_h),
      t_max_(t_max),
      rng_(seed) {
  if (params.attraction_radius <= 0.0)
    throw std::invalid_argument("oracle: attraction_radius must be > 0");
  if (params.detector_noise < 0.0)
    throw std::invalid_argument("oracle: detector_noise must be >= 0");
  if (params.context_gain < 0.0)
    throw std::invalid_argument("oracle: context_gain must be >= 0");
  if (num_classes < 1)
    throw std::invalid_argument("oracle: num_classes must be >= 1");
}

std::vector<double> OracleDenoiser::effective_visibility() const {
  std::vector<double> v(scene_.objects.size());
  double boost = params_.context_gain * (1.0 - context_h_) * coverage_;
  for (std::size_t j = 0; j < v.size(); ++j)
    v[j] = std::min(1.0, scene_.objects[j].visibility + boost);
  return v;
}

DenoiseOutput OracleDenoiser::denoise(const ProposalSet& proposals, int t) {
  const std::size_t n = proposals.boxes.size();
  const std::size_t m = scene_.objects.size();
  // Noise is drawn for every slot on every call, so the stream position
  // never depends on which branch a proposal takes.
  std::vector<double> noise = rng_.normals(4 * n);

  std::vector<BBox> decoded;
  omp::decode(proposals.boxes, signal_scale_, decoded);

  if (first_call_) {
    first_call_ = false;
    covered_.assign(m, 0);
    coverage_ = 0.0;
    if (m > 0) {
      for (std::size_t i = 0; i < n; ++i) {
        if (proposals.boxes[i].origin.exemplar_index < 0) continue;
        double d;
        int j = nearest_object(scene_.objects, decoded[i].cx, decoded[i].cy, d);
        if (j >= 0) covered_[j] = 1;
      }
      int c = 0;
      for (char f : covered_) c += f;
      coverage_ = static_cast<double>(c) / static_cast<double>(m);
    }
  }

  std::vector<double> v_eff = effective_visibility();

  DenoiseOutput out;
  out.x0_hat.resize(n);
  out.scores.num_classes = num_classes_;
  out.scores.values.assign(n * num_classes_, 0.0);
  std::vector<int> nearest(n, -1);
  std::vector<double> dist(n, 0.0);

  OraclePredictIn in;
  in.decoded = &decoded;
  in.objects = &scene_.objects;
  in.v_eff = &v_eff;
  in.noise = noise.data();
  in.rho = params_.attraction_radius;
  in.eta = params_.detector_noise *
           (1.0 + static_cast<double>(t) / static_cast<double>(t_max_));
  in.slope = params_.base_score_slope;
  in.signal_scale = signal_scale_;
  in.num_classes = num_classes_;

  OraclePredictOut kout;
  kout.x0_hat = &out.x0_hat;
  kout.scores = &out.scores.values;
  kout.nearest = &nearest;
  kout.dist = &dist;
  omp::oracle_predict(in, kout);

  if (m > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      if (nearest[i] >= 0 && dist[i] <= params_.attraction_radius &&
          out.scores.max_score(i) > 0.5)
        covered_[nearest[i]] = 1;
    }
    int c = 0;
    for (char f : covered_) c += f;
    coverage_ = static_cast<double>(c) / static_cast<double>(m);
  }
  return out;
}

std::unique_ptr<Denoiser> OracleFactory::make(const Scene& scene,
                                              std::uint64_t seed) const {
  return std::make_unique<OracleDenoiser>(scene, params_, num_classes_,
                                          signal_scale_, context_h_, t_max_,
                                          seed);
}

}  // namespace exdiff
