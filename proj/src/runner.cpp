#include "exdiff/runner.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <sstream>
#include <stdexcept>

#include "exdiff/kernels.hpp"

namespace exdiff {

namespace {

std::vector<BBox> all_gt_boxes(const Dataset& ds) {
  std::vector<BBox> boxes;
  for (const Scene& scene : ds.scenes)
    for (const GtObject& obj : scene.objects) boxes.push_back(obj.box);
  return boxes;
}

}  // namespace

std::vector<ExemplarRef> select_exemplars(const Scene& scene, int n_star,
                                          double sigma_px, Rng& rng) {
  int m = static_cast<int>(scene.objects.size());
  int k = std::min(n_star, m);
  std::vector<int> indices(m);
  for (int i = 0; i < m; ++i) indices[i] = i;
  std::vector<ExemplarRef> refs;
  refs.reserve(k);
  for (int i = 0; i < k; ++i) {
    int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(m - i)));
    std::swap(indices[i], indices[j]);
    ExemplarRef ref;
    ref.gt_index = indices[i];
    ref.box = scene.objects[indices[i]].box;
    if (sigma_px > 0.0)
      ref.box =
          perturb_exemplar(ref.box, sigma_px, scene.width, scene.height, rng);
    refs.push_back(ref);
  }
  return refs;
}

io::RunRecord run_dataset(const Dataset& ds, const ExperimentConfig& cfg) {
  validate(cfg.sampler);
  if (cfg.exemplars_per_scene < 0)
    throw std::invalid_argument("exemplars_per_scene must be >= 0");
  auto start = std::chrono::steady_clock::now();

  Schedule sched = build_schedule(cfg.sampler.schedule_kind, cfg.sampler.t_start);
  double entropy_h = spatial_entropy(all_gt_boxes(ds), 16);
  OracleFactory factory(cfg.oracle, ds.num_classes, cfg.sampler.signal_scale,
                        entropy_h, cfg.sampler.t_start);

  io::RunRecord record;
  record.dataset_name = ds.name;
  record.layout = layout_name(ds.layout);
  record.sampler = cfg.sampler;
  record.oracle = cfg.oracle;
  record.exemplars_per_scene = cfg.exemplars_per_scene;
  record.sigma_px = cfg.sigma_px;
  record.exemplar_seed = cfg.exemplar_seed;
  record.scenes.resize(ds.scenes.size());

  const int num_scenes = static_cast<int>(ds.scenes.size());
  std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(dynamic) num_threads(cfg.jobs)
  for (int i = 0; i < num_scenes; ++i) {
    try {
      const Scene& scene = ds.scenes[i];
      std::uint64_t sid = static_cast<std::uint64_t>(scene.scene_id);
      Rng ex_rng(split_seed(cfg.exemplar_seed, sid));
      std::vector<ExemplarRef> refs =
          select_exemplars(scene, cfg.exemplars_per_scene, cfg.sigma_px, ex_rng);
      std::vector<BBox> exemplar_boxes;
      for (const ExemplarRef& r : refs) exemplar_boxes.push_back(r.box);

      SamplerConfig scene_cfg = cfg.sampler;
      scene_cfg.seed = split_seed(cfg.sampler.seed, sid);
      SampleResult result =
          run_single(scene, exemplar_boxes, factory, scene_cfg, sched);

      io::SceneRun& out = record.scenes[i];
      out.scene_id = scene.scene_id;
      out.exemplars = std::move(refs);
      out.detections = std::move(result.detections);
      out.origins.reserve(result.origins.size());
      for (const Provenance& p : result.origins)
        out.origins.push_back(p.exemplar_index);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  record.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return record;
}

EvalResult evaluate_run(const Dataset& ds, const io::RunRecord& record,
                        const EvalConfig& eval_cfg) {
  std::map<int, const Scene*> by_id;
  for (const Scene& scene : ds.scenes) by_id[scene.scene_id] = &scene;

  std::vector<std::vector<BBox>> gts, preds;
  for (const io::SceneRun& sr : record.scenes) {
    auto it = by_id.find(sr.scene_id);
    if (it == by_id.end())
      throw std::invalid_argument("run references unknown scene " +
                                  std::to_string(sr.scene_id));
    std::vector<BBox> scene_gt;
    for (const GtObject& obj : it->second->objects)
      scene_gt.push_back(obj.box);
    auto [g, p] = apply_exclusion(scene_gt, sr.detections, sr.exemplars,
                                  eval_cfg.exclusion_iou);
    gts.push_back(std::move(g));
    preds.push_back(std::move(p));
  }
  return evaluate(gts, preds, eval_cfg);
}

void attach_metrics(const Dataset& ds, io::RunRecord& record) {
  EvalResult res = evaluate_run(ds, record);
  record.metrics.present = true;
  record.metrics.ap = res.ap;
  record.metrics.ap50 = res.ap50;
  record.metrics.ar = res.ar;
  record.metrics.entropy_h = spatial_entropy(all_gt_boxes(ds), 16);
}

std::vector<SweepRow> sweep(const Dataset& ds, const ExperimentConfig& base,
                            const std::string& param,
                            const std::vector<double>& values) {
  std::vector<SweepRow> rows;
  for (double v : values) {
    ExperimentConfig cfg = base;
    if (param == "n_star")
      cfg.exemplars_per_scene = static_cast<int>(v);
    else if (param == "copies")
      cfg.sampler.copies = static_cast<int>(v);
    else if (param == "tau")
      cfg.sampler.tau = static_cast<int>(v);
    else if (param == "sigma_px")
      cfg.sigma_px = v;
    else
      throw std::invalid_argument("unknown sweep parameter: " + param);

    io::RunRecord record = run_dataset(ds, cfg);
    EvalResult res = evaluate_run(ds, record);
    SweepRow row;
    row.dataset = ds.name;
    row.seed = cfg.sampler.seed;
    row.exemplars = cfg.exemplars_per_scene;
    row.copies = cfg.sampler.copies;
    row.tau = cfg.sampler.tau;
    row.sigma_px = cfg.sigma_px;
    row.ap = res.ap;
    row.ap50 = res.ap50;
    row.ar = res.ar;
    rows.push_back(row);
  }
  return rows;
}

std::string csv_line(const SweepRow& row) {
  std::ostringstream out;
  out << row.dataset << ',' << row.seed << ',' << row.exemplars << ','
      << row.copies << ',' << row.tau << ',' << io::format_double(row.sigma_px)
      << ',' << io::format_double(row.ap) << ',' << io::format_double(row.ap50)
      << ',' << io::format_double(row.ar);
  return out.str();
}

std::string csv_table(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << io::kCsvHeader << '\n';
  for (const SweepRow& row : rows) out << csv_line(row) << '\n';
  return out.str();
}

CalibrationOutcome calibrate_dataset(const Dataset& ds,
                                     const ExperimentConfig& cfg, int ensemble,
                                     double alpha) {
  if (cfg.exemplars_per_scene < 1)
    throw std::invalid_argument("calibration requires exemplars_per_scene >= 1");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("alpha must lie in (0, 1)");
  validate(cfg.sampler);

  Schedule sched = build_schedule(cfg.sampler.schedule_kind, cfg.sampler.t_start);
  double entropy_h = spatial_entropy(all_gt_boxes(ds), 16);
  OracleFactory factory(cfg.oracle, ds.num_classes, cfg.sampler.signal_scale,
                        entropy_h, cfg.sampler.t_start);

  // Pass 1: per-scene ensembles feed one dataset-wide covariance pool; the
  // held-out clusters are kept so coverage can be counted against it. A
  // single scene's ~M samples would make chi-square regions under-cover.
  CalibrationOutcome outcome;
  CornerPool pool;
  std::vector<std::vector<std::vector<BBox>>> scene_clusters;
  for (const Scene& scene : ds.scenes) {
    std::uint64_t sid = static_cast<std::uint64_t>(scene.scene_id);
    Rng ex_rng(split_seed(cfg.exemplar_seed, sid));
    std::vector<ExemplarRef> refs =
        select_exemplars(scene, cfg.exemplars_per_scene, cfg.sigma_px, ex_rng);
    if (refs.empty()) {
      ++outcome.scenes_skipped;
      continue;
    }
    std::vector<BBox> exemplar_boxes;
    for (const ExemplarRef& r : refs) exemplar_boxes.push_back(r.box);

    std::vector<SampleResult> members =
        run_ensemble(scene, exemplar_boxes, factory, cfg.sampler, sched,
                     ensemble, split_seed(cfg.sampler.seed, sid));

    pool.merge(pool_exemplar_corners(members, refs));

    std::vector<std::vector<BBox>> clusters;
    for (std::size_t j = 0; j < scene.objects.size(); ++j) {
      bool is_exemplar = false;
      for (const ExemplarRef& r : refs)
        if (r.gt_index == static_cast<int>(j)) is_exemplar = true;
      if (is_exemplar) continue;
      try {
        clusters.push_back(match_to_exemplar(members, scene.objects[j].box));
      } catch (const InsufficientSamples&) {
      }
    }
    scene_clusters.push_back(std::move(clusters));

    try {
      std::vector<BBox> matched = match_to_exemplar(members, refs[0].box);
      CornerStats stats = fit_corners(matched);
      if (!stats.degenerate) {
        outcome.ellipses.push_back(
            {scene.scene_id,
             {confidence_ellipse(stats.mean_ul, stats.cov_ul, alpha),
              confidence_ellipse(stats.mean_br, stats.cov_br, alpha)}});
      }
    } catch (const InsufficientSamples&) {
    }
  }

  if (!pool.usable())
    throw std::runtime_error("calibration: no exemplar cluster was usable");

  // Pass 2: per-scene coverage against the pooled regions.
  std::array<double, 4> cov_ul = pool.cov_ul();
  std::array<double, 4> cov_br = pool.cov_br();
  for (const auto& clusters : scene_clusters) {
    SceneCalibration cal =
        count_cluster_coverage(clusters, cov_ul, cov_br, alpha);
    if (!cal.valid) {
      ++outcome.scenes_skipped;
      continue;
    }
    outcome.per_scene_coverage.push_back(cal.coverage());
  }

  if (outcome.per_scene_coverage.empty())
    throw std::runtime_error("calibration: every scene was skipped");
  outcome.median_coverage = median(outcome.per_scene_coverage);
  outcome.error_points = calibration_error_points(alpha, outcome.median_coverage);
  return outcome;
}

}  // namespace exdiff
