#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "exdiff/runner.hpp"

using namespace exdiff;

namespace {

Dataset small_arc(int scenes, std::uint64_t seed = 42) {
  WorldConfig cfg;
  cfg.layout = Layout::kGridArc;
  cfg.num_scenes = scenes;
  cfg.objects_per_scene = 4;
  cfg.seed = seed;
  return generate_dataset(cfg);
}

}  // namespace

TEST_CASE("select_exemplars is deterministic and without replacement") {
  Dataset ds = small_arc(1);
  const Scene& scene = ds.scenes[0];

  Rng a(123), b(123);
  auto r1 = select_exemplars(scene, 3, 0.0, a);
  auto r2 = select_exemplars(scene, 3, 0.0, b);
  REQUIRE(r1.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r1[i].gt_index == r2[i].gt_index);
    CHECK(r1[i].box.cx == r2[i].box.cx);
  }
  CHECK(r1[0].gt_index != r1[1].gt_index);
  CHECK(r1[0].gt_index != r1[2].gt_index);
  CHECK(r1[1].gt_index != r1[2].gt_index);
}

TEST_CASE("select_exemplars clamps to the object count") {
  Dataset ds = small_arc(1);
  Rng rng(5);
  auto refs = select_exemplars(ds.scenes[0], 10, 0.0, rng);
  CHECK(refs.size() == ds.scenes[0].objects.size());
}

TEST_CASE("zero sigma copies ground truth boxes exactly") {
  Dataset ds = small_arc(1);
  Rng rng(7);
  auto refs = select_exemplars(ds.scenes[0], 2, 0.0, rng);
  for (const auto& r : refs) {
    const BBox& gt = ds.scenes[0].objects[r.gt_index].box;
    CHECK(r.box.cx == gt.cx);
    CHECK(r.box.cy == gt.cy);
    CHECK(r.box.w == gt.w);
    CHECK(r.box.h == gt.h);
  }
}

TEST_CASE("selection draw order is indices then perturbation per pick") {
  Dataset ds = small_arc(1);
  const Scene& scene = ds.scenes[0];
  const int m = static_cast<int>(scene.objects.size());
  const double sigma = 2.0;

  Rng got_rng(99);
  auto got = select_exemplars(scene, 3, sigma, got_rng);

  // Independent replay of the stated contract.
  Rng want_rng(99);
  std::vector<int> idx(m);
  for (int i = 0; i < m; ++i) idx[i] = i;
  for (int i = 0; i < 3; ++i) {
    int j = i + static_cast<int>(want_rng.below(m - i));
    std::swap(idx[i], idx[j]);
    BBox want = perturb_exemplar(scene.objects[idx[i]].box, sigma,
                                 scene.width, scene.height, want_rng);
    CHECK(got[i].gt_index == idx[i]);
    CHECK(got[i].box.cx == want.cx);
    CHECK(got[i].box.cy == want.cy);
    CHECK(got[i].box.w == want.w);
    CHECK(got[i].box.h == want.h);
  }
}

TEST_CASE("run_dataset is identical across job counts and repeats") {
  Dataset ds = small_arc(10);
  ExperimentConfig cfg;
  cfg.sampler.seed = 3;
  cfg.sampler.n = 100;
  cfg.sampler.copies = 60;
  cfg.exemplars_per_scene = 1;
  cfg.exemplar_seed = 11;

  cfg.jobs = 1;
  io::RunRecord serial_run = run_dataset(ds, cfg);
  io::RunRecord repeat = run_dataset(ds, cfg);
  cfg.jobs = 4;
  io::RunRecord parallel_run = run_dataset(ds, cfg);

  CHECK(io::canonical_run_json(serial_run) == io::canonical_run_json(repeat));
  CHECK(io::canonical_run_json(serial_run) ==
        io::canonical_run_json(parallel_run));
}

TEST_CASE("run_dataset records scenes, exemplars, and provenance") {
  Dataset ds = small_arc(5);
  ExperimentConfig cfg;
  cfg.sampler.seed = 9;
  cfg.sampler.n = 80;
  cfg.sampler.copies = 40;
  cfg.exemplars_per_scene = 2;
  cfg.exemplar_seed = 21;
  io::RunRecord rec = run_dataset(ds, cfg);

  CHECK(rec.dataset_name == ds.name);
  CHECK(rec.layout == "grid_arc");
  CHECK(rec.exemplars_per_scene == 2);
  REQUIRE(rec.scenes.size() == 5);
  for (const io::SceneRun& sr : rec.scenes) {
    CHECK(sr.exemplars.size() == 2);
    CHECK(sr.origins.size() == sr.detections.size());
    for (int o : sr.origins) {
      CHECK(o >= -1);
      CHECK(o < 2);
    }
  }
  CHECK_FALSE(rec.metrics.present);

  attach_metrics(ds, rec);
  CHECK(rec.metrics.present);
  CHECK(rec.metrics.entropy_h > 0.0);
  CHECK(rec.metrics.entropy_h < 0.75);
}

TEST_CASE("run_dataset with no exemplars leaves the blocks empty") {
  Dataset ds = small_arc(3);
  ExperimentConfig cfg;
  cfg.sampler.n = 80;
  cfg.sampler.copies = 40;
  cfg.exemplars_per_scene = 0;
  io::RunRecord rec = run_dataset(ds, cfg);
  for (const io::SceneRun& sr : rec.scenes) {
    CHECK(sr.exemplars.empty());
    for (int o : sr.origins) CHECK(o == -1);
  }
  cfg.exemplars_per_scene = -1;
  CHECK_THROWS_AS(run_dataset(ds, cfg), std::invalid_argument);
}

TEST_CASE("evaluate_run applies the exclusion protocol") {
  // One scene, two objects; the run re-detects both, one as an exemplar.
  Dataset ds;
  ds.name = "manual";
  ds.layout = Layout::kExternal;
  ds.num_classes = 1;
  Scene scene;
  scene.scene_id = 0;
  GtObject o1, o2;
  o1.box = BBox{0.3, 0.3, 0.1, 0.1, 0, 0.0};
  o2.box = BBox{0.7, 0.7, 0.1, 0.1, 0, 0.0};
  scene.objects = {o1, o2};
  ds.scenes.push_back(scene);

  io::RunRecord rec;
  rec.dataset_name = "manual";
  io::SceneRun sr;
  sr.scene_id = 0;
  ExemplarRef ex;
  ex.gt_index = 0;
  ex.box = o1.box;
  sr.exemplars.push_back(ex);
  BBox d1 = o1.box;
  d1.score = 0.95;
  BBox d2 = o2.box;
  d2.score = 0.9;
  sr.detections = {d1, d2};
  sr.origins = {0, -1};
  rec.scenes.push_back(sr);

  EvalResult res = evaluate_run(ds, rec);
  // The exemplar object and its re-detection are both gone; what remains is
  // a perfect single-object result.
  CHECK(res.ap == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.ar == doctest::Approx(1.0).epsilon(1e-12));

  io::RunRecord bad = rec;
  bad.scenes[0].scene_id = 77;
  CHECK_THROWS_AS(evaluate_run(ds, bad), std::invalid_argument);
}

TEST_CASE("sweep emits one row per value with exemplar gains on arcs") {
  Dataset ds = small_arc(50);
  ExperimentConfig base;
  base.sampler.seed = 1;
  base.exemplar_seed = 101;
  auto rows = sweep(ds, base, "n_star", {0.0, 1.0});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].exemplars == 0);
  CHECK(rows[1].exemplars == 1);
  CHECK(rows[0].dataset == "grid_arc");
  CHECK(rows[0].seed == 1);
  CHECK(rows[1].ar > rows[0].ar);

  CHECK_THROWS_AS(sweep(ds, base, "bogus", {1.0}), std::invalid_argument);
}

TEST_CASE("sweep csv round-trips the documented schema") {
  CHECK(std::string(io::kCsvHeader) ==
        "dataset,seed,N_star,n_star,tau,sigma_px,AP,AP50,AR");
  SweepRow row;
  row.dataset = "grid_arc";
  row.seed = 7;
  row.exemplars = 2;
  row.copies = 200;
  row.tau = 10;
  row.sigma_px = 1.5;
  row.ap = 0.5;
  row.ap50 = 0.75;
  row.ar = 0.625;
  CHECK(csv_line(row) == "grid_arc,7,2,200,10,1.5,0.5,0.75,0.625");
  std::string table = csv_table({row});
  CHECK(table == std::string(io::kCsvHeader) +
                     "\ngrid_arc,7,2,200,10,1.5,0.5,0.75,0.625\n");
}

TEST_CASE("calibrate_dataset produces bounded per-scene coverage") {
  Dataset ds = small_arc(12, 7);
  ExperimentConfig cfg;
  cfg.sampler.seed = 7;
  cfg.sampler.n = 100;
  cfg.sampler.copies = 60;
  cfg.exemplars_per_scene = 1;
  cfg.exemplar_seed = 17;

  CalibrationOutcome out = calibrate_dataset(ds, cfg, 20, 0.95);
  CHECK_FALSE(out.per_scene_coverage.empty());
  for (double c : out.per_scene_coverage) {
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
  CHECK(out.median_coverage == median(out.per_scene_coverage));
  CHECK(out.error_points ==
        calibration_error_points(0.95, out.median_coverage));
  CHECK_FALSE(out.ellipses.empty());
  for (const auto& [sid, pair] : out.ellipses) {
    CHECK(pair[0].alpha == 0.95);
    CHECK(pair[0].a >= pair[0].b);
  }

  ExperimentConfig bad = cfg;
  bad.exemplars_per_scene = 0;
  CHECK_THROWS_AS(calibrate_dataset(ds, bad, 20, 0.95),
                  std::invalid_argument);
  CHECK_THROWS_AS(calibrate_dataset(ds, cfg, 20, 1.5), std::invalid_argument);
}
