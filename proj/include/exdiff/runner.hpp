#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "exdiff/evalkit.hpp"
#include "exdiff/io.hpp"
#include "exdiff/sampler.hpp"
#include "exdiff/synthworld.hpp"
#include "exdiff/uncertainty.hpp"

namespace exdiff {

struct ExperimentConfig {
  SamplerConfig sampler;
  OracleParams oracle;
  int exemplars_per_scene = 0;      // N_star; clamped per scene to the GT count
  double sigma_px = 0.0;
  std::uint64_t exemplar_seed = 1;  // independent of the sampler seed
  int jobs = 1;
};

// Uniform-without-replacement choice of GT objects, then optional corner
// noise. Draw order: indices first, then 4 perturbation normals per pick.
std::vector<ExemplarRef> select_exemplars(const Scene& scene, int n_star,
                                          double sigma_px, Rng& rng);

// Runs every scene with the oracle denoiser. Per-scene sampler and exemplar
// seeds are derived from the base seeds and the scene id, and scenes write
// into preassigned slots, so the record is identical for any jobs value.
io::RunRecord run_dataset(const Dataset& ds, const ExperimentConfig& cfg);

// Exclusion-adjusted metrics for a stored run against its dataset.
EvalResult evaluate_run(const Dataset& ds, const io::RunRecord& record,
                        const EvalConfig& eval_cfg = {});

// Fills record.metrics (AP/AP50/AR and the dataset entropy).
void attach_metrics(const Dataset& ds, io::RunRecord& record);

struct SweepRow {
  std::string dataset;
  std::uint64_t seed = 0;
  int exemplars = 0;  // N_star column
  int copies = 0;     // n_star column
  int tau = 0;
  double sigma_px = 0.0;
  double ap = 0.0;
  double ap50 = 0.0;
  double ar = 0.0;
};

std::vector<SweepRow> sweep(const Dataset& ds, const ExperimentConfig& base,
                            const std::string& param,
                            const std::vector<double>& values);

std::string csv_line(const SweepRow& row);
std::string csv_table(const std::vector<SweepRow>& rows);

struct CalibrationOutcome {
  std::vector<double> per_scene_coverage;
  int scenes_skipped = 0;
  double median_coverage = 0.0;
  double error_points = 0.0;
  // Exemplar-region ellipses per contributing scene: (scene_id, {ul, br}).
  std::vector<std::pair<int, std::array<Ellipse, 2>>> ellipses;
};

// Ensemble per scene, exemplar-anchored regions, member-prediction coverage
// of held-out objects; median coverage across scenes.
CalibrationOutcome calibrate_dataset(const Dataset& ds,
                                     const ExperimentConfig& cfg, int ensemble,
                                     double alpha);

}  // namespace exdiff
