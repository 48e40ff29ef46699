#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "exdiff/evalkit.hpp"
#include "exdiff/sampler.hpp"
#include "exdiff/synthworld.hpp"

namespace exdiff::io {

inline constexpr int kFormatVersion = 1;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset files and run records are newline-terminated UTF-8 JSON with a
// format_version field; loading a different version is an error, as is any
// box that fails the geometry invariants. Doubles are written in shortest
// round-trip form, so save/load is exact.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// COCO-style ingestion: images/annotations/categories with pixel [x,y,w,h]
// boxes, converted to center fractions per image; visibility fixed at 1.0;
// category ids remapped to contiguous class ids in ascending order.
Dataset load_coco(const std::string& path);

struct SceneRun {
  int scene_id = 0;
  std::vector<ExemplarRef> exemplars;  // boxes as injected (post-perturbation)
  std::vector<BBox> detections;
  std::vector<int> origins;  // exemplar index or -1, aligned with detections
};

struct RunMetrics {
  bool present = false;
  double ap = 0.0;
  double ap50 = 0.0;
  double ar = 0.0;
  double entropy_h = 0.0;
};

struct RunRecord {
  int format_version = kFormatVersion;
  std::string dataset_name;
  std::string layout;
  SamplerConfig sampler;
  OracleParams oracle;
  int exemplars_per_scene = 0;  // N_star
  double sigma_px = 0.0;
  std::uint64_t exemplar_seed = 0;
  std::vector<SceneRun> scenes;
  RunMetrics metrics;
  double wall_clock_sec = 0.0;
};

void save_run(const std::string& path, const RunRecord& record);
RunRecord load_run(const std::string& path);
std::string run_to_json(const RunRecord& record);
RunRecord run_from_json(const std::string& text);
// Compact dump with timing zeroed; equal strings mean equal runs.
std::string canonical_run_json(RunRecord record);

// Shortest-round-trip decimal form of a double (JSON number grammar).
std::string format_double(double v);

inline constexpr const char* kCsvHeader =
    "dataset,seed,N_star,n_star,tau,sigma_px,AP,AP50,AR";

}  // namespace exdiff::io
