#pragma once

#include <utility>
#include <vector>

#include "exdiff/geometry.hpp"
#include "exdiff/rng.hpp"

namespace exdiff {

struct EvalConfig {
  std::vector<double> iou_thresholds;  // empty -> default_thresholds()
  int max_detections = 100;
  double exclusion_iou = 0.5;
  int entropy_grid = 16;
};

// 0.50, 0.55, ..., 0.95
std::vector<double> default_thresholds();

// Greedy one-to-one matching for a single class: predictions in descending
// score order (stable on ties) each take the unmatched GT with the highest
// IoU >= iou_thr; equal IoU goes to the lower GT index. Returns, aligned
// with the input order, the matched GT index or -1.
std::vector<int> match_greedy(const std::vector<BBox>& preds,
                              const std::vector<BBox>& gts, double iou_thr);

// 101-point interpolated AP for one class and threshold. scores/is_tp are
// aligned and already globally ranked by descending score; num_gt counts all
// GT of the class. AP = sum over r = 0.00, 0.01, ..., 1.00 of the maximum
// precision at recall >= r, divided by 101.
double average_precision(const std::vector<double>& scores,
                         const std::vector<char>& is_tp, long num_gt);

struct EvalResult {
  double ap = 0.0;
  double ap50 = 0.0;
  double ar = 0.0;
  std::vector<double> thresholds;
  std::vector<double> per_threshold_ap;      // class means
  std::vector<double> per_threshold_recall;  // class means
  std::vector<long> tp, fp, fn;              // totals per threshold
};

// Dataset-level COCO-style metrics. Predictions are capped per scene at
// max_detections by descending score before matching. Classes are the ones
// present in GT, processed in ascending id order; AP/AR are means over
// thresholds of the per-class means. Throws if the dataset has no GT.
EvalResult evaluate(const std::vector<std::vector<BBox>>& gts_per_scene,
                    const std::vector<std::vector<BBox>>& preds_per_scene,
                    const EvalConfig& cfg = {});

// An exemplar with the GT entry it came from; gt_index -1 means the box was
// supplied externally and only the prediction-removal half applies.
struct ExemplarRef {
  int gt_index = -1;
  BBox box;
};

// Scoring-exclusion protocol: drop each exemplar's GT entry and every
// prediction with IoU >= exclusion_iou against any exemplar box.
std::pair<std::vector<BBox>, std::vector<BBox>> apply_exclusion(
    const std::vector<BBox>& gts, const std::vector<BBox>& preds,
    const std::vector<ExemplarRef>& exemplars, double exclusion_iou);

// Annotation-noise model: iid Gaussian with std sigma_px, in pixels at the
// reference resolution, added to each of cx, cy, w, h along its axis, then
// clamped back to validity.
BBox perturb_exemplar(const BBox& b, double sigma_px, int width_px,
                      int height_px, Rng& rng);

// Normalized Shannon entropy of the grid x grid histogram of box centers.
double spatial_entropy(const std::vector<BBox>& boxes, int grid);

}  // namespace exdiff
