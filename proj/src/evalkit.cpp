#include "exdiff/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace exdiff {

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 9; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

std::vector<int> match_greedy(const std::vector<BBox>& preds,
                              const std::vector<BBox>& gts, double iou_thr) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return preds[a].score > preds[b].score;
                   });
  std::vector<int> matched(preds.size(), -1);
  std::vector<char> gt_taken(gts.size(), 0);
  for (std::size_t idx : order) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[g]) continue;
      if (gts[g].class_id != preds[idx].class_id) continue;
      double v = iou(preds[idx], gts[g]);
      if (v >= iou_thr && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      matched[idx] = best;
      gt_taken[best] = 1;
    }
  }
  return matched;
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<char>& is_tp, long num_gt) {
  if (num_gt <= 0)
    throw std::invalid_argument("average_precision: num_gt must be > 0");
  std::size_t n = scores.size();
  std::vector<double> precision(n), recall(n);
  long tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += is_tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    double level = static_cast<double>(r) / 100.0;
    double best = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (recall[i] >= level) best = std::max(best, precision[i]);
    sum += best;
  }
  return sum / 101.0;
}

namespace {

struct RankedDet {
  double score;
  char tp;
};

std::vector<BBox> cap_by_score(const std::vector<BBox>& preds, int max_dets) {
  if (static_cast<int>(preds.size()) <= max_dets) return preds;
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return preds[a].score > preds[b].score;
                   });
  order.resize(max_dets);
  std::sort(order.begin(), order.end());  // keep original relative order
  std::vector<BBox> kept;
  kept.reserve(order.size());
  for (std::size_t i : order) kept.push_back(preds[i]);
  return kept;
}

}  // namespace

EvalResult evaluate(const std::vector<std::vector<BBox>>& gts_per_scene,
                    const std::vector<std::vector<BBox>>& preds_per_scene,
                    const EvalConfig& cfg) {
  if (gts_per_scene.size() != preds_per_scene.size())
    throw std::invalid_argument("evaluate: scene count mismatch");
  std::vector<double> thresholds =
      cfg.iou_thresholds.empty() ? default_thresholds() : cfg.iou_thresholds;

  std::set<int> class_set;
  long total_gt = 0;
  for (const auto& gts : gts_per_scene)
    for (const BBox& g : gts) {
      class_set.insert(g.class_id);
      ++total_gt;
    }
  if (total_gt == 0)
    throw std::invalid_argument("evaluate: dataset has no ground truth");
  std::vector<int> classes(class_set.begin(), class_set.end());

  std::vector<std::vector<BBox>> capped(preds_per_scene.size());
  for (std::size_t s = 0; s < preds_per_scene.size(); ++s)
    capped[s] = cap_by_score(preds_per_scene[s], cfg.max_detections);

  EvalResult res;
  res.thresholds = thresholds;
  res.per_threshold_ap.assign(thresholds.size(), 0.0);
  res.per_threshold_recall.assign(thresholds.size(), 0.0);
  res.tp.assign(thresholds.size(), 0);
  res.fp.assign(thresholds.size(), 0);
  res.fn.assign(thresholds.size(), 0);

  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    double ap_sum = 0.0;
    double recall_sum = 0.0;
    for (int cls : classes) {
      std::vector<double> scores;
      std::vector<char> tp_flags;
      long num_gt = 0;
      for (std::size_t s = 0; s < gts_per_scene.size(); ++s) {
        std::vector<BBox> gts, preds;
        for (const BBox& g : gts_per_scene[s])
          if (g.class_id == cls) gts.push_back(g);
        for (const BBox& p : capped[s])
          if (p.class_id == cls) preds.push_back(p);
        num_gt += static_cast<long>(gts.size());
        std::vector<int> matched = match_greedy(preds, gts, thresholds[k]);
        for (std::size_t i = 0; i < preds.size(); ++i) {
          scores.push_back(preds[i].score);
          tp_flags.push_back(matched[i] >= 0 ? 1 : 0);
        }
      }
      // Global ranking across scenes; stable so scene order breaks ties.
      std::vector<std::size_t> order(scores.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) {
                         return scores[a] > scores[b];
                       });
      std::vector<double> ranked_scores(scores.size());
      std::vector<char> ranked_tp(scores.size());
      long class_tp = 0;
      for (std::size_t i = 0; i < order.size(); ++i) {
        ranked_scores[i] = scores[order[i]];
        ranked_tp[i] = tp_flags[order[i]];
        class_tp += ranked_tp[i] ? 1 : 0;
      }
      double ap = (num_gt > 0)
                      ? average_precision(ranked_scores, ranked_tp, num_gt)
                      : 0.0;
      double recall = (num_gt > 0) ? static_cast<double>(class_tp) /
                                         static_cast<double>(num_gt)
                                   : 0.0;
      if (num_gt > 0) {
        ap_sum += ap;
        recall_sum += recall;
        res.tp[k] += class_tp;
        res.fp[k] += static_cast<long>(scores.size()) - class_tp;
        res.fn[k] += num_gt - class_tp;
      }
    }
    res.per_threshold_ap[k] = ap_sum / static_cast<double>(classes.size());
    res.per_threshold_recall[k] =
        recall_sum / static_cast<double>(classes.size());
  }

  double ap_total = 0.0, ar_total = 0.0;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    ap_total += res.per_threshold_ap[k];
    ar_total += res.per_threshold_recall[k];
  }
  res.ap = ap_total / static_cast<double>(thresholds.size());
  res.ar = ar_total / static_cast<double>(thresholds.size());
  res.ap50 = 0.0;
  for (std::size_t k = 0; k < thresholds.size(); ++k)
    if (thresholds[k] == 0.5) res.ap50 = res.per_threshold_ap[k];
  return res;
}

std::pair<std::vector<BBox>, std::vector<BBox>> apply_exclusion(
    const std::vector<BBox>& gts, const std::vector<BBox>& preds,
    const std::vector<ExemplarRef>& exemplars, double exclusion_iou) {
  std::vector<char> gt_drop(gts.size(), 0);
  for (const ExemplarRef& ex : exemplars)
    if (ex.gt_index >= 0 && ex.gt_index < static_cast<int>(gts.size()))
      gt_drop[ex.gt_index] = 1;

  std::vector<BBox> gts_out;
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (!gt_drop[i]) gts_out.push_back(gts[i]);

  std::vector<BBox> preds_out;
  for (const BBox& p : preds) {
    bool drop = false;
    for (const ExemplarRef& ex : exemplars) {
      if (iou(p, ex.box) >= exclusion_iou) {
        drop = true;
        break;
      }
    }
    if (!drop) preds_out.push_back(p);
  }
  return {gts_out, preds_out};
}

BBox perturb_exemplar(const BBox& b, double sigma_px, int width_px,
                      int height_px, Rng& rng) {
  if (sigma_px < 0.0)
    throw std::invalid_argument("perturb_exemplar: sigma_px must be >= 0");
  if (width_px <= 0 || height_px <= 0)
    throw std::invalid_argument("perturb_exemplar: bad reference resolution");
  BBox out = b;
  out.cx += sigma_px / width_px * rng.normal();
  out.cy += sigma_px / height_px * rng.normal();
  out.w += sigma_px / width_px * rng.normal();
  out.h += sigma_px / height_px * rng.normal();
  out.cx = std::clamp(out.cx, 0.0, 1.0);
  out.cy = std::clamp(out.cy, 0.0, 1.0);
  out.w = std::clamp(out.w, kMinBoxDim, 1.0);
  out.h = std::clamp(out.h, kMinBoxDim, 1.0);
  return out;
}

double spatial_entropy(const std::vector<BBox>& boxes, int grid) {
  if (boxes.empty())
    throw std::invalid_argument("spatial_entropy: need at least one box");
  if (grid < 2) throw std::invalid_argument("spatial_entropy: grid must be >= 2");
  std::vector<long> counts(static_cast<std::size_t>(grid) * grid, 0);
  for (const BBox& b : boxes) {
    int ix = std::min(grid - 1, static_cast<int>(b.cx * grid));
    int iy = std::min(grid - 1, static_cast<int>(b.cy * grid));
    ix = std::max(0, ix);
    iy = std::max(0, iy);
    counts[static_cast<std::size_t>(iy) * grid + ix] += 1;
  }
  double total = static_cast<double>(boxes.size());
  double h = 0.0;
  for (long c : counts) {
    if (c == 0) continue;
    double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(grid) * grid);
}

}  // namespace exdiff
