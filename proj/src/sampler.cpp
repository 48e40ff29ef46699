#include "exdiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "exdiff/kernels.hpp"

namespace exdiff {

void validate(const SamplerConfig& cfg) {
  if (cfg.n < 0) throw std::invalid_argument("config: n must be >= 0");
  if (cfg.copies < 0)
    throw std::invalid_argument("config: copies must be >= 0");
  if (cfg.tau < 0 || cfg.tau > cfg.t_start)
    throw std::invalid_argument("config: tau must lie in [0, t_start]");
  if (cfg.num_steps < 1)
    throw std::invalid_argument("config: num_steps must be >= 1");
  if (cfg.t_start < 1)
    throw std::invalid_argument("config: t_start must be >= 1");
  if (cfg.renew_threshold < 0.0 || cfg.renew_threshold > 1.0)
    throw std::invalid_argument("config: renew_threshold must lie in [0, 1]");
  if (cfg.signal_scale <= 0.0)
    throw std::invalid_argument("config: signal_scale must be > 0");
  if (cfg.nms_iou < 0.0 || cfg.nms_iou > 1.0)
    throw std::invalid_argument("config: nms_iou must lie in [0, 1]");
}

double ClassScores::max_score(std::size_t i) const {
  double best = values[i * num_classes];
  for (int c = 1; c < num_classes; ++c)
    best = std::max(best, values[i * num_classes + c]);
  return best;
}

int ClassScores::argmax_class(std::size_t i) const {
  int best = 0;
  for (int c = 1; c < num_classes; ++c)
    if (values[i * num_classes + c] > values[i * num_classes + best]) best = c;
  return best;
}

std::vector<int> timestep_ladder(int t_start, int num_steps) {
  std::vector<int> ladder(num_steps + 1);
  for (int k = 0; k <= num_steps; ++k) {
    double t = static_cast<double>(t_start) * (num_steps - k) / num_steps;
    ladder[k] = static_cast<int>(std::lround(t));
  }
  return ladder;
}

ProposalSet init_proposals(const std::vector<BBox>& exemplars,
                           const SamplerConfig& cfg, const Schedule& sched,
                           Rng& rng) {
  ProposalSet set;
  set.timestep = cfg.t_start;
  set.boxes.reserve(cfg.n + exemplars.size() * cfg.copies);
  for (int i = 0; i < cfg.n; ++i) {
    ScaledBox b;
    b.v = rng.normal4();
    b.origin.exemplar_index = -1;
    set.boxes.push_back(b);
  }
  for (std::size_t k = 0; k < exemplars.size(); ++k) {
    ScaledBox source = to_signal(exemplars[k], cfg.signal_scale);
    source.origin.exemplar_index = static_cast<int>(k);
    for (int j = 0; j < cfg.copies; ++j)
      set.boxes.push_back(forward_diffuse(source, cfg.tau, rng.normal4(), sched));
  }
  return set;
}

std::vector<std::size_t> nms_keep(const std::vector<BBox>& dets,
                                  double iou_thr) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return dets[a].score > dets[b].score;
                   });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (dets[k].class_id != dets[idx].class_id) continue;
      if (iou(dets[k], dets[idx]) > iou_thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

namespace {

void check_output(const DenoiseOutput& out, std::size_t count, int step) {
  if (out.x0_hat.size() != count)
    throw SamplingError(step, "denoiser returned wrong box count");
  if (out.scores.num_classes < 1 ||
      out.scores.values.size() != count * out.scores.num_classes)
    throw SamplingError(step, "denoiser returned malformed scores");
  for (const auto& b : out.x0_hat)
    for (double v : b)
      if (!std::isfinite(v))
        throw SamplingError(step, "denoiser returned non-finite box");
  for (double s : out.scores.values)
    if (!(s >= 0.0 && s <= 1.0))
      throw SamplingError(step, "denoiser returned score outside [0, 1]");
}

}  // namespace

SampleResult sample(const std::vector<BBox>& exemplars, Denoiser& denoiser,
                    const SamplerConfig& cfg, const Schedule& sched,
                    const StepObserver& observer) {
  validate(cfg);
  Rng rng_init(split_seed(cfg.seed, kStreamInit));
  Rng rng_renew(split_seed(cfg.seed, kStreamRenew));

  ProposalSet set = init_proposals(exemplars, cfg, sched, rng_init);
  const std::size_t count = set.boxes.size();
  if (count == 0)
    throw std::invalid_argument("config: proposal set is empty");
  std::vector<int> ladder = timestep_ladder(cfg.t_start, cfg.num_steps);

  DenoiseOutput out;
  std::vector<double> max_scores(count);
  std::vector<std::array<double, 4>> fresh(count);

  for (int k = 0; k < cfg.num_steps; ++k) {
    int t = ladder[k];
    int t_prev = ladder[k + 1];
    out = denoiser.denoise(set, t);
    check_output(out, count, k);

    omp::ddim_update(set.boxes, out.x0_hat, sched.alpha_bar[t],
                     sched.alpha_bar[t_prev]);
    set.timestep = t_prev;

    bool last = (k == cfg.num_steps - 1);
    if (!last) {
      for (std::size_t i = 0; i < count; ++i) {
        max_scores[i] = out.scores.max_score(i);
        fresh[i] = rng_renew.normal4();
      }
      omp::renew(set.boxes, max_scores, cfg.renew_threshold, fresh);
    }
    if (observer) observer(k, t_prev, set);
  }

  std::vector<BBox> decoded;
  omp::decode(set.boxes, cfg.signal_scale, decoded);
  for (std::size_t i = 0; i < count; ++i) {
    decoded[i].class_id = out.scores.argmax_class(i);
    decoded[i].score = out.scores.at(i, decoded[i].class_id);
  }

  SampleResult result;
  for (std::size_t idx : nms_keep(decoded, cfg.nms_iou)) {
    result.detections.push_back(decoded[idx]);
    result.origins.push_back(set.boxes[idx].origin);
  }
  return result;
}

SampleResult run_single(const Scene& scene, const std::vector<BBox>& exemplars,
                        const DenoiserFactory& factory,
                        const SamplerConfig& cfg, const Schedule& sched,
                        const StepObserver& observer) {
  auto denoiser = factory.make(scene, split_seed(cfg.seed, kStreamDenoiser));
  return sample(exemplars, *denoiser, cfg, sched, observer);
}

}  // namespace exdiff
