#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "exdiff/geometry.hpp"
#include "exdiff/rng.hpp"
#include "exdiff/schedule.hpp"

namespace exdiff {

struct Scene;

struct SamplerConfig {
  int n = 300;              // random proposals
  int copies = 200;         // proposals per exemplar (n_star)
  int tau = 10;             // forward-noising step applied to exemplars
  int num_steps = 10;       // denoising iterations
  int t_start = 1000;       // ladder starts here; also the schedule length T
  double renew_threshold = 0.5;
  double signal_scale = kDefaultSignalScale;
  double nms_iou = 0.5;
  ScheduleKind schedule_kind = ScheduleKind::kCosine;
  std::uint64_t seed = 0;
};

// Validates ranges; throws std::invalid_argument naming the offending field.
void validate(const SamplerConfig& cfg);

struct ProposalSet {
  std::vector<ScaledBox> boxes;
  int timestep = 0;
};

// Per-proposal class scores, row-major [proposal][class].
struct ClassScores {
  int num_classes = 1;
  std::vector<double> values;

  double at(std::size_t i, int c) const {
    return values[i * num_classes + c];
  }
  double& at(std::size_t i, int c) { return values[i * num_classes + c]; }
  // Highest score across classes; renewal and detection both reduce by max.
  double max_score(std::size_t i) const;
  int argmax_class(std::size_t i) const;
};

struct DenoiseOutput {
  std::vector<std::array<double, 4>> x0_hat;  // signal space
  ClassScores scores;
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiseOutput denoise(const ProposalSet& proposals, int t) = 0;
};

class DenoiserFactory {
 public:
  virtual ~DenoiserFactory() = default;
  virtual std::unique_ptr<Denoiser> make(const Scene& scene,
                                         std::uint64_t seed) const = 0;
};

struct SamplingError : std::runtime_error {
  SamplingError(int step_index, const std::string& what)
      : std::runtime_error("sampling step " + std::to_string(step_index) +
                           ": " + what),
        step(step_index) {}
  int step;
};

struct SampleResult {
  std::vector<BBox> detections;       // post-NMS, sorted by descending score
  std::vector<Provenance> origins;    // aligned with detections
};

// num_steps+1 evenly spaced rungs from t_start down to 0 inclusive;
// t_k = round(t_start * (num_steps - k) / num_steps).
std::vector<int> timestep_ladder(int t_start, int num_steps);

// n standard-normal proposals, then one block of `copies` forward-diffused
// entries per exemplar (noised to tau), in exemplar input order.
ProposalSet init_proposals(const std::vector<BBox>& exemplars,
                           const SamplerConfig& cfg, const Schedule& sched,
                           Rng& rng);

// Classwise greedy NMS: sort by (score desc, index asc), drop any box with
// IoU > iou_thr against a kept box of the same class.
std::vector<std::size_t> nms_keep(const std::vector<BBox>& dets,
                                  double iou_thr);

using StepObserver =
    std::function<void(int step_index, int t_next, const ProposalSet&)>;

// Full inference loop: init, then per ladder step denoise -> ddim -> renewal
// (renewal skipped on the last step), then decode + argmax class + NMS.
SampleResult sample(const std::vector<BBox>& exemplars, Denoiser& denoiser,
                    const SamplerConfig& cfg, const Schedule& sched,
                    const StepObserver& observer = nullptr);

// Builds a denoiser for the scene from the factory and runs sample().
SampleResult run_single(const Scene& scene, const std::vector<BBox>& exemplars,
                        const DenoiserFactory& factory,
                        const SamplerConfig& cfg, const Schedule& sched,
                        const StepObserver& observer = nullptr);

// Substream labels for split_seed so consumers stay independent.
inline constexpr std::uint64_t kStreamInit = 1;
inline constexpr std::uint64_t kStreamRenew = 2;
inline constexpr std::uint64_t kStreamDenoiser = 3;

}  // namespace exdiff
