#pragma once

#include <cmath>
#include <vector>

namespace exdiff {

enum class ScheduleKind { kCosine, kLinear };

// Noise schedule tables indexed by timestep t in [0, T]. Index 0 is the
// identity step: beta[0] = 0, alpha[0] = alpha_bar[0] = 1. alpha_bar is
// rebuilt as the running product of (1 - beta) after clipping, so
// alpha_bar[t] / alpha_bar[t-1] == alpha[t] holds exactly.
struct Schedule {
  ScheduleKind kind = ScheduleKind::kCosine;
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double sqrt_ab(int t) const { return std::sqrt(alpha_bar[t]); }
  double sqrt_1mab(int t) const { return std::sqrt(1.0 - alpha_bar[t]); }
};

inline constexpr double kBetaClip = 0.999;

Schedule build_schedule(ScheduleKind kind, int T);

}  // namespace exdiff
