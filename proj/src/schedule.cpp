#include "exdiff/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace exdiff {

namespace {

double cosine_f(double t, double T) {
  double x = (t / T + 0.008) / 1.008 * (M_PI / 2.0);
  double c = std::cos(x);
  return c * c;
}

}  // namespace

Schedule build_schedule(ScheduleKind kind, int T) {
  if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
  Schedule s;
  s.kind = kind;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);

  if (kind == ScheduleKind::kCosine) {
    double f0 = cosine_f(0.0, T);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
      double ab = cosine_f(t, T) / f0;
      double beta = 1.0 - ab / prev;
      s.beta[t] = std::min(beta, kBetaClip);
      prev = ab;
    }
  } else {
    double lo = 1e-4;
    double hi = 0.02;
    for (int t = 1; t <= T; ++t) {
      double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
      s.beta[t] = lo + (hi - lo) * frac;
    }
  }

  // Derived tables come from the clipped betas so the three stay consistent.
  for (int t = 1; t <= T; ++t) {
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

}  // namespace exdiff
