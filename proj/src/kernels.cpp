#include "exdiff/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace exdiff {

namespace {
int g_max_jobs = 1;

inline void ddim_one(ScaledBox& b, const std::array<double, 4>& x0,
                     double sab_t, double s1mab_t, double sab_prev,
                     double s1mab_prev, bool degenerate) {
  for (int c = 0; c < 4; ++c) {
    double eps_hat =
        degenerate ? 0.0 : (b.v[c] - sab_t * x0[c]) / s1mab_t;
    b.v[c] = sab_prev * x0[c] + s1mab_prev * eps_hat;
  }
}
}  // namespace

void set_max_jobs(int jobs) {
  g_max_jobs = std::max(1, jobs);
  omp_set_num_threads(g_max_jobs);
}

int max_jobs() { return g_max_jobs; }

ScaledBox forward_diffuse(const ScaledBox& x0, int t,
                          const std::array<double, 4>& eps,
                          const Schedule& sched) {
  if (t < 0 || t > sched.T)
    throw std::out_of_range("forward_diffuse: t outside [0, T]");
  double sab = sched.sqrt_ab(t);
  double s1mab = sched.sqrt_1mab(t);
  ScaledBox out = x0;
  for (int c = 0; c < 4; ++c) out.v[c] = sab * x0.v[c] + s1mab * eps[c];
  return out;
}

namespace serial {

void ddim_update(std::vector<ScaledBox>& x,
                 const std::vector<std::array<double, 4>>& x0_hat, double ab_t,
                 double ab_prev) {
  bool degenerate = (1.0 - ab_t) < 1e-12;
  double sab_t = std::sqrt(ab_t);
  double s1mab_t = std::sqrt(1.0 - ab_t);
  double sab_prev = std::sqrt(ab_prev);
  double s1mab_prev = std::sqrt(1.0 - ab_prev);
  for (std::size_t i = 0; i < x.size(); ++i)
    ddim_one(x[i], x0_hat[i], sab_t, s1mab_t, sab_prev, s1mab_prev,
             degenerate);
}

void renew(std::vector<ScaledBox>& x, const std::vector<double>& max_score,
           double threshold, const std::vector<std::array<double, 4>>& fresh) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (max_score[i] < threshold) {
      x[i].v = fresh[i];
      x[i].origin.exemplar_index = -1;
    }
  }
}

void decode(const std::vector<ScaledBox>& x, double scale,
            std::vector<BBox>& out) {
  out.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = from_signal(x[i], scale);
}

}  // namespace serial

namespace omp {

void ddim_update(std::vector<ScaledBox>& x,
                 const std::vector<std::array<double, 4>>& x0_hat, double ab_t,
                 double ab_prev) {
  bool degenerate = (1.0 - ab_t) < 1e-12;
  double sab_t = std::sqrt(ab_t);
  double s1mab_t = std::sqrt(1.0 - ab_t);
  double sab_prev = std::sqrt(ab_prev);
  double s1mab_prev = std::sqrt(1.0 - ab_prev);
  std::int64_t n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    ddim_one(x[i], x0_hat[i], sab_t, s1mab_t, sab_prev, s1mab_prev,
             degenerate);
}

void renew(std::vector<ScaledBox>& x, const std::vector<double>& max_score,
           double threshold, const std::vector<std::array<double, 4>>& fresh) {
  std::int64_t n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    if (max_score[i] < threshold) {
      x[i].v = fresh[i];
      x[i].origin.exemplar_index = -1;
    }
  }
}

void decode(const std::vector<ScaledBox>& x, double scale,
            std::vector<BBox>& out) {
  out.resize(x.size());
  std::int64_t n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] = from_signal(x[i], scale);
}

}  // namespace omp

}  // namespace exdiff
