#pragma once

#include <array>
#include <vector>

#include "exdiff/geometry.hpp"
#include "exdiff/schedule.hpp"

// Batch kernels on proposal arrays. Each kernel exists twice with identical
// semantics: serial:: is the reference, omp:: the production variant. Both
// write disjoint slots from precomputed inputs, so outputs are bit-identical
// regardless of thread count.

namespace exdiff {

// Global worker cap used by omp:: kernels and scene/member loops.
void set_max_jobs(int jobs);
int max_jobs();

// x_t = sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps, componentwise; origin kept.
ScaledBox forward_diffuse(const ScaledBox& x0, int t,
                          const std::array<double, 4>& eps,
                          const Schedule& sched);

namespace serial {

// Deterministic DDIM update (eta = 0) under x0-prediction:
// eps_hat = (x_t - sqrt(ab_t)*x0_hat) / sqrt(1-ab_t), zero when ab_t ~ 1;
// x_prev  = sqrt(ab_prev)*x0_hat + sqrt(1-ab_prev)*eps_hat.
void ddim_update(std::vector<ScaledBox>& x,
                 const std::vector<std::array<double, 4>>& x0_hat, double ab_t,
                 double ab_prev);

// Replaces entry i with fresh[i] (origin random) where max_score[i] < thr.
// fresh is pre-drawn for every slot so draws never depend on scores.
void renew(std::vector<ScaledBox>& x, const std::vector<double>& max_score,
           double threshold, const std::vector<std::array<double, 4>>& fresh);

void decode(const std::vector<ScaledBox>& x, double scale,
            std::vector<BBox>& out);

}  // namespace serial

namespace omp {

void ddim_update(std::vector<ScaledBox>& x,
                 const std::vector<std::array<double, 4>>& x0_hat, double ab_t,
                 double ab_prev);

void renew(std::vector<ScaledBox>& x, const std::vector<double>& max_score,
           double threshold, const std::vector<std::array<double, 4>>& fresh);

void decode(const std::vector<ScaledBox>& x, double scale,
            std::vector<BBox>& out);

}  // namespace omp

}  // namespace exdiff
