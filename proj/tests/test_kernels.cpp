#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <vector>

#include "exdiff/kernels.hpp"
#include "exdiff/rng.hpp"

using namespace exdiff;

namespace {

// Scalar reference for one DDIM coordinate under x0-prediction.
double ddim_coord(double xt, double x0h, double ab_t, double ab_prev) {
  double one_m = 1.0 - ab_t;
  double eps_hat =
      one_m < 1e-12 ? 0.0 : (xt - std::sqrt(ab_t) * x0h) / std::sqrt(one_m);
  return std::sqrt(ab_prev) * x0h + std::sqrt(1.0 - ab_prev) * eps_hat;
}

std::vector<ScaledBox> random_boxes(int n, Rng& rng) {
  std::vector<ScaledBox> out(n);
  for (int i = 0; i < n; ++i) {
    out[i].v = rng.normal4();
    out[i].origin.exemplar_index = (i % 3 == 0) ? i % 5 : -1;
  }
  return out;
}

}  // namespace

TEST_CASE("ddim_update matches the scalar oracle") {
  Rng rng(11);
  auto x = random_boxes(64, rng);
  std::vector<std::array<double, 4>> x0h(64);
  for (auto& a : x0h) a = rng.normal4();
  const double ab_t = 0.4, ab_prev = 0.7;

  auto expect = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int k = 0; k < 4; ++k)
      expect[i].v[k] = ddim_coord(x[i].v[k], x0h[i][k], ab_t, ab_prev);

  auto got = x;
  serial::ddim_update(got, x0h, ab_t, ab_prev);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int k = 0; k < 4; ++k)
      CHECK(got[i].v[k] == doctest::Approx(expect[i].v[k]).epsilon(1e-14));
    CHECK(got[i].origin.exemplar_index == x[i].origin.exemplar_index);
  }
}

TEST_CASE("ddim_update to t_prev = 0 returns x0_hat exactly") {
  Rng rng(12);
  auto x = random_boxes(32, rng);
  std::vector<std::array<double, 4>> x0h(32);
  for (auto& a : x0h) a = rng.normal4();
  serial::ddim_update(x, x0h, 0.37, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int k = 0; k < 4; ++k)
      CHECK(x[i].v[k] == doctest::Approx(x0h[i][k]).epsilon(1e-14));
}

TEST_CASE("ddim_update guards the nearly-noiseless regime") {
  // ab_t ~ 1 makes the eps_hat quotient 0/0; the guard pins eps_hat to 0.
  std::vector<ScaledBox> x(1);
  x[0].v = {1.0, 2.0, 3.0, 4.0};
  std::vector<std::array<double, 4>> x0h = {{1.0, 2.0, 3.0, 4.0}};
  serial::ddim_update(x, x0h, 1.0, 0.5);
  for (int k = 0; k < 4; ++k) {
    CHECK(x[0].v[k] ==
          doctest::Approx(std::sqrt(0.5) * x0h[0][k]).epsilon(1e-14));
    CHECK(std::isfinite(x[0].v[k]));
  }
}

TEST_CASE("renew keeps everything when all scores pass") {
  Rng rng(13);
  auto x = random_boxes(16, rng);
  auto before = x;
  std::vector<double> score(16, 0.9);
  std::vector<std::array<double, 4>> fresh(16);
  for (auto& a : fresh) a = rng.normal4();
  serial::renew(x, score, 0.5, fresh);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i].v == before[i].v);
    CHECK(x[i].origin.exemplar_index == before[i].origin.exemplar_index);
  }
}

TEST_CASE("renew replaces failing slots with fresh random-origin draws") {
  Rng rng(14);
  auto x = random_boxes(16, rng);
  std::vector<double> score(16, 0.1);
  std::vector<std::array<double, 4>> fresh(16);
  for (auto& a : fresh) a = rng.normal4();
  serial::renew(x, score, 0.5, fresh);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i].v == fresh[i]);
    CHECK(x[i].origin.exemplar_index == -1);
  }
}

TEST_CASE("renew is slotwise: mixed scores touch only failing entries") {
  std::vector<ScaledBox> x(2);
  x[0].v = {1, 1, 1, 1};
  x[0].origin.exemplar_index = 0;
  x[1].v = {2, 2, 2, 2};
  x[1].origin.exemplar_index = 1;
  std::vector<double> score = {0.9, 0.1};
  std::vector<std::array<double, 4>> fresh = {{7, 7, 7, 7}, {8, 8, 8, 8}};
  serial::renew(x, score, 0.5, fresh);
  CHECK(x[0].v == std::array<double, 4>{1, 1, 1, 1});
  CHECK(x[0].origin.exemplar_index == 0);
  CHECK(x[1].v == std::array<double, 4>{8, 8, 8, 8});
  CHECK(x[1].origin.exemplar_index == -1);
}

TEST_CASE("renew at the exact threshold keeps the slot") {
  std::vector<ScaledBox> x(1);
  x[0].v = {1, 1, 1, 1};
  std::vector<double> score = {0.5};
  std::vector<std::array<double, 4>> fresh = {{9, 9, 9, 9}};
  serial::renew(x, score, 0.5, fresh);
  CHECK(x[0].v == std::array<double, 4>{1, 1, 1, 1});
}

TEST_CASE("decode maps through from_signal per slot") {
  Rng rng(15);
  auto x = random_boxes(32, rng);
  std::vector<BBox> out;
  serial::decode(x, 2.0, out);
  REQUIRE(out.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    BBox want = from_signal(x[i], 2.0);
    CHECK(out[i].cx == want.cx);
    CHECK(out[i].cy == want.cy);
    CHECK(out[i].w == want.w);
    CHECK(out[i].h == want.h);
  }
}

TEST_CASE("omp kernels are bit-identical to serial at any job count") {
  Rng rng(16);
  const int n = 1337;
  auto base = random_boxes(n, rng);
  std::vector<std::array<double, 4>> x0h(n), fresh(n);
  for (auto& a : x0h) a = rng.normal4();
  for (auto& a : fresh) a = rng.normal4();
  std::vector<double> score(n);
  for (auto& s : score) s = rng.uniform();

  auto s_ddim = base;
  serial::ddim_update(s_ddim, x0h, 0.3, 0.8);
  auto s_renew = base;
  serial::renew(s_renew, score, 0.5, fresh);
  std::vector<BBox> s_dec;
  serial::decode(base, 2.0, s_dec);

  for (int jobs : {1, 2, 8}) {
    set_max_jobs(jobs);
    auto o_ddim = base;
    omp::ddim_update(o_ddim, x0h, 0.3, 0.8);
    auto o_renew = base;
    omp::renew(o_renew, score, 0.5, fresh);
    std::vector<BBox> o_dec;
    omp::decode(base, 2.0, o_dec);

    for (int i = 0; i < n; ++i) {
      REQUIRE(o_ddim[i].v == s_ddim[i].v);
      REQUIRE(o_renew[i].v == s_renew[i].v);
      REQUIRE(o_renew[i].origin.exemplar_index ==
              s_renew[i].origin.exemplar_index);
      REQUIRE(o_dec[i].cx == s_dec[i].cx);
      REQUIRE(o_dec[i].w == s_dec[i].w);
    }
  }
  set_max_jobs(1);
}

TEST_CASE("set_max_jobs round-trips and floors at 1") {
  set_max_jobs(4);
  CHECK(max_jobs() == 4);
  set_max_jobs(0);
  CHECK(max_jobs() == 1);
  set_max_jobs(1);
}
