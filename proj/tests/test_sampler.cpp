#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "exdiff/sampler.hpp"
#include "exdiff/schedule.hpp"

using namespace exdiff;

namespace {

BBox box(double cx, double cy, double w, double h, int cls = 0,
         double score = 0.0) {
  BBox b;
  b.cx = cx;
  b.cy = cy;
  b.w = w;
  b.h = h;
  b.class_id = cls;
  b.score = score;
  return b;
}

// Predicts one fixed target for every proposal with full confidence.
struct PerfectDenoiser final : Denoiser {
  std::array<double, 4> target;
  DenoiseOutput denoise(const ProposalSet& set, int) override {
    DenoiseOutput out;
    out.x0_hat.assign(set.boxes.size(), target);
    out.scores.num_classes = 1;
    out.scores.values.assign(set.boxes.size(), 1.0);
    return out;
  }
};

// Keeps proposals where they are and scores them all the same.
struct FlatDenoiser final : Denoiser {
  double score = 0.0;
  DenoiseOutput denoise(const ProposalSet& set, int) override {
    DenoiseOutput out;
    out.x0_hat.resize(set.boxes.size());
    for (std::size_t i = 0; i < set.boxes.size(); ++i)
      out.x0_hat[i] = set.boxes[i].v;
    out.scores.num_classes = 1;
    out.scores.values.assign(set.boxes.size(), score);
    return out;
  }
};

// Returns a wrong-sized batch once the call counter hits fail_at.
struct BrokenDenoiser final : Denoiser {
  int calls = 0;
  int fail_at = 2;
  DenoiseOutput denoise(const ProposalSet& set, int) override {
    DenoiseOutput out;
    std::size_t n = set.boxes.size();
    if (calls++ == fail_at) n -= 1;
    out.x0_hat.assign(n, {0, 0, 0, 0});
    out.scores.num_classes = 1;
    out.scores.values.assign(n, 0.5);
    return out;
  }
};

}  // namespace

TEST_CASE("validate rejects out-of-range fields by name") {
  SamplerConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  auto expect_throw = [](SamplerConfig c, const char* field) {
    try {
      validate(c);
      FAIL_CHECK("expected throw for " << field);
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  SamplerConfig c = cfg;
  c.n = -1;
  expect_throw(c, "n");
  c = cfg;
  c.copies = -1;
  expect_throw(c, "copies");
  c = cfg;
  c.tau = c.t_start + 1;
  expect_throw(c, "tau");
  c = cfg;
  c.num_steps = 0;
  expect_throw(c, "num_steps");
  c = cfg;
  c.t_start = 0;
  expect_throw(c, "t_start");
  c = cfg;
  c.renew_threshold = 1.5;
  expect_throw(c, "renew_threshold");
  c = cfg;
  c.signal_scale = 0.0;
  expect_throw(c, "signal_scale");
  c = cfg;
  c.nms_iou = -0.1;
  expect_throw(c, "nms_iou");
}

TEST_CASE("timestep_ladder spans t_start to 0 with rounded rungs") {
  auto ladder = timestep_ladder(1000, 10);
  REQUIRE(ladder.size() == 11);
  for (int k = 0; k <= 10; ++k) CHECK(ladder[k] == 1000 - 100 * k);

  auto odd = timestep_ladder(10, 3);
  CHECK(odd == std::vector<int>{10, 7, 3, 0});
}

TEST_CASE("max_score and argmax_class reduce rows") {
  ClassScores s;
  s.num_classes = 3;
  s.values = {0.1, 0.7, 0.3, 0.5, 0.2, 0.9};
  CHECK(s.max_score(0) == 0.7);
  CHECK(s.argmax_class(0) == 1);
  CHECK(s.max_score(1) == 0.9);
  CHECK(s.argmax_class(1) == 2);
}

TEST_CASE("init_proposals without exemplars draws n standard normals") {
  SamplerConfig cfg;
  cfg.n = 300;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  Rng rng(1);
  ProposalSet set = init_proposals({}, cfg, sched, rng);
  CHECK(set.timestep == cfg.t_start);
  REQUIRE(set.boxes.size() == 300);
  double sum = 0.0, sumsq = 0.0;
  for (const auto& b : set.boxes) {
    CHECK(b.origin.exemplar_index == -1);
    for (double v : b.v) {
      sum += v;
      sumsq += v * v;
    }
  }
  double n = 300 * 4;
  double mean = sum / n;
  CHECK(std::fabs(mean) < 4.0 / std::sqrt(n));
  CHECK(std::fabs(sumsq / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("init_proposals appends one flagged block per exemplar") {
  SamplerConfig cfg;
  cfg.n = 300;
  cfg.copies = 200;
  cfg.tau = 10;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  Rng rng(2);
  std::vector<BBox> ex = {box(0.3, 0.3, 0.1, 0.1), box(0.7, 0.7, 0.2, 0.1)};
  ProposalSet set = init_proposals(ex, cfg, sched, rng);
  REQUIRE(set.boxes.size() == 300 + 2 * 200);
  for (int i = 0; i < 300; ++i)
    CHECK(set.boxes[i].origin.exemplar_index == -1);
  for (int i = 300; i < 500; ++i)
    CHECK(set.boxes[i].origin.exemplar_index == 0);
  for (int i = 500; i < 700; ++i)
    CHECK(set.boxes[i].origin.exemplar_index == 1);
}

TEST_CASE("tau = 0 injects exemplars exactly") {
  SamplerConfig cfg;
  cfg.n = 10;
  cfg.copies = 50;
  cfg.tau = 0;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  Rng rng(3);
  BBox ex = box(0.312, 0.471, 0.093, 0.121);
  ProposalSet set = init_proposals({ex}, cfg, sched, rng);
  ScaledBox want = to_signal(ex, cfg.signal_scale);
  for (int i = 10; i < 60; ++i) {
    CHECK(set.boxes[i].v == want.v);
  }
}

TEST_CASE("tau = 10 noise magnitude matches the schedule") {
  SamplerConfig cfg;
  cfg.n = 0;
  cfg.copies = 20000;
  cfg.tau = 10;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  Rng rng(4);
  BBox ex = box(0.4, 0.6, 0.1, 0.2);
  ProposalSet set = init_proposals({ex}, cfg, sched, rng);
  ScaledBox x0 = to_signal(ex, cfg.signal_scale);
  // x_tau - sqrt(ab)*x0 is pure noise with std sqrt(1 - ab).
  double want = std::sqrt(1.0 - sched.alpha_bar[10]);
  double sumsq = 0.0;
  for (const auto& b : set.boxes)
    for (int k = 0; k < 4; ++k) {
      double d = b.v[k] - sched.sqrt_ab(10) * x0.v[k];
      sumsq += d * d;
    }
  double n = cfg.copies * 4.0;
  double rms = std::sqrt(sumsq / n);
  CHECK(std::fabs(rms - want) < 4.0 * want / std::sqrt(2.0 * n));
}

TEST_CASE("nms keeps the best box per overlapping same-class group") {
  std::vector<BBox> dets = {
      box(0.5, 0.5, 0.2, 0.2, 0, 0.9),   // kept
      box(0.52, 0.5, 0.2, 0.2, 0, 0.8),  // suppressed by 0
      box(0.52, 0.5, 0.2, 0.2, 1, 0.7),  // other class, kept
      box(0.9, 0.9, 0.1, 0.1, 0, 0.6),   // disjoint, kept
  };
  auto kept = nms_keep(dets, 0.5);
  CHECK(kept == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("nms breaks score ties by input order") {
  std::vector<BBox> dets = {
      box(0.5, 0.5, 0.2, 0.2, 0, 0.5),
      box(0.5, 0.5, 0.2, 0.2, 0, 0.5),
  };
  auto kept = nms_keep(dets, 0.5);
  CHECK(kept == std::vector<std::size_t>{0});
}

TEST_CASE("nms at threshold boundary keeps both") {
  // IoU exactly 1/3 with threshold 1/3: rule is IoU > thr, so both stay.
  std::vector<BBox> dets = {
      box(0.5, 0.5, 0.2, 0.2, 0, 0.9),
      box(0.6, 0.5, 0.2, 0.2, 0, 0.8),
  };
  auto kept = nms_keep(dets, 1.0 / 3.0);
  CHECK(kept.size() == 2);
}

TEST_CASE("proposal count is invariant across steps") {
  SamplerConfig cfg;
  cfg.n = 30;
  cfg.copies = 20;
  cfg.seed = 5;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  std::vector<BBox> ex = {box(0.3, 0.3, 0.1, 0.1), box(0.7, 0.7, 0.1, 0.1)};
  FlatDenoiser den;
  den.score = 0.3;  // below threshold: every slot renews each step
  int steps_seen = 0;
  auto ladder = timestep_ladder(cfg.t_start, cfg.num_steps);
  sample(ex, den, cfg, sched,
         [&](int k, int t_next, const ProposalSet& set) {
           CHECK(set.boxes.size() == 30 + 2 * 20);
           CHECK(t_next == ladder[k + 1]);
           CHECK(set.timestep == t_next);
           ++steps_seen;
         });
  CHECK(steps_seen == cfg.num_steps);
}

TEST_CASE("sampling is bit-identical for equal seeds") {
  SamplerConfig cfg;
  cfg.n = 50;
  cfg.copies = 30;
  cfg.seed = 42;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  std::vector<BBox> ex = {box(0.4, 0.4, 0.15, 0.1)};
  FlatDenoiser d1, d2;
  d1.score = d2.score = 0.6;
  SampleResult a = sample(ex, d1, cfg, sched);
  SampleResult b = sample(ex, d2, cfg, sched);
  REQUIRE(a.detections.size() == b.detections.size());
  for (std::size_t i = 0; i < a.detections.size(); ++i) {
    CHECK(a.detections[i].cx == b.detections[i].cx);
    CHECK(a.detections[i].cy == b.detections[i].cy);
    CHECK(a.detections[i].w == b.detections[i].w);
    CHECK(a.detections[i].h == b.detections[i].h);
    CHECK(a.detections[i].score == b.detections[i].score);
    CHECK(a.origins[i].exemplar_index == b.origins[i].exemplar_index);
  }

  cfg.seed = 43;
  FlatDenoiser d3;
  d3.score = 0.6;
  SampleResult c = sample(ex, d3, cfg, sched);
  bool same = a.detections.size() == c.detections.size();
  if (same && !a.detections.empty())
    same = a.detections[0].cx == c.detections[0].cx;
  CHECK_FALSE(same);
}

TEST_CASE("one perfect step collapses onto the target box") {
  SamplerConfig cfg;
  cfg.n = 40;
  cfg.copies = 0;
  cfg.num_steps = 1;
  cfg.seed = 7;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  BBox target = box(0.35, 0.55, 0.12, 0.2);
  PerfectDenoiser den;
  den.target = to_signal(target, cfg.signal_scale).v;
  SampleResult r = sample({}, den, cfg, sched);
  // All proposals land exactly on the target; NMS keeps one.
  REQUIRE(r.detections.size() == 1);
  CHECK(r.detections[0].cx == doctest::Approx(target.cx).epsilon(1e-12));
  CHECK(r.detections[0].cy == doctest::Approx(target.cy).epsilon(1e-12));
  CHECK(r.detections[0].w == doctest::Approx(target.w).epsilon(1e-12));
  CHECK(r.detections[0].h == doctest::Approx(target.h).epsilon(1e-12));
  CHECK(r.detections[0].score == 1.0);
}

TEST_CASE("renewal is skipped on the final step") {
  SamplerConfig cfg;
  cfg.n = 0;
  cfg.copies = 3;
  cfg.tau = 0;
  cfg.seed = 9;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  std::vector<BBox> ex = {box(0.4, 0.4, 0.2, 0.2)};
  // Scores of 0 would renew every slot, were renewal applied.
  FlatDenoiser den;
  den.score = 0.0;

  cfg.num_steps = 1;
  SampleResult one = sample(ex, den, cfg, sched);
  REQUIRE_FALSE(one.origins.empty());
  for (const auto& o : one.origins) CHECK(o.exemplar_index == 0);

  cfg.num_steps = 2;
  FlatDenoiser den2;
  den2.score = 0.0;
  SampleResult two = sample(ex, den2, cfg, sched);
  REQUIRE_FALSE(two.origins.empty());
  for (const auto& o : two.origins) CHECK(o.exemplar_index == -1);
}

TEST_CASE("detections come out sorted by descending score") {
  SamplerConfig cfg;
  cfg.n = 25;
  cfg.seed = 11;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  FlatDenoiser den;
  den.score = 0.8;
  SampleResult r = sample({}, den, cfg, sched);
  for (std::size_t i = 1; i < r.detections.size(); ++i)
    CHECK(r.detections[i - 1].score >= r.detections[i].score);
}

TEST_CASE("a broken denoiser reports the failing step") {
  SamplerConfig cfg;
  cfg.n = 10;
  cfg.seed = 13;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  BrokenDenoiser den;
  den.fail_at = 2;
  try {
    sample({}, den, cfg, sched);
    FAIL("expected SamplingError");
  } catch (const SamplingError& e) {
    CHECK(e.step == 2);
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }
}

TEST_CASE("an empty proposal set is rejected") {
  SamplerConfig cfg;
  cfg.n = 0;
  cfg.copies = 0;
  Schedule sched = build_schedule(cfg.schedule_kind, cfg.t_start);
  FlatDenoiser den;
  CHECK_THROWS_AS(sample({}, den, cfg, sched), std::invalid_argument);
}
