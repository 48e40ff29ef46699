#include <chrono>
#include <cstdio>
#include <vector>

#include "exdiff/kernels.hpp"
#include "exdiff/rng.hpp"
#include "exdiff/synthworld.hpp"

// Times the serial reference kernels against the OpenMP variants on
// proposal-batch workloads and checks that outputs agree bitwise.

namespace {

using namespace exdiff;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto start = Clock::now();
    fn();
    double t = seconds_since(start);
    if (t < best) best = t;
  }
  return best;
}

bool same_boxes(const std::vector<ScaledBox>& a,
                const std::vector<ScaledBox>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int c = 0; c < 4; ++c)
      if (a[i].v[c] != b[i].v[c]) return false;
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  int jobs = 4;
  if (argc > 1) jobs = std::atoi(argv[1]);
  set_max_jobs(jobs);
  std::printf("kernel benchmark, serial vs omp (%d threads)\n", jobs);
  std::printf("%-16s %10s %12s %12s %8s %s\n", "kernel", "n", "serial_ms",
              "omp_ms", "speedup", "bitwise");

  Schedule sched = build_schedule(ScheduleKind::kCosine, 1000);
  Rng rng(7);

  for (int n : {1000, 10000, 100000, 1000000}) {
    std::vector<ScaledBox> base(n);
    std::vector<std::array<double, 4>> x0(n);
    std::vector<double> scores(n);
    std::vector<std::array<double, 4>> fresh(n);
    for (int i = 0; i < n; ++i) {
      base[i].v = rng.normal4();
      x0[i] = rng.normal4();
      fresh[i] = rng.normal4();
      scores[i] = rng.uniform();
    }

    {
      auto a = base;
      auto b = base;
      double ts = time_best_of(3, [&] {
        a = base;
        serial::ddim_update(a, x0, sched.alpha_bar[900], sched.alpha_bar[800]);
      });
      double tp = time_best_of(3, [&] {
        b = base;
        omp::ddim_update(b, x0, sched.alpha_bar[900], sched.alpha_bar[800]);
      });
      std::printf("%-16s %10d %12.3f %12.3f %8.2f %s\n", "ddim_update", n,
                  ts * 1e3, tp * 1e3, ts / tp,
                  same_boxes(a, b) ? "ok" : "MISMATCH");
    }
    {
      auto a = base;
      auto b = base;
      double ts = time_best_of(3, [&] {
        a = base;
        serial::renew(a, scores, 0.5, fresh);
      });
      double tp = time_best_of(3, [&] {
        b = base;
        omp::renew(b, scores, 0.5, fresh);
      });
      std::printf("%-16s %10d %12.3f %12.3f %8.2f %s\n", "renew", n, ts * 1e3,
                  tp * 1e3, ts / tp, same_boxes(a, b) ? "ok" : "MISMATCH");
    }
    {
      std::vector<BBox> a, b;
      double ts =
          time_best_of(3, [&] { serial::decode(base, 2.0, a); });
      double tp = time_best_of(3, [&] { omp::decode(base, 2.0, b); });
      bool same = a.size() == b.size();
      for (std::size_t i = 0; same && i < a.size(); ++i)
        same = a[i].cx == b[i].cx && a[i].cy == b[i].cy && a[i].w == b[i].w &&
               a[i].h == b[i].h;
      std::printf("%-16s %10d %12.3f %12.3f %8.2f %s\n", "decode", n, ts * 1e3,
                  tp * 1e3, ts / tp, same ? "ok" : "MISMATCH");
    }
    {
      WorldConfig wc;
      wc.layout = Layout::kGridArc;
      wc.num_scenes = 1;
      wc.objects_per_scene = 6;
      wc.seed = 11;
      Dataset ds = generate_dataset(wc);
      const Scene& scene = ds.scenes[0];

      std::vector<BBox> decoded;
      serial::decode(base, 2.0, decoded);
      std::vector<double> noise(4 * static_cast<std::size_t>(n));
      for (double& v : noise) v = rng.normal();
      std::vector<double> v_eff(scene.objects.size(), 0.7);

      OraclePredictIn in;
      in.decoded = &decoded;
      in.objects = &scene.objects;
      in.v_eff = &v_eff;
      in.noise = noise.data();
      in.rho = 0.02;
      in.eta = 0.004;
      in.slope = 6.0;
      in.signal_scale = 2.0;
      in.num_classes = 1;

      std::vector<std::array<double, 4>> xa(n), xb(n);
      std::vector<double> sa(n), sb(n);
      std::vector<int> na(n), nb(n);
      std::vector<double> da(n), db(n);
      OraclePredictOut oa{&xa, &sa, &na, &da};
      OraclePredictOut ob{&xb, &sb, &nb, &db};
      double ts = time_best_of(3, [&] { serial::oracle_predict(in, oa); });
      double tp = time_best_of(3, [&] { omp::oracle_predict(in, ob); });
      bool same = xa == xb && sa == sb && na == nb && da == db;
      std::printf("%-16s %10d %12.3f %12.3f %8.2f %s\n", "oracle_predict", n,
                  ts * 1e3, tp * 1e3, ts / tp, same ? "ok" : "MISMATCH");
    }
  }
  std::puts("note: speedups near 1.0 are expected on single-core machines.");
  return 0;
}
