#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace exdiff {

// splitmix64 finalizer; used to derive independent substream seeds so that
// adding a consumer never shifts draws seen by the others.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t split_seed(std::uint64_t base, std::uint64_t stream);

// Deterministic normal generator. std::normal_distribution is
// implementation-defined, so results would not be reproducible across
// standard libraries; Box-Muller over the raw mt19937_64 stream is.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform on [0,1), 53-bit resolution.
  double uniform();
  // Uniform on [lo,hi).
  double uniform(double lo, double hi);
  double normal();
  std::array<double, 4> normal4();
  std::vector<double> normals(std::size_t count);
  // Uniform integer in [0,n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace exdiff
