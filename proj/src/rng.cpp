#include "exdiff/rng.hpp"

#include <cmath>

namespace exdiff {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t split_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x1234567887654321ULL));
}

double Rng::uniform() {
  return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0,1] so the log is finite.
  double u1 = static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::array<double, 4> Rng::normal4() {
  std::array<double, 4> out;
  for (double& v : out) v = normal();
  return out;
}

std::vector<double> Rng::normals(std::size_t count) {
  std::vector<double> out(count);
  for (double& v : out) v = normal();
  return out;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling over the full 64-bit range keeps the draw unbiased.
  std::uint64_t limit = n * (~0ULL / n);
  std::uint64_t x;
  do {
    x = eng_();
  } while (x >= limit);
  return x % n;
}

}  // namespace exdiff
