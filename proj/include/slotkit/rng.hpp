#pragma once
// Deterministic randomness. All sampling goes through Rng (mt19937_64 plus
// explicit transforms) so results are identical across platforms; seeds for
// sub-streams are derived with splitmix64 so each (purpose, index) pair maps
// to an independent stream as a pure function of the root seed.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace slotkit {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t root, uint64_t tag, uint64_t index) {
  return splitmix64(splitmix64(root ^ splitmix64(tag)) ^ index);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t raw() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [lo, hi] inclusive, by rejection so the result is unbiased
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = uint64_t(hi - lo) + 1;
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t r;
    do {
      r = gen_();
    } while (r >= limit);
    return lo + int64_t(r % span);
  }

  // standard normal via Box-Muller; no cached spare, so the draw count per
  // sample is fixed and streams stay reproducible under refactoring
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates shuffle of [0, n)
  template <class Int>
  void permutation(std::vector<Int>& out, Int n) {
    out.resize(size_t(n));
    for (Int i = 0; i < n; ++i) out[size_t(i)] = i;
    for (Int i = n - 1; i > 0; --i) {
      int64_t j = uniform_int(0, int64_t(i));
      std::swap(out[size_t(i)], out[size_t(j)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace slotkit
