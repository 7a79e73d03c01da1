#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace aoisnn {

// splitmix64-based generator. Used everywhere randomness feeds results so
// that runs are bit-reproducible across standard library implementations
// (std::shuffle / std::uniform_*_distribution are not pinned by the
// standard).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). Rejection-free modulo bias is irrelevant at
  // the n we use, but keep it exact anyway.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    std::uint64_t lim = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= lim);
    return x % n;
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Knuth's method; fine for the small means used in synthetic data.
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    double l = std::exp(-mean);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= next_double();
    } while (p > l);
    return k - 1;
  }

  // Derive an independent stream, e.g. per (epoch, sample).
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

template <typename T>
void shuffle(std::vector<T>& xs, Rng& rng) {
  for (std::size_t i = xs.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(xs[i - 1], xs[j]);
  }
}

}  // namespace aoisnn
