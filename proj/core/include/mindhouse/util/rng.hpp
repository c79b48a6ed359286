#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace mindhouse {

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Deterministic PRNG (xoshiro-free, splitmix64-based). All stochastic code in
/// the project draws through this class so runs are reproducible from a seed
/// alone, independent of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), state_(seed) {
    // warm up so nearby seeds decorrelate
    for (int i = 0; i < 4; ++i) detail::splitmix64(state_);
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return detail::splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi] inclusive. Requires lo <= hi.
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  size_t uniform_index(size_t n) { return static_cast<size_t>(next_u64() % n); }

  /// Standard normal via Box-Muller (one value per call; the sine pair is
  /// discarded to keep the stream position independent of call parity).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Index sampled from unnormalized non-negative weights.
  size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      r -= weights[i];
      if (r < 0.0) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  /// Independent child stream, deterministic in (seed, tag).
  Rng derive(uint64_t tag) const {
    uint64_t s = seed_ ^ (0xd1342543de82ef95ull * (tag + 1));
    detail::splitmix64(s);
    return Rng(s);
  }

 private:
  uint64_t seed_;
  uint64_t state_;
};

}  // namespace mindhouse
