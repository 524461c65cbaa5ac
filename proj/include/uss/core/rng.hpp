#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace uss {

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Counter-based generator. State is two u64 words, so checkpointing and
// exact training resume are trivial, and streams derived with fork() are
// independent of each other's consumption order. Output sequence is fixed
// across platforms.
class Rng {
public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : key_(detail::splitmix64(detail::splitmix64(seed) ^
                                (0x71c9d1e4d34a6b05ULL * (stream + 1)))) {}

  Rng fork(uint64_t tag) const {
    Rng child(key_ ^ detail::splitmix64(tag + 0x632be59bd9b4e019ULL));
    return child;
  }

  uint64_t u64() { return detail::splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  // Uniform in [0, bound). Modulo with rejection of the biased tail.
  uint64_t below(uint64_t bound) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do {
      x = u64();
    } while (x >= limit);
    return x % bound;
  }

  // Uniform in [0, 1) with 53 random bits.
  double real() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * real(); }

  // Box-Muller; uses two draws per call, no cached spare.
  double normal() {
    double u1 = real(), u2 = real();
    while (u1 <= 0.0) u1 = real();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  uint64_t state_key() const { return key_; }
  uint64_t state_counter() const { return counter_; }
  void restore(uint64_t key, uint64_t counter) {
    key_ = key;
    counter_ = counter;
  }

private:
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace uss
