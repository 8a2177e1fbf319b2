#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace distillkit::numerics {

// Seeded generator whose output sequence is fixed across standard libraries.
// The std distributions are implementation-defined, so the mappings from raw
// 64-bit draws to reals and integers are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t uniform_int(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_int(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  // Derives an independent stream, e.g. one per language or per stage.
  Rng fork(std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
};

// Stable 64-bit hash of a string (first eight bytes of its SHA-256).
std::uint64_t stable_hash(const std::string& text);

}  // namespace distillkit::numerics
