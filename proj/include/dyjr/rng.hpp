#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dyjr {

// Named substreams of a run's root seed. Each feature draws from its own
// stream so that enabling one does not shift another's random sequence.
enum class Stream : std::uint64_t {
  kQueries = 1,
  kRollout = 2,
  kAdmission = 3,
  kReplay = 4,
  kEvalQueries = 5,
  kEvalSampling = 6,
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Seed for (root, stream, a, b); a and b are typically the step and an item
// index within the step.
std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t a = 0,
                          std::uint64_t b = 0) noexcept;

// Seeded stream with platform-independent helpers (the std distributions
// are implementation-defined, which would break cross-toolchain replay).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0)
      : engine_(derive_seed(root, stream, a, b)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t uniform_below(std::uint64_t n);

  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // k distinct indices from [0, n), uniformly over k-subsets, in draw order.
  std::vector<std::size_t> choose(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

}  // namespace dyjr
