#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace sparseflow {

/// Consumers that draw randomness. Each one gets its own stream so that, e.g.,
/// changing the number of Hutchinson probes never perturbs batch order.
enum class Stream : std::uint64_t {
  init = 1,
  batching = 2,
  noise = 3,
  hessian = 4,
  sampling = 5,
  data = 6,
  split = 7,
};

/// xoshiro256** with splitmix64 seeding.
///
/// The generator and all distributions built on top of it are implemented
/// here (not via <random> distributions) so that a seed produces the same
/// numbers with every standard library.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed);

  static Rng from_state(const State& state);
  /// Independent child stream; does not advance this generator.
  [[nodiscard]] Rng split(std::uint64_t tag) const;

  [[nodiscard]] const State& state() const { return state_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (one value per call).
  double normal();
  /// +1 or -1 with equal probability.
  double rademacher();
  /// Uniform integer in [0, n) without modulo bias. n must be > 0.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  Rng() = default;
  State state_{};
};

/// The stream `which` derived from a user-facing seed.
Rng make_stream(std::uint64_t seed, Stream which);

}  // namespace sparseflow
