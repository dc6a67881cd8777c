#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace siflow {

/// splitmix64 finalizer; used to derive independent seeds from a base seed.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based seed splitting: the seed for (stream, counter) depends only
/// on the base seed and the pair, never on how many draws happened before.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t counter = 0) noexcept {
  return mix64(mix64(base ^ mix64(stream)) + counter);
}

/// Named streams so call sites do not collide.
enum class Stream : std::uint64_t {
  Init = 1,
  Base = 2,
  Target = 3,
  Time = 4,
  TrainStep = 5,
  Diagnostic = 6,
  Probe = 7,
  Langevin = 8,
  Split = 9,
  Eval = 10,
};

constexpr std::uint64_t derive_seed(std::uint64_t base, Stream s,
                                    std::uint64_t counter = 0) noexcept {
  return derive_seed(base, static_cast<std::uint64_t>(s), counter);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  /// Rademacher +-1.
  double sign() { return (engine_() >> 63) ? 1.0 : -1.0; }
  double gamma(double shape) {
    return std::gamma_distribution<double>(shape, 1.0)(engine_);
  }
  double beta(double alpha, double beta) {
    const double x = gamma(alpha);
    const double y = gamma(beta);
    return x / (x + y);
  }
  std::uint64_t bits() { return engine_(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace siflow
