#pragma once

// Seeded random streams. One 64-bit scenario seed fans out into per-trial
// seeds, and each trial into independent switch and noise streams, so the
// channel realization of a trial does not depend on how much noise was drawn.

#include <cstdint>
#include <random>

#include "twoswitch/numerics.hpp"

namespace twoswitch {

/// SplitMix64 finalizer (Steele, Lea, Flood 2014).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// seed' = splitmix64(seed ^ splitmix64(trial)). Depends only on (seed, trial).
constexpr std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t trial) noexcept {
  return splitmix64(seed ^ splitmix64(trial));
}

enum class StreamKind : std::uint64_t { switches = 0x5357495443480001ULL, noise = 0x4E4F495345000002ULL };

constexpr std::uint64_t stream_seed(std::uint64_t seed, StreamKind kind) noexcept {
  return splitmix64(seed ^ static_cast<std::uint64_t>(kind));
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return uniform_(engine_); }
  double normal() { return normal_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal vector of length n.
  Vector normal_vector(Eigen::Index n) {
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i)
      z(i) = normal();
    return z;
  }

  /// Zero-mean Gaussian with covariance L L' given the lower Cholesky factor L.
  Vector gaussian(const Matrix& chol_lower) { return chol_lower * normal_vector(chol_lower.cols()); }

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

struct TrialStreams {
  Rng switches;
  Rng noise;

  explicit TrialStreams(std::uint64_t seed)
      : switches(stream_seed(seed, StreamKind::switches)),
        noise(stream_seed(seed, StreamKind::noise)) {}
};

/// Lower Cholesky factor of a covariance; empty matrices pass through.
inline Matrix cholesky_lower(const Matrix& cov, std::string_view what) {
  if (cov.size() == 0)
    return cov;
  Eigen::LLT<Matrix> llt(numerics::symmetrize(cov));
  if (llt.info() != Eigen::Success)
    throw ValidationError(std::string(what) + " is not positive definite");
  return llt.matrixL();
}

} // namespace twoswitch
