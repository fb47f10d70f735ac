#pragma once

// Stochastic stability of the closed loop under u_k = -F x̂_{k|k-1}.
//
// Mean stability holds iff rho(A - pqBF) < 1 and rho(A - pq A E{K_k} C) < 1
// for all large k, where E{K_k} averages the estimator gain over receiver
// switch histories s_r^1..s_r^{k-1}.
//
// For p = 1 the peak covariance process (the joint covariance sampled when the
// channel first comes back after an outage) is bounded under a pair of
// sufficient conditions on q, the spectrum of A and coefficients d_i.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "twoswitch/channel.hpp"
#include "twoswitch/closed_loop.hpp"
#include "twoswitch/errors.hpp"
#include "twoswitch/estimator.hpp"
#include "twoswitch/numerics.hpp"
#include "twoswitch/parallel.hpp"
#include "twoswitch/rng.hpp"

namespace twoswitch {

// ---------------------------------------------------------------------------
// Expected gain
// ---------------------------------------------------------------------------

/// Covariance/gain recursion of the linear estimator, stripped of the
/// state estimate. Process noise may depend on the receiver switch of the
/// step being propagated out of.
struct GainRecursion {
  Matrix A;
  Matrix C;
  Matrix W;
  Matrix noise_sr1;
  Matrix noise_sr0;
  Matrix P1;
  Matrix X1;

  static GainRecursion from(const SystemModel& m) {
    m.validate();
    return {m.A, m.C, m.W, m.V, m.V, m.P1,
            numerics::symmetrize(m.x1 * m.x1.transpose() + m.P1)};
  }

  /// Closed-loop variant: process noise p_d B V B' as in the control-aware
  /// prediction, with the control-dependent terms dropped.
  static GainRecursion from(const ClosedLoopModel& m, const ChannelProbabilities& probs) {
    m.validate();
    const Matrix BVB = m.B * m.V * m.B.transpose();
    return {m.A,       m.C,  m.W, probs.p_d(true) * BVB, probs.p_d(false) * BVB, m.P1,
            numerics::symmetrize(m.x1 * m.x1.transpose() + m.P1)};
  }
};

enum class GainMethod { exact, monte_carlo };

inline std::string to_string(GainMethod m) {
  return m == GainMethod::exact ? "exact-enumeration" : "monte-carlo";
}

/// Deepest history the exact method enumerates (2^20 branches).
inline constexpr std::size_t kMaxExactHistory = 20;
inline constexpr std::size_t kDefaultGainBudget = 100000;

struct GainEstimate {
  std::size_t k = 0;
  Matrix mean;      ///< E{K_k}
  Matrix std_error; ///< Monte Carlo standard error per entry; zero for exact
};

namespace detail {

struct GainNode {
  Matrix P_prior;
  Matrix X;
};

inline GainNode gain_step(const GainRecursion& g, const GainNode& node, const Matrix& K,
                          bool s_r, double p) {
  Matrix P_post = s_r ? Matrix(node.P_prior - p * K * g.C * node.P_prior) : node.P_prior;
  const Matrix& noise = s_r ? g.noise_sr1 : g.noise_sr0;
  return {numerics::symmetrize(g.A * P_post * g.A.transpose() + noise),
          numerics::symmetrize(g.A * node.X * g.A.transpose() + noise)};
}

inline void enumerate_gains(const GainRecursion& g, double p, double q, const GainNode& node,
                            std::size_t k, std::size_t k_max, double weight,
                            std::vector<Matrix>& sums) {
  const Matrix K = gain_from(node.P_prior, node.X, g.C, g.W, p, nullptr, k);
  sums[k - 1] += weight * K;
  if (k == k_max)
    return;
  if (q > 0.0)
    enumerate_gains(g, p, q, gain_step(g, node, K, true, p), k + 1, k_max, weight * q, sums);
  if (q < 1.0)
    enumerate_gains(g, p, q, gain_step(g, node, K, false, p), k + 1, k_max, weight * (1.0 - q),
                    sums);
}

} // namespace detail

/// E{K_k} for k = 1..k_max.
inline std::vector<GainEstimate>
expected_gain_sequence(const GainRecursion& g, const ChannelProbabilities& probs,
                       std::size_t k_max, GainMethod method,
                       std::size_t budget = kDefaultGainBudget, std::uint64_t seed = 1,
                       std::size_t threads = 1) {
  if (k_max < 1)
    throw ValidationError("expected gain requires k >= 1");
  const auto n = g.A.rows(), l = g.C.rows();
  const double p = probs.p, q = probs.q;
  std::vector<GainEstimate> out(k_max);
  for (std::size_t k = 1; k <= k_max; ++k)
    out[k - 1] = {k, Matrix::Zero(n, l), Matrix::Zero(n, l)};

  const detail::GainNode root{g.P1, g.X1};
  if (method == GainMethod::exact) {
    if (k_max - 1 > kMaxExactHistory)
      throw BudgetError("exact enumeration limited to histories of length " +
                        std::to_string(kMaxExactHistory) + "; use the Monte Carlo method");
    std::vector<Matrix> sums(k_max, Matrix::Zero(n, l));
    detail::enumerate_gains(g, p, q, root, 1, k_max, 1.0, sums);
    for (std::size_t k = 0; k < k_max; ++k)
      out[k].mean = sums[k];
    return out;
  }

  if (budget < 2)
    throw ValidationError("Monte Carlo budget must be at least 2 histories");
  constexpr std::size_t kChunk = 1000;
  const std::size_t chunks = (budget + kChunk - 1) / kChunk;
  struct Partial {
    std::vector<Matrix> sum, sumsq;
  };
  std::vector<Partial> partials(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Partial part{std::vector<Matrix>(k_max, Matrix::Zero(n, l)),
                 std::vector<Matrix>(k_max, Matrix::Zero(n, l))};
    Rng rng(trial_seed(seed, c));
    const std::size_t count = std::min(kChunk, budget - c * kChunk);
    for (std::size_t h = 0; h < count; ++h) {
      detail::GainNode node = root;
      for (std::size_t k = 1; k <= k_max; ++k) {
        const Matrix K = detail::gain_from(node.P_prior, node.X, g.C, g.W, p, nullptr, k);
        part.sum[k - 1] += K;
        part.sumsq[k - 1] += K.cwiseAbs2();
        if (k < k_max)
          node = detail::gain_step(g, node, K, rng.bernoulli(q), p);
      }
    }
    partials[c] = std::move(part);
  });
  for (std::size_t k = 0; k < k_max; ++k) {
    Matrix sum = Matrix::Zero(n, l), sumsq = Matrix::Zero(n, l);
    for (const auto& part : partials) {
      sum += part.sum[k];
      sumsq += part.sumsq[k];
    }
    const double N = double(budget);
    out[k].mean = sum / N;
    const Matrix var = ((sumsq / N - out[k].mean.cwiseAbs2()) * (N / (N - 1.0))).cwiseMax(0.0);
    out[k].std_error = (var / N).cwiseSqrt();
  }
  return out;
}

inline GainEstimate expected_gain(const GainRecursion& g, const ChannelProbabilities& probs,
                                  std::size_t k, GainMethod method,
                                  std::size_t budget = kDefaultGainBudget, std::uint64_t seed = 1,
                                  std::size_t threads = 1) {
  return expected_gain_sequence(g, probs, k, method, budget, seed, threads).back();
}

// ---------------------------------------------------------------------------
// Mean stability
// ---------------------------------------------------------------------------

struct MeanStabilityReport {
  double rho_control = 0.0;            ///< rho(A - pqBF)
  std::vector<double> rho_estimation;  ///< rho(A - pq A E{K_k} C), k = 1..horizon
  std::size_t first_k = 1;
  std::size_t last_k = 0;
  bool settled = false; ///< |rho_k - rho_{k-1}| < 1e-6 at the end of the window
  bool verdict = false;
  GainMethod method = GainMethod::exact;
  double max_std_error = 0.0;
};

inline MeanStabilityReport mean_stability(const ClosedLoopModel& model, const Matrix& F,
                                          const ChannelProbabilities& probs, std::size_t horizon,
                                          GainMethod method,
                                          std::size_t budget = kDefaultGainBudget,
                                          std::uint64_t seed = 1, std::size_t threads = 1) {
  model.validate();
  numerics::require_shape(F, model.input_dim(), model.state_dim(), "controller.F");
  if (horizon < 1)
    throw ValidationError("stability horizon must be at least 1");
  const double pq = probs.p * probs.q;
  MeanStabilityReport rep;
  rep.method = method;
  rep.rho_control = numerics::spectral_radius(model.A - pq * model.B * F);
  const auto gains = expected_gain_sequence(GainRecursion::from(model, probs), probs, horizon,
                                            method, budget, seed, threads);
  bool estimation_ok = true;
  for (const auto& g : gains) {
    const double rho = numerics::spectral_radius(model.A - pq * model.A * g.mean * model.C);
    rep.rho_estimation.push_back(rho);
    estimation_ok = estimation_ok && rho < 1.0;
    if (g.std_error.size() > 0)
      rep.max_std_error = std::max(rep.max_std_error, g.std_error.maxCoeff());
  }
  rep.first_k = 1;
  rep.last_k = horizon;
  const auto& r = rep.rho_estimation;
  rep.settled = r.size() >= 2 && std::abs(r[r.size() - 1] - r[r.size() - 2]) < 1e-6;
  rep.verdict = rep.rho_control < 1.0 && estimation_ok;
  return rep;
}

// ---------------------------------------------------------------------------
// Structural indices and peak covariance conditions
// ---------------------------------------------------------------------------

inline constexpr double kRankTolerance = 1e-12;

struct StructuralIndices {
  std::size_t controllability = 0; ///< I_1
  std::size_t observability = 0;   ///< I_0
  std::size_t combined() const { return std::max(controllability, observability); }
};

/// Smallest I_1 with rank [B, AB, ..., A^{I_1-1}B] = n and I_0 with
/// rank [C; CA; ...; C A^{I_0-1}] = n.
inline StructuralIndices indices(const Matrix& A, const Matrix& B, const Matrix& C) {
  numerics::require_square(A, "A");
  const auto n = A.rows();
  numerics::require_shape(B, n, B.cols(), "B");
  numerics::require_shape(C, C.rows(), n, "C");
  StructuralIndices out;
  Matrix ctrb(n, 0), obsv(0, n);
  Matrix AkB = B, CAk = C;
  for (Eigen::Index i = 1; i <= n; ++i) {
    if (out.controllability == 0) {
      ctrb.conservativeResize(n, ctrb.cols() + B.cols());
      ctrb.rightCols(B.cols()) = AkB;
      if (Eigen::Index(numerics::numerical_rank(ctrb, kRankTolerance)) == n)
        out.controllability = std::size_t(i);
      AkB = A * AkB;
    }
    if (out.observability == 0) {
      obsv.conservativeResize(obsv.rows() + C.rows(), n);
      obsv.bottomRows(C.rows()) = CAk;
      if (Eigen::Index(numerics::numerical_rank(obsv, kRankTolerance)) == n)
        out.observability = std::size_t(i);
      CAk = CAk * A;
    }
  }
  if (out.controllability == 0)
    throw ValidationError("(A,B) is not controllable");
  if (out.observability == 0)
    throw ValidationError("(A,C) is not observable");
  return out;
}

/// d_i = || A^i (A^i)' || for i = 1..count.
inline std::vector<double> d_coefficients(const Matrix& A, std::size_t count) {
  numerics::require_square(A, "A");
  if (count < 1)
    throw ValidationError("d coefficient count must be at least 1");
  std::vector<double> d;
  Matrix Ai = A;
  for (std::size_t i = 1; i <= count; ++i) {
    d.push_back(numerics::induced_two_norm(Ai * Ai.transpose()));
    Ai = Ai * A;
  }
  return d;
}

struct SeriesOptions {
  double tolerance = 1e-12;
  std::size_t max_terms = 10'000'000;
};

struct PeakCovReport {
  double q = 0.0;
  double cond1_threshold = 0.0; ///< 1 - 1/max|lambda(A)|^2
  bool cond1 = false;
  double lhs = 0.0;             ///< +inf when the series diverges
  std::optional<bool> cond2;    ///< empty when indeterminate
  double prefactor = 0.0;       ///< (1-q) q d_1
  double bracket = 0.0;         ///< 1 + sum_{i=1}^{I-1} d_i q^i
  double series = 0.0;          ///< sum_j ||A^j||^2 (1-q)^{j-1}
  std::size_t I = 0;
  std::optional<std::size_t> I0;
  std::optional<std::size_t> I1;
  std::vector<double> d;
  std::size_t truncation_terms = 0;
  bool stable() const { return cond1 && cond2.value_or(false); }
};

/// Sufficient conditions for a stable peak covariance process (p = 1):
///  (i)  q >= 1 - 1/max|lambda_i(A)|^2
///  (ii) (1-q) q d_1 [1 + sum_{i=1}^{I-1} d_i q^i] sum_{j>=1} ||A^j||^2 (1-q)^{j-1} < 1
inline PeakCovReport peak_cov_condition(const Matrix& A, double q, const std::vector<double>& d,
                                        std::size_t I, const SeriesOptions& opts = {}) {
  numerics::require_square(A, "A");
  if (!(q >= 0.0 && q <= 1.0))
    throw ValidationError("q must lie in [0,1]");
  if (I < 1)
    throw ValidationError("index I must be at least 1");
  if (d.size() < std::max<std::size_t>(I - 1, 1))
    throw ValidationError("need at least max(I-1,1) d coefficients, got " +
                          std::to_string(d.size()));

  PeakCovReport rep;
  rep.q = q;
  rep.I = I;
  rep.d = d;
  const double lam = numerics::spectral_radius(A);
  rep.cond1_threshold = lam > 0.0 ? 1.0 - 1.0 / (lam * lam) : -std::numeric_limits<double>::infinity();
  rep.cond1 = q >= rep.cond1_threshold;

  rep.prefactor = (1.0 - q) * q * d[0];
  rep.bracket = 1.0;
  for (std::size_t i = 1; i + 1 <= I; ++i)
    rep.bracket += d[i - 1] * std::pow(q, double(i));

  if (q == 1.0) {
    rep.lhs = 0.0;
    rep.cond2 = true;
    return rep;
  }
  if (!rep.cond1) {
    rep.lhs = std::numeric_limits<double>::infinity();
    rep.series = rep.lhs;
    rep.cond2.reset();
    return rep;
  }

  // term_j = ||S_j||^2 with S_j = A^j (1-q)^{(j-1)/2}, kept scaled to avoid overflow.
  const double shrink = std::sqrt(1.0 - q);
  Matrix S = A;
  double partial = 0.0, term = 0.0;
  std::size_t j = 0;
  for (j = 1; j <= opts.max_terms; ++j) {
    const double s = numerics::induced_two_norm(S);
    term = s * s;
    partial += term;
    if (term < opts.tolerance * partial || partial == 0.0)
      break;
    S = shrink * S * A;
  }
  rep.truncation_terms = std::min(j, opts.max_terms);
  if (j > opts.max_terms && term >= opts.tolerance * partial) {
    rep.lhs = std::numeric_limits<double>::infinity();
    rep.series = rep.lhs;
    rep.cond2.reset();
    return rep;
  }
  rep.series = partial;
  rep.lhs = rep.prefactor * rep.bracket * rep.series;
  rep.cond2 = rep.lhs < 1.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Stopping times and peak covariance process
// ---------------------------------------------------------------------------

struct StoppingTimes {
  std::vector<std::size_t> alphas; ///< 1-based: first step of each outage
  std::vector<std::size_t> betas;  ///< 1-based: first step the channel is back
};

struct PeakCovarianceSeries {
  std::vector<Matrix> values; ///< L^p_n = L_{beta_n}
  std::vector<double> norms;
};

struct PeakExtraction {
  StoppingTimes times;
  PeakCovarianceSeries peaks;
  std::size_t dropped_trailing = 0; ///< 1 if the sequence ends inside an outage
};

/// covariance_sequence[k-1] holds L_k for step k.
inline PeakExtraction extract_peaks(const std::vector<bool>& s_r,
                                    const std::vector<Matrix>& covariance_sequence) {
  if (s_r.size() != covariance_sequence.size())
    throw ValidationError("s_r and covariance sequences have different lengths (" +
                          std::to_string(s_r.size()) + " vs " +
                          std::to_string(covariance_sequence.size()) + ")");
  if (s_r.empty())
    return {};
  if (!s_r.front())
    throw ValidationError("peak extraction requires s_r at step 1 to be 1");
  PeakExtraction out;
  bool in_outage = false;
  for (std::size_t k = 2; k <= s_r.size(); ++k) {
    const bool on = s_r[k - 1];
    if (!in_outage && !on) {
      out.times.alphas.push_back(k);
      in_outage = true;
    } else if (in_outage && on) {
      out.times.betas.push_back(k);
      in_outage = false;
    }
  }
  if (in_outage) {
    out.times.alphas.pop_back();
    out.dropped_trailing = 1;
  }
  for (std::size_t beta : out.times.betas) {
    out.peaks.values.push_back(covariance_sequence[beta - 1]);
    out.peaks.norms.push_back(numerics::induced_two_norm(covariance_sequence[beta - 1]));
  }
  return out;
}

/// L_k = blockdiag(P_k, M_k), k = 1..T, for the p = 1 closed loop driven by a
/// receiver-switch sequence:
///   P_{k+1} = A P A' + p_j B V B' - s_r A P C'(C P C' + W)^-1 C P A'
///   M_{k+1} = A M A' + T_k - s_r (B F M A' + A M F'B' - B F M F'B')
/// with T_k = s_r A P C'(C P C' + W)^-1 C P A' and p_j = p_d(s_r).
inline std::vector<Matrix> peak_covariance_process(const ClosedLoopModel& model, const Matrix& F,
                                                   const ChannelProbabilities& probs,
                                                   const std::vector<bool>& s_r) {
  model.validate();
  numerics::require_shape(F, model.input_dim(), model.state_dim(), "controller.F");
  const Matrix& A = model.A;
  const Matrix& B = model.B;
  const Matrix& C = model.C;
  const Matrix BVB = B * model.V * B.transpose();
  const Matrix BF = B * F;

  Matrix P = model.P1;
  const Vector xh = model.initial_estimate();
  Matrix M = xh * xh.transpose();
  std::vector<Matrix> out;
  out.reserve(s_r.size());
  for (std::size_t k = 0; k < s_r.size(); ++k) {
    out.push_back(numerics::block_diagonal(P, M));
    const bool on = s_r[k];
    Matrix T = Matrix::Zero(A.rows(), A.rows());
    if (on) {
      const Matrix CP = C * P;
      T = A * CP.transpose() * (CP * C.transpose() + model.W).ldlt().solve(CP) * A.transpose();
    }
    P = numerics::symmetrize(A * P * A.transpose() + probs.p_d(on) * BVB - T);
    Matrix Mn = A * M * A.transpose() + T;
    if (on)
      Mn -= BF * M * A.transpose() + A * M * BF.transpose() - BF * M * BF.transpose();
    M = numerics::symmetrize(Mn);
  }
  return out;
}

} // namespace twoswitch
