#pragma once

// Optimal linear estimator for x_k = A x_{k-1} + v_k, y_k = s_r (s_t C x_k + w_k)
// where s_r is known at the estimator and s_t is not. The unknown transmit
// switch is folded into an effective measurement noise
//   W'_k = W + (p - p^2) C X_k C'
// with X_k = E{x_k x_k'} propagated alongside the covariance.

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "twoswitch/channel.hpp"
#include "twoswitch/errors.hpp"
#include "twoswitch/numerics.hpp"
#include "twoswitch/rng.hpp"
#include "twoswitch/trajectory.hpp"

namespace twoswitch {

struct SystemModel {
  Matrix A;
  Matrix C;
  Matrix V; ///< process noise covariance
  Matrix W; ///< measurement noise covariance
  Vector x1; ///< true initial state, used for X_1 = x1 x1' + P1
  std::optional<Vector> xhat1; ///< initial estimate; defaults to x1
  Matrix P1;

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index output_dim() const { return C.rows(); }
  Vector initial_estimate() const { return xhat1.value_or(x1); }

  void validate() const {
    using namespace numerics;
    require_square(A, "model.A");
    const auto n = A.rows();
    require_shape(C, C.rows(), n, "model.C");
    require_shape(V, n, n, "model.V");
    require_shape(W, C.rows(), C.rows(), "model.W");
    require_shape(P1, n, n, "model.P1");
    if (x1.size() != n)
      throw DimensionError("model.x1 must have length " + std::to_string(n));
    if (xhat1 && xhat1->size() != n)
      throw DimensionError("model.xhat1 must have length " + std::to_string(n));
    for (auto [m, name] : {std::pair{&A, "model.A"}, {&C, "model.C"}, {&V, "model.V"},
                           {&W, "model.W"}, {&P1, "model.P1"}})
      require_finite(*m, name);
    if (!is_positive_definite(V))
      throw ValidationError("model.V must be symmetric positive definite");
    if (!is_positive_definite(W))
      throw ValidationError("model.W must be symmetric positive definite");
    if (!is_psd(P1))
      throw ValidationError("model.P1 must be symmetric positive semidefinite");
  }
};

struct FilterState {
  Vector x_prior; ///< x̂_{k|k-1}
  Vector x_post;  ///< x̂_{k|k}
  Matrix P_prior; ///< P_{k|k-1}
  Matrix P_post;  ///< P_{k|k}
  Matrix K;       ///< gain K_k
  Matrix X;       ///< X_k = E{x_k x_k'}
  Matrix W_eff;   ///< W'_k
  std::size_t k = 1;
};

namespace detail {

/// Gain K = P p C' (p^2 C P C' + W')^-1 with W' = W + (p - p^2) C X C'.
/// Depends only on the prior covariance and the second moment X.
inline Matrix gain_from(const Matrix& P_prior, const Matrix& X, const Matrix& C, const Matrix& W,
                        double p, Matrix* W_eff_out = nullptr, std::size_t k = 0) {
  Matrix W_eff = numerics::symmetrize(W + (p - p * p) * C * X * C.transpose());
  const Matrix S = numerics::symmetrize(p * p * C * P_prior * C.transpose() + W_eff);
  Eigen::LDLT<Matrix> ldlt(S);
  // S >= W > 0 by construction, so only a breakdown at machine precision
  // (typically X overflowing on a diverging loop) counts as singular.
  const Vector D = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || !D.allFinite() ||
      D.minCoeff() <= std::numeric_limits<double>::epsilon() * D.maxCoeff())
    throw NumericError("innovation covariance is singular at step " + std::to_string(k));
  if (W_eff_out)
    *W_eff_out = std::move(W_eff);
  // S K' = p C P, S and P symmetric.
  return ldlt.solve(p * C * P_prior).transpose();
}

inline void compute_gain(FilterState& s, const Matrix& C, const Matrix& W, double p) {
  s.K = gain_from(s.P_prior, s.X, C, W, p, &s.W_eff, s.k);
}

inline void measurement_update(FilterState& s, const Matrix& C, const Matrix& W, Vector y,
                               bool s_r, double p) {
  if (!(p >= 0.0 && p <= 1.0))
    throw ValidationError("transmit probability p must lie in [0,1]");
  if (y.size() != C.rows())
    throw DimensionError("measurement must have length " + std::to_string(C.rows()));
  if (!s_r)
    y.setZero();
  compute_gain(s, C, W, p);
  const double sr = s_r ? 1.0 : 0.0;
  s.x_post = s.x_prior + s.K * (y - sr * p * C * s.x_prior);
  s.P_post = numerics::symmetrize(s.P_prior - sr * p * s.K * C * s.P_prior);
}

} // namespace detail

inline FilterState init(const SystemModel& model) {
  model.validate();
  FilterState s;
  s.x_prior = s.x_post = model.initial_estimate();
  s.P_prior = s.P_post = model.P1;
  s.X = numerics::symmetrize(model.x1 * model.x1.transpose() + model.P1);
  s.K = Matrix::Zero(model.state_dim(), model.output_dim());
  s.W_eff = model.W;
  s.k = 1;
  return s;
}

/// Time update from the step-(k-1) posterior to the step-k prior.
inline FilterState predict(FilterState s, const SystemModel& model) {
  const Matrix& A = model.A;
  if (s.x_post.size() != A.cols())
    throw DimensionError("filter state does not match model dimension");
  s.x_prior = A * s.x_post;
  s.P_prior = numerics::symmetrize(A * s.P_post * A.transpose() + model.V);
  s.X = numerics::symmetrize(A * s.X * A.transpose() + model.V);
  ++s.k;
  return s;
}

/// Measurement update. `y` is ignored (treated as zero) when s_r is false.
inline FilterState update(FilterState s, const Vector& y, bool s_r, double p,
                          const SystemModel& model) {
  detail::measurement_update(s, model.C, model.W, y, s_r, p);
  return s;
}

struct FilterRun {
  std::vector<FilterState> states;
  TrajectoryRecord record;
};

/// Simulates the open-loop plant over `horizon` steps and filters it.
inline FilterRun run_filter(const SystemModel& model, const ChannelSchedule& schedule,
                            std::size_t horizon, TrialStreams& streams) {
  model.validate();
  schedule.validate();
  const Matrix Lv = cholesky_lower(model.V, "model.V");
  const Matrix Lw = cholesky_lower(model.W, "model.W");

  FilterRun run;
  run.record.state_dim = model.state_dim();
  run.record.output_dim = model.output_dim();
  run.states.reserve(horizon);
  run.record.rows.reserve(horizon);

  Vector x = model.x1;
  FilterState state = init(model);
  for (std::size_t k = 1; k <= horizon; ++k) {
    if (k > 1) {
      x = model.A * x + streams.noise.gaussian(Lv);
      state = predict(std::move(state), model);
    }
    const PuTopology& topo = schedule.cyclic(k - 1);
    const ChannelProbabilities probs = probabilities(topo);
    const SwitchSample sw = sample(topo, streams.switches);
    const Vector w = streams.noise.gaussian(Lw);
    Vector y = Vector::Zero(model.output_dim());
    if (sw.s_r)
      y = (sw.s_t ? Vector(model.C * x) : Vector::Zero(model.output_dim())) + w;
    state = update(std::move(state), y, sw.s_r, probs.p, model);

    TrajectoryRow row;
    row.k = k;
    row.x = x;
    row.xhat_prior = state.x_prior;
    row.xhat_post = state.x_post;
    row.y = y;
    row.s_t = sw.s_t;
    row.s_r = sw.s_r;
    row.trace_P_post = state.P_post.trace();
    run.record.rows.push_back(std::move(row));
    run.states.push_back(state);
  }
  return run;
}

} // namespace twoswitch
