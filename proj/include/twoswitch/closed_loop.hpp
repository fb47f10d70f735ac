#pragma once

// Closed loop over two cognitive-radio links sharing the same switches:
//   x_{k+1} = A x_k + B s_t (s_r u_k + v_k)
//   y_k     = s_r (s_t C x_k + w_k)
// The controller sits with the estimator, so it sees s_r but never s_t.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "twoswitch/channel.hpp"
#include "twoswitch/estimator.hpp"
#include "twoswitch/numerics.hpp"
#include "twoswitch/rng.hpp"
#include "twoswitch/trajectory.hpp"

namespace twoswitch {

struct ClosedLoopModel {
  Matrix A;
  Matrix B;
  Matrix C;
  Matrix V; ///< actuator-side noise covariance (inputs x inputs), enters as B v
  Matrix W;
  Vector x1;
  std::optional<Vector> xhat1;
  Matrix P1;

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index input_dim() const { return B.cols(); }
  Eigen::Index output_dim() const { return C.rows(); }
  Vector initial_estimate() const { return xhat1.value_or(x1); }

  void validate() const {
    using namespace numerics;
    require_square(A, "model.A");
    const auto n = A.rows();
    require_shape(B, n, B.cols(), "model.B");
    require_shape(C, C.rows(), n, "model.C");
    require_shape(V, B.cols(), B.cols(), "model.V");
    require_shape(W, C.rows(), C.rows(), "model.W");
    require_shape(P1, n, n, "model.P1");
    if (x1.size() != n)
      throw DimensionError("model.x1 must have length " + std::to_string(n));
    if (xhat1 && xhat1->size() != n)
      throw DimensionError("model.xhat1 must have length " + std::to_string(n));
    for (auto [m, name] : {std::pair{&A, "model.A"}, {&B, "model.B"}, {&C, "model.C"},
                           {&V, "model.V"}, {&W, "model.W"}, {&P1, "model.P1"}})
      require_finite(*m, name);
    if (!is_positive_definite(V))
      throw ValidationError("model.V must be symmetric positive definite");
    if (!is_positive_definite(W))
      throw ValidationError("model.W must be symmetric positive definite");
    if (!is_psd(P1))
      throw ValidationError("model.P1 must be symmetric positive semidefinite");
  }
};

struct ClFilterState : FilterState {
  Vector u_prev;
  double p_d = 0.0;
};

struct LinearController {
  Matrix F;           ///< u = -F x̂_{k|k-1} + N r
  Vector feedforward; ///< N; empty means no reference injection

  Vector control(const Vector& x_prior, double reference = 0.0) const {
    if (F.cols() != x_prior.size())
      throw DimensionError("controller gain has " + std::to_string(F.cols()) +
                           " columns, state has " + std::to_string(x_prior.size()));
    Vector u = -F * x_prior;
    if (feedforward.size() == u.size())
      u += feedforward * reference;
    return u;
  }
};

inline ClFilterState cl_init(const ClosedLoopModel& model) {
  model.validate();
  ClFilterState s;
  s.x_prior = s.x_post = model.initial_estimate();
  s.P_prior = s.P_post = model.P1;
  s.X = numerics::symmetrize(model.x1 * model.x1.transpose() + model.P1);
  s.K = Matrix::Zero(model.state_dim(), model.output_dim());
  s.W_eff = model.W;
  s.u_prev = Vector::Zero(model.input_dim());
  s.k = 1;
  return s;
}

/// Control-aware time update from step k posterior to step k+1 prior.
/// `s_r` is the receiver switch at step k, known to the co-located controller.
inline ClFilterState cl_predict(ClFilterState s, const Vector& u, bool s_r,
                                const ChannelProbabilities& probs, const ClosedLoopModel& model) {
  const Matrix& A = model.A;
  const Matrix& B = model.B;
  if (u.size() != B.cols())
    throw DimensionError("control must have length " + std::to_string(B.cols()));
  if (s.x_post.size() != A.cols())
    throw DimensionError("filter state does not match model dimension");
  const double p = probs.p;
  const double sr = s_r ? 1.0 : 0.0;
  s.p_d = probs.p_d(s_r);
  const Vector Bu = B * u;
  const Vector mean = A * s.x_post + p * sr * Bu;
  s.x_prior = mean;
  s.P_prior = numerics::symmetrize(A * s.P_post * A.transpose() +
                                   p * (1.0 - p) * sr * Bu * Bu.transpose() +
                                   s.p_d * B * model.V * B.transpose());
  s.X = numerics::symmetrize(mean * mean.transpose() + s.P_prior);
  s.u_prev = u;
  ++s.k;
  return s;
}

inline ClFilterState cl_update(ClFilterState s, const Vector& y, bool s_r, double p,
                               const ClosedLoopModel& model) {
  detail::measurement_update(s, model.C, model.W, y, s_r, p);
  return s;
}

inline Vector control(const LinearController& ctrl, const ClFilterState& state,
                      double reference = 0.0) {
  return ctrl.control(state.x_prior, reference);
}

/// LQR gain for the averaged plant x_{k+1} = A x_k + p q B u_k.
inline LinearController scaled_lqr_gain(const Matrix& A, const Matrix& B,
                                        const ChannelProbabilities& probs, const Matrix& Q,
                                        const Matrix& R) {
  return {numerics::lqr_gain(A, probs.p * probs.q * B, Q, R), Vector{}};
}

/// Feedforward N giving unit DC gain from r to output `output` of the nominal
/// loop x_{k+1} = (A - B F) x + B N r.
inline Vector feedforward_gain(const Matrix& A, const Matrix& B, const Matrix& C,
                               const Matrix& F, Eigen::Index output) {
  if (output < 0 || output >= C.rows())
    throw ValidationError("reference.output: index out of range");
  const Eigen::Index n = A.rows();
  const Matrix closed = Matrix::Identity(n, n) - A + B * F;
  Eigen::FullPivLU<Matrix> lu(closed);
  if (!lu.isInvertible())
    throw NumericError("nominal closed loop has a pole at 1; no DC gain");
  const Eigen::RowVectorXd g = C.row(output) * lu.solve(B);
  const double g2 = g.squaredNorm();
  if (g2 == 0.0)
    throw NumericError("reference output is not reachable at DC");
  return g.transpose() / g2;
}

struct Reference {
  bool step = false;
  double amplitude = 1.0;
  std::size_t onset = 0;  ///< first 0-based step at which the step is applied
  Eigen::Index output = 0; ///< output row tracked by the feedforward

  double at(std::size_t step_index) const {
    return step && step_index >= onset ? amplitude : 0.0;
  }
};

inline constexpr double kDivergenceThreshold = 1e6;

struct ClosedLoopRun {
  TrajectoryRecord record;
  std::vector<ClFilterState> states; ///< filled only when requested
};

/// Simulates the closed loop. Per step k: switches are drawn, y_k received,
/// the estimate updated, u_k = -F x̂_{k|k-1} + N r_k applied, then the plant
/// and the estimator advance. Stops early once ||x|| exceeds the threshold.
inline ClosedLoopRun run_closed_loop(const ClosedLoopModel& model, const LinearController& ctrl,
                                     const ChannelSchedule& schedule, const Reference& reference,
                                     std::size_t horizon, TrialStreams& streams,
                                     bool keep_states = false,
                                     double divergence_threshold = kDivergenceThreshold) {
  model.validate();
  schedule.validate();
  numerics::require_shape(ctrl.F, model.input_dim(), model.state_dim(), "controller.F");
  const Matrix Lv = cholesky_lower(model.V, "model.V");
  const Matrix Lw = cholesky_lower(model.W, "model.W");
  const Eigen::Index l = model.output_dim();

  ClosedLoopRun run;
  run.record.state_dim = model.state_dim();
  run.record.input_dim = model.input_dim();
  run.record.output_dim = l;
  run.record.rows.reserve(horizon);

  Vector x = model.x1;
  ClFilterState state = cl_init(model);
  for (std::size_t k = 1; k <= horizon; ++k) {
    const PuTopology& topo = schedule.cyclic(k - 1);
    const ChannelProbabilities probs = probabilities(topo);
    const SwitchSample sw = sample(topo, streams.switches);
    const Vector w = streams.noise.gaussian(Lw);
    const Vector v = streams.noise.gaussian(Lv);

    Vector y = Vector::Zero(l);
    if (sw.s_r)
      y = (sw.s_t ? Vector(model.C * x) : Vector::Zero(l)) + w;
    state = cl_update(std::move(state), y, sw.s_r, probs.p, model);
    if (keep_states)
      run.states.push_back(state);

    const Vector u = ctrl.control(state.x_prior, reference.at(k - 1));

    TrajectoryRow row;
    row.k = k;
    row.x = x;
    row.xhat_prior = state.x_prior;
    row.xhat_post = state.x_post;
    row.u = u;
    row.y = y;
    row.s_t = sw.s_t;
    row.s_r = sw.s_r;
    row.trace_P_post = state.P_post.trace();
    row.diverged = !x.allFinite() || x.norm() > divergence_threshold;
    run.record.rows.push_back(std::move(row));
    if (run.record.rows.back().diverged)
      break;

    const double gate = sw.s_t ? 1.0 : 0.0;
    x = model.A * x + gate * model.B * ((sw.s_r ? u : Vector::Zero(u.size())) + v);
    state = cl_predict(std::move(state), u, sw.s_r, probs, model);
  }
  return run;
}

} // namespace twoswitch
