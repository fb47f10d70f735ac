#pragma once

// Backward dynamic programming over the information state (x̂, P) of the
// scalar closed loop. The filter recursion sits inside the transition, so the
// optimal control can (and for p < 1 does) depend on the error covariance.
//
// Value tables are indexed by (x̂, P) and by the receiver switch of the
// current step. Per step with switch s_r and control u:
//   prior      x̂⁻ = a x̂ + p s_r b u
//              P⁻ = a² P + p(1-p) s_r b² u² + p_d b² v
//   next s_r'  = 0 (prob 1-q): posterior = prior
//   next s_r'  = 1 (prob q):   y' ~ N(c x̂⁻, c² P⁻ + w) w.p. p, else N(0, w);
//                              linear filter update with W' = w + (p-p²) c² X
// The y' integral uses Gauss-Hermite quadrature; off-grid lookups are bilinear
// with coordinates clamped to the grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "twoswitch/channel.hpp"
#include "twoswitch/errors.hpp"
#include "twoswitch/numerics.hpp"
#include "twoswitch/parallel.hpp"
#include "twoswitch/trajectory.hpp"

namespace twoswitch {

struct ScalarPlant {
  double a = 1.0;
  double b = 1.0;
  double c = 1.0;
  double v = 0.0; ///< actuator-side noise variance (may be zero here)
  double w = 1.0;
  double q_stage = 1.0;
  double q_terminal = 1.0;
  double r = 0.0;

  void validate() const {
    for (double x : {a, b, c, v, w, q_stage, q_terminal, r})
      if (!std::isfinite(x))
        throw ValidationError("scalar plant has non-finite parameters");
    if (w <= 0.0)
      throw ValidationError("scalar plant: measurement noise w must be positive");
    if (v < 0.0 || q_stage < 0.0 || q_terminal < 0.0 || r < 0.0)
      throw ValidationError("scalar plant: v, Q, Q_N and R must be nonnegative");
  }
};

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = n == 1 ? lo : lo + (hi - lo) * double(i) / double(n - 1);
  return out;
}

struct DpGrid {
  std::vector<double> xhat = linspace(-2.0, 2.0, 41);
  std::vector<double> cov = linspace(0.1, 4.0, 21);
  std::vector<double> control = linspace(-4.0, 4.0, 801);
  std::size_t quadrature_nodes = 15;

  double xhat_resolution() const {
    double h = 0.0;
    for (std::size_t i = 1; i < xhat.size(); ++i)
      h = std::max(h, xhat[i] - xhat[i - 1]);
    return h;
  }

  void validate() const {
    if (xhat.size() < 3 || cov.size() < 3)
      throw ValidationError("DP grid too coarse: need at least 3 points per axis");
    if (control.empty())
      throw ValidationError("DP control grid must not be empty");
    if (quadrature_nodes < 1)
      throw ValidationError("DP quadrature needs at least one node");
    auto increasing = [](const std::vector<double>& g) {
      for (std::size_t i = 1; i < g.size(); ++i)
        if (!(g[i] > g[i - 1]))
          return false;
      return true;
    };
    if (!increasing(xhat) || !increasing(cov))
      throw ValidationError("DP grids must be strictly increasing");
    if (cov.front() < 0.0)
      throw ValidationError("DP covariance grid must be nonnegative");
  }
};

/// Nodes and weights for E[f(Z)], Z ~ N(0,1) (probabilists' Hermite, Golub-Welsch).
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline Quadrature gauss_hermite(std::size_t n) {
  Matrix J = Matrix::Zero(Eigen::Index(n), Eigen::Index(n));
  for (std::size_t i = 1; i < n; ++i) {
    J(Eigen::Index(i), Eigen::Index(i - 1)) = std::sqrt(double(i));
    J(Eigen::Index(i - 1), Eigen::Index(i)) = std::sqrt(double(i));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(J);
  Quadrature out;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.nodes.push_back(es.eigenvalues()(Eigen::Index(i)));
    const double v0 = es.eigenvectors()(0, Eigen::Index(i));
    out.weights.push_back(v0 * v0);
    total += v0 * v0;
  }
  for (double& w : out.weights)
    w /= total;
  return out;
}

struct DpStep {
  std::size_t steps_to_go = 0; ///< 1 for V_{N-1}, 2 for V_{N-2}, ...
  Matrix value_sr1;            ///< rows x̂, columns P
  Matrix value_sr0;
  Matrix u_star;               ///< minimizer when s_r = 1 (control is inert when s_r = 0)
};

struct DpDemoResult {
  DpGrid grid;
  ChannelProbabilities probs;
  Matrix terminal;
  std::vector<DpStep> steps; ///< steps[i] has steps_to_go = i + 1

  /// Columns: steps_to_go, xhat, P, u_star, value (s_r = 1 tables).
  void write_csv(std::ostream& os) const {
    os << "steps_to_go,xhat,P,u_star,value\n";
    for (const auto& st : steps)
      for (std::size_t i = 0; i < grid.xhat.size(); ++i)
        for (std::size_t j = 0; j < grid.cov.size(); ++j)
          os << st.steps_to_go << ',' << format_number(grid.xhat[i]) << ','
             << format_number(grid.cov[j]) << ','
             << format_number(st.u_star(Eigen::Index(i), Eigen::Index(j))) << ','
             << format_number(st.value_sr1(Eigen::Index(i), Eigen::Index(j))) << '\n';
  }
};

namespace detail {

class GridInterpolator {
public:
  GridInterpolator(const std::vector<double>& xs, const std::vector<double>& ys,
                   const Matrix& values)
      : xs_(xs), ys_(ys), values_(values) {}

  double operator()(double x, double y) const {
    auto locate = [](const std::vector<double>& g, double& t) {
      t = std::clamp(t, g.front(), g.back());
      auto it = std::upper_bound(g.begin(), g.end(), t);
      std::size_t hi = std::min<std::size_t>(std::size_t(it - g.begin()), g.size() - 1);
      std::size_t lo = hi == 0 ? 0 : hi - 1;
      if (hi == lo)
        hi = lo + 1;
      const double frac = (t - g[lo]) / (g[hi] - g[lo]);
      return std::pair{lo, frac};
    };
    auto [i, fx] = locate(xs_, x);
    auto [j, fy] = locate(ys_, y);
    const auto I = Eigen::Index(i), J = Eigen::Index(j);
    return (1 - fx) * (1 - fy) * values_(I, J) + fx * (1 - fy) * values_(I + 1, J) +
           (1 - fx) * fy * values_(I, J + 1) + fx * fy * values_(I + 1, J + 1);
  }

private:
  const std::vector<double>& xs_;
  const std::vector<double>& ys_;
  const Matrix& values_;
};

} // namespace detail

/// Expected cost-to-go E{V_{k+1}} after applying u from posterior (x̂, P) with
/// receiver switch s_r, given the next-step value tables.
inline double dp_continuation(const ScalarPlant& plant, const ChannelProbabilities& probs,
                              const Quadrature& quad, const detail::GridInterpolator& next_sr1,
                              const detail::GridInterpolator& next_sr0, double xhat, double P,
                              bool s_r, double u) {
  const double p = probs.p, q = probs.q;
  const double sr = s_r ? 1.0 : 0.0;
  const double pd = probs.p_d(s_r);
  const double xm = plant.a * xhat + p * sr * plant.b * u;
  const double Pm = plant.a * plant.a * P + p * (1 - p) * sr * plant.b * plant.b * u * u +
                    pd * plant.b * plant.b * plant.v;
  const double X = xm * xm + Pm;

  double value = (1.0 - q) * next_sr0(xm, Pm);
  if (q > 0.0) {
    const double c = plant.c;
    const double w_eff = plant.w + (p - p * p) * c * c * X;
    const double gain = Pm * p * c / (p * p * c * c * Pm + w_eff);
    const double P_post = Pm * (1.0 - p * gain * c);
    const double sd_on = std::sqrt(c * c * Pm + plant.w);
    const double sd_off = std::sqrt(plant.w);
    double expect = 0.0;
    for (std::size_t n = 0; n < quad.nodes.size(); ++n) {
      const double z = quad.nodes[n];
      const double y_on = c * xm + sd_on * z;
      const double y_off = sd_off * z;
      expect += quad.weights[n] * (p * next_sr1(xm + gain * (y_on - p * c * xm), P_post) +
                                   (1.0 - p) * next_sr1(xm + gain * (y_off - p * c * xm), P_post));
    }
    value += q * expect;
  }
  return value;
}

inline DpDemoResult separation_demo(const ScalarPlant& plant, const ChannelProbabilities& probs,
                                    std::size_t horizon, const DpGrid& grid = {},
                                    std::size_t threads = 1) {
  plant.validate();
  grid.validate();
  if (horizon < 1)
    throw ValidationError("DP horizon must be at least 1");
  const auto nx = Eigen::Index(grid.xhat.size()), nP = Eigen::Index(grid.cov.size());
  const Quadrature quad = gauss_hermite(grid.quadrature_nodes);

  DpDemoResult result;
  result.grid = grid;
  result.probs = probs;
  result.terminal.resize(nx, nP);
  for (Eigen::Index i = 0; i < nx; ++i)
    for (Eigen::Index j = 0; j < nP; ++j)
      result.terminal(i, j) = plant.q_terminal * (grid.xhat[std::size_t(i)] * grid.xhat[std::size_t(i)] +
                                                  grid.cov[std::size_t(j)]);

  Matrix next1 = result.terminal, next0 = result.terminal;
  for (std::size_t togo = 1; togo <= horizon; ++togo) {
    DpStep st;
    st.steps_to_go = togo;
    st.value_sr1.resize(nx, nP);
    st.value_sr0.resize(nx, nP);
    st.u_star.resize(nx, nP);
    const detail::GridInterpolator f1(result.grid.xhat, result.grid.cov, next1);
    const detail::GridInterpolator f0(result.grid.xhat, result.grid.cov, next0);
    parallel_for(std::size_t(nx), threads, [&](std::size_t row) {
      const auto i = Eigen::Index(row);
      const double xh = grid.xhat[row];
      for (Eigen::Index j = 0; j < nP; ++j) {
        const double P = grid.cov[std::size_t(j)];
        const double stage = plant.q_stage * (xh * xh + P);
        double best = std::numeric_limits<double>::infinity();
        double best_u = 0.0;
        for (double u : grid.control) {
          const double cost = stage + plant.r * probs.p * u * u +
                              dp_continuation(plant, probs, quad, f1, f0, xh, P, true, u);
          if (cost < best) {
            best = cost;
            best_u = u;
          }
        }
        st.value_sr1(i, j) = best;
        st.u_star(i, j) = best_u;
        st.value_sr0(i, j) = stage + dp_continuation(plant, probs, quad, f1, f0, xh, P, false, 0.0);
      }
    });
    next1 = st.value_sr1;
    next0 = st.value_sr0;
    result.steps.push_back(std::move(st));
  }
  return result;
}

struct RatioSpread {
  double max_spread = 0.0; ///< max over x̂ != 0 of (max_P - min_P) u*(x̂,P)/x̂
  double at_xhat = 0.0;
  double max_control_spread = 0.0; ///< max over x̂ of (max_P - min_P) u*(x̂,P)
  double control_at_xhat = 0.0;
};

/// Variation of u*/x̂ across the P-grid; zero for a controller linear in x̂.
inline RatioSpread ratio_spread(const DpDemoResult& result, std::size_t step_index) {
  const DpStep& st = result.steps.at(step_index);
  RatioSpread out;
  for (std::size_t i = 0; i < result.grid.xhat.size(); ++i) {
    const double xh = result.grid.xhat[i];
    const Eigen::RowVectorXd u = st.u_star.row(Eigen::Index(i));
    if (u.maxCoeff() - u.minCoeff() > out.max_control_spread) {
      out.max_control_spread = u.maxCoeff() - u.minCoeff();
      out.control_at_xhat = xh;
    }
    if (std::abs(xh) < 1e-12)
      continue;
    const Eigen::RowVectorXd ratio = st.u_star.row(Eigen::Index(i)) / xh;
    const double spread = ratio.maxCoeff() - ratio.minCoeff();
    if (spread > out.max_spread) {
      out.max_spread = spread;
      out.at_xhat = xh;
    }
  }
  return out;
}

} // namespace twoswitch
