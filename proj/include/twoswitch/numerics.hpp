#pragma once

// Dense linear algebra shared by the estimator, controller and stability
// modules. Everything here is a pure function of its arguments.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include "twoswitch/errors.hpp"

namespace twoswitch {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace numerics {

/// Eigenvalues above this (negative) floor count as zero in PSD tests.
inline constexpr double kPsdFloor = -1e-9;

inline std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_square(const Matrix& m, std::string_view what) {
  if (m.rows() != m.cols())
    throw DimensionError(std::string(what) + " must be square, got " + shape_of(m));
}

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                          std::string_view what) {
  if (m.rows() != rows || m.cols() != cols)
    throw DimensionError(std::string(what) + " must be " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + shape_of(m));
}

inline void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite())
    throw ValidationError(std::string(what) + " has non-finite entries");
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool is_symmetric(const Matrix& m, double tol = 1e-12) {
  if (m.rows() != m.cols())
    return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

/// max |lambda_i(m)|.
inline double spectral_radius(const Matrix& m) {
  require_square(m, "spectral_radius argument");
  require_finite(m, "spectral_radius argument");
  if (m.size() == 0)
    return 0.0;
  Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw NumericError("eigenvalue iteration did not converge");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Largest singular value.
inline double induced_two_norm(const Matrix& m) {
  require_finite(m, "induced_two_norm argument");
  if (m.size() == 0)
    return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

/// Smallest eigenvalue of the symmetric part of a square matrix.
inline double min_eigenvalue(const Matrix& m) {
  require_square(m, "min_eigenvalue argument");
  if (m.size() == 0)
    return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline bool is_psd(const Matrix& m, double floor = kPsdFloor) {
  return m.rows() == m.cols() && m.allFinite() && is_symmetric(m, 1e-9) &&
         min_eigenvalue(m) >= floor;
}

inline bool is_positive_definite(const Matrix& m) {
  if (m.rows() != m.cols() || !m.allFinite() || !is_symmetric(m, 1e-9))
    return false;
  Eigen::LLT<Matrix> llt(symmetrize(m));
  return llt.info() == Eigen::Success && min_eigenvalue(m) > 0.0;
}

/// Symmetrizes `m` and lifts every eigenvalue to at least `eigen_floor`.
inline Matrix nearest_spd(const Matrix& m, double eigen_floor) {
  require_square(m, "nearest_spd argument");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  Vector lambda = es.eigenvalues().cwiseMax(eigen_floor);
  return symmetrize(es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose());
}

inline Matrix matrix_power(const Matrix& m, std::size_t exponent) {
  require_square(m, "matrix_power argument");
  Matrix result = Matrix::Identity(m.rows(), m.cols());
  for (std::size_t i = 0; i < exponent; ++i)
    result = result * m;
  return result;
}

/// Numerical rank with singular values below `rel_tol * sigma_max` treated as zero.
inline std::size_t numerical_rank(const Matrix& m, double rel_tol = 1e-12) {
  if (m.size() == 0)
    return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  if (s(0) == 0.0)
    return 0;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0))
      ++rank;
  return rank;
}

inline Matrix block_diagonal(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

struct DareOptions {
  double tolerance = 1e-12;
  std::size_t max_iterations = 100000;
};

struct DareSolution {
  Matrix P;
  std::size_t iterations = 0;
  /// Frobenius norm of Ric(P) - P at the returned P.
  double residual = 0.0;
};

namespace detail {

inline void check_dare_inputs(const Matrix& A, const Matrix& B, const Matrix& Q,
                              const Matrix& R) {
  require_square(A, "A");
  require_shape(B, A.rows(), B.cols(), "B");
  require_shape(Q, A.rows(), A.rows(), "Q");
  require_shape(R, B.cols(), B.cols(), "R");
  require_finite(A, "A");
  require_finite(B, "B");
  require_finite(Q, "Q");
  require_finite(R, "R");
  if (!is_psd(Q))
    throw ValidationError("Q must be symmetric positive semidefinite");
  if (!is_positive_definite(R))
    throw ValidationError("R must be symmetric positive definite");
}

/// One application of the Riccati map P -> A'PA - A'PB (R + B'PB)^-1 B'PA + Q.
inline Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                          const Matrix& P) {
  const Matrix BtP = B.transpose() * P;
  const Matrix gain = (R + BtP * B).ldlt().solve(BtP * A);
  return symmetrize(A.transpose() * P * A - A.transpose() * P * B * gain + Q);
}

} // namespace detail

/// Discrete algebraic Riccati equation by fixed-point iteration of the
/// Riccati map starting from P = Q.
inline DareSolution solve_dare_detailed(const Matrix& A, const Matrix& B, const Matrix& Q,
                                        const Matrix& R, const DareOptions& options = {}) {
  detail::check_dare_inputs(A, B, Q, R);
  Matrix P = symmetrize(Q);
  for (std::size_t it = 1; it <= options.max_iterations; ++it) {
    Matrix next = detail::riccati_map(A, B, Q, R, P);
    if (!next.allFinite())
      throw SolverError("Riccati iteration produced non-finite values (is (A,B) stabilizable?)");
    const double change = (next - P).norm();
    P = std::move(next);
    if (change <= options.tolerance * (1.0 + P.norm())) {
      const double residual = (detail::riccati_map(A, B, Q, R, P) - P).norm();
      return {P, it, residual};
    }
  }
  throw SolverError("Riccati iteration did not converge within " +
                    std::to_string(options.max_iterations) + " iterations");
}

inline Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                         const DareOptions& options = {}) {
  return solve_dare_detailed(A, B, Q, R, options).P;
}

/// State-feedback gain F for u = -F x minimizing sum x'Qx + u'Ru.
inline Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                       const DareOptions& options = {}) {
  const Matrix P = solve_dare(A, B, Q, R, options);
  const Matrix BtP = B.transpose() * P;
  return (R + BtP * B).ldlt().solve(BtP * A);
}

} // namespace numerics
} // namespace twoswitch
