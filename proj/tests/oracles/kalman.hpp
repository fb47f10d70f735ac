#pragma once

// Textbook Kalman filter written against plain std::vector arithmetic, so it
// shares no code with the library.

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0)); }

inline Mat mul(const Mat& a, const Mat& b) {
  Mat out = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j)
        out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Vec mul(const Mat& a, const Vec& x) {
  Vec out(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      out[i] += a[i][j] * x[j];
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out = zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j)
      out[j][i] = a[i][j];
  return out;
}

inline Mat add(const Mat& a, const Mat& b, double sb = 1.0) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j)
      out[i][j] += sb * b[i][j];
  return out;
}

/// Gauss-Jordan inverse with partial pivoting.
inline Mat inverse(Mat a) {
  const std::size_t n = a.size();
  Mat inv = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i)
    inv[i][i] = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c]))
        piv = r;
    std::swap(a[c], a[piv]);
    std::swap(inv[c], inv[piv]);
    const double d = a[c][c];
    for (std::size_t j = 0; j < n; ++j) {
      a[c][j] /= d;
      inv[c][j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r)
      if (r != c) {
        const double f = a[r][c];
        for (std::size_t j = 0; j < n; ++j) {
          a[r][j] -= f * a[c][j];
          inv[r][j] -= f * inv[c][j];
        }
      }
  }
  return inv;
}

struct KalmanStep {
  Vec x_post;
  Mat P_post;
};

/// One predict (skipped at the first step) and update cycle.
class Kalman {
public:
  Kalman(Mat A, Mat C, Mat V, Mat W, Vec x0, Mat P0)
      : A_(std::move(A)), C_(std::move(C)), V_(std::move(V)), W_(std::move(W)),
        x_(std::move(x0)), P_(std::move(P0)) {}

  KalmanStep step(const Vec& y, bool first) {
    if (!first) {
      x_ = mul(A_, x_);
      P_ = add(mul(mul(A_, P_), transpose(A_)), V_);
    }
    const Mat Ct = transpose(C_);
    const Mat S = add(mul(mul(C_, P_), Ct), W_);
    const Mat K = mul(mul(P_, Ct), inverse(S));
    Vec innov = y;
    const Vec Cx = mul(C_, x_);
    for (std::size_t i = 0; i < innov.size(); ++i)
      innov[i] -= Cx[i];
    const Vec dx = mul(K, innov);
    for (std::size_t i = 0; i < x_.size(); ++i)
      x_[i] += dx[i];
    P_ = add(P_, mul(mul(K, C_), P_), -1.0);
    return {x_, P_};
  }

private:
  Mat A_, C_, V_, W_;
  Vec x_;
  Mat P_;
};

} // namespace oracle
