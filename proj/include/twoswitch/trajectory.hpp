#pragma once

#include <array>
#include <charconv>
#include <cstddef>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

#include "twoswitch/numerics.hpp"

namespace twoswitch {

/// Shortest decimal that round-trips to the same double.
inline std::string format_number(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc())
    return "nan";
  return std::string(buf.data(), ptr);
}

struct TrajectoryRow {
  std::size_t k = 0;
  Vector x;          ///< true state x_k
  Vector xhat_prior; ///< x̂_{k|k-1}
  Vector xhat_post;  ///< x̂_{k|k}
  Vector u;          ///< applied control u_k (empty for open-loop runs)
  Vector y;          ///< received signal y_k
  bool s_t = false;
  bool s_r = false;
  double trace_P_post = 0.0;
  bool diverged = false;
};

/// Per-step log of one simulated trajectory.
struct TrajectoryRecord {
  Eigen::Index state_dim = 0;
  Eigen::Index input_dim = 0;
  Eigen::Index output_dim = 0;
  std::vector<TrajectoryRow> rows;

  bool diverged() const { return !rows.empty() && rows.back().diverged; }

  std::string csv_header() const {
    std::string h = "k";
    auto cols = [&h](const char* name, Eigen::Index n) {
      for (Eigen::Index i = 1; i <= n; ++i)
        h += "," + std::string(name) + "_" + std::to_string(i);
    };
    cols("x", state_dim);
    cols("xhatpost", state_dim);
    cols("u", input_dim);
    cols("y", output_dim);
    h += ",s_t,s_r,tracePpost,diverged";
    return h;
  }

  /// Columns: k, x_1..x_n, xhatpost_1..n, u_1..m, y_1..l, s_t, s_r, tracePpost, diverged.
  void write_csv(std::ostream& os) const {
    os << csv_header() << '\n';
    for (const auto& r : rows) {
      os << r.k;
      auto put = [&os](const Vector& v, Eigen::Index n) {
        for (Eigen::Index i = 0; i < n; ++i)
          os << ',' << format_number(i < v.size() ? v(i) : 0.0);
      };
      put(r.x, state_dim);
      put(r.xhat_post, state_dim);
      put(r.u, input_dim);
      put(r.y, output_dim);
      os << ',' << int(r.s_t) << ',' << int(r.s_r) << ',' << format_number(r.trace_P_post) << ','
         << int(r.diverged) << '\n';
    }
  }
};

} // namespace twoswitch
