#pragma once

// JSON and CSV views of analysis reports.

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "twoswitch/channel.hpp"
#include "twoswitch/stability.hpp"
#include "twoswitch/trajectory.hpp"

namespace twoswitch {

namespace detail {
/// JSON has no infinity; non-finite values become null.
inline nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}
} // namespace detail

inline nlohmann::json to_json(const ChannelProbabilities& p) {
  return {{"gamma", p.gamma}, {"q", p.q}, {"p", p.p}, {"p_d0", p.p_d0}};
}

inline nlohmann::json to_json(const MeanStabilityReport& r) {
  return {{"rho_control", r.rho_control},
          {"rho_estimation", r.rho_estimation},
          {"first_k", r.first_k},
          {"last_k", r.last_k},
          {"settled", r.settled},
          {"verdict", r.verdict},
          {"method", to_string(r.method)},
          {"max_std_error", r.max_std_error}};
}

inline nlohmann::json to_json(const PeakCovReport& r) {
  nlohmann::json j{{"q", r.q},
                   {"cond1_threshold", detail::finite_or_null(r.cond1_threshold)},
                   {"cond1", r.cond1},
                   {"lhs", detail::finite_or_null(r.lhs)},
                   {"lhs_infinite", std::isinf(r.lhs)},
                   {"cond2", r.cond2 ? nlohmann::json(*r.cond2) : nlohmann::json(nullptr)},
                   {"prefactor", r.prefactor},
                   {"bracket", r.bracket},
                   {"series", detail::finite_or_null(r.series)},
                   {"I", r.I},
                   {"d", r.d},
                   {"truncation_terms", r.truncation_terms},
                   {"stable", r.stable()}};
  j["I0"] = r.I0 ? nlohmann::json(*r.I0) : nlohmann::json(nullptr);
  j["I1"] = r.I1 ? nlohmann::json(*r.I1) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const StoppingTimes& t) {
  return {{"alphas", t.alphas}, {"betas", t.betas}};
}

/// Columns: n, alpha, beta, norm.
inline void write_peaks_csv(std::ostream& os, const PeakExtraction& px) {
  os << "n,alpha,beta,norm\n";
  for (std::size_t i = 0; i < px.peaks.norms.size(); ++i)
    os << (i + 1) << ',' << px.times.alphas[i] << ',' << px.times.betas[i] << ','
       << format_number(px.peaks.norms[i]) << '\n';
}

} // namespace twoswitch
