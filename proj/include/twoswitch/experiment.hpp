#pragma once

// Monte Carlo harness. Trials are split into fixed blocks whose partition
// depends only on the trial count; blocks run in parallel and are reduced in
// index order, so results do not depend on the thread count.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "twoswitch/closed_loop.hpp"
#include "twoswitch/estimator.hpp"
#include "twoswitch/parallel.hpp"
#include "twoswitch/reports.hpp"
#include "twoswitch/rng.hpp"
#include "twoswitch/scenario.hpp"

namespace twoswitch {

struct RunOptions {
  std::size_t threads = 1;
};

struct RunSummary {
  std::string name;
  Mode mode = Mode::open_loop;
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::size_t horizon = 0;
  std::size_t diverged_trials = 0;
  double divergence_rate = 0.0;
  std::vector<std::size_t> diverged_at; ///< per trial, step of divergence or 0

  /// Per step k (index k-1): mean of e e' with e = x - x̂_{k|k} over trials
  /// still running at k, and how many there were.
  std::vector<Matrix> error_covariance;
  std::vector<std::size_t> alive;
  std::vector<double> mean_trace_P;
  double max_trace_P = 0.0;

  /// Per output row of C: mean squared (C e)_i over the first and last
  /// quarter of the horizon.
  std::vector<double> mse_initial_quarter;
  std::vector<double> mse_final_quarter;

  ChannelProbabilities probs; ///< channel of the first step
  std::optional<Matrix> F;
  std::optional<Vector> feedforward;
  std::optional<double> rho_nominal; ///< rho(A - BF)
  std::optional<double> rho_scaled;  ///< rho(A - pqBF)

  std::vector<TrajectoryRecord> trajectories; ///< first `scenario.trajectories` trials
  std::vector<std::string> trajectory_files;
  double wall_clock_seconds = 0.0;
};

namespace detail {

struct BlockAccumulator {
  std::vector<Matrix> cov_sum;
  std::vector<std::size_t> alive;
  std::vector<double> trace_sum;
  std::vector<double> mse_init, mse_final;
  std::vector<std::size_t> count_init, count_final;
  double max_trace = 0.0;
  std::vector<std::size_t> diverged_at;
  std::vector<TrajectoryRecord> kept;

  BlockAccumulator(std::size_t horizon, Eigen::Index n, Eigen::Index l)
      : cov_sum(horizon, Matrix::Zero(n, n)), alive(horizon, 0), trace_sum(horizon, 0.0),
        mse_init(std::size_t(l), 0.0), mse_final(std::size_t(l), 0.0),
        count_init(std::size_t(l), 0), count_final(std::size_t(l), 0) {}

  void add(const TrajectoryRecord& rec, const Matrix& C, std::size_t horizon) {
    const std::size_t quarter = std::max<std::size_t>(1, horizon / 4);
    for (const auto& row : rec.rows) {
      if (row.diverged)
        break;
      const std::size_t i = row.k - 1;
      const Vector e = row.x - row.xhat_post;
      cov_sum[i] += e * e.transpose();
      ++alive[i];
      trace_sum[i] += row.trace_P_post;
      max_trace = std::max(max_trace, row.trace_P_post);
      const Vector ye = C * e;
      for (Eigen::Index j = 0; j < ye.size(); ++j) {
        if (row.k <= quarter) {
          mse_init[std::size_t(j)] += ye(j) * ye(j);
          ++count_init[std::size_t(j)];
        }
        if (row.k + quarter > horizon) {
          mse_final[std::size_t(j)] += ye(j) * ye(j);
          ++count_final[std::size_t(j)];
        }
      }
    }
    diverged_at.push_back(rec.diverged() ? rec.rows.back().k : 0);
  }
};

inline std::size_t block_size(std::size_t trials) {
  constexpr std::size_t kMaxBlocks = 64;
  return std::max<std::size_t>(1, (trials + kMaxBlocks - 1) / kMaxBlocks);
}

inline std::string trajectory_file_name(std::size_t trial) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "trajectory_%04zu.csv", trial);
  return buf;
}

} // namespace detail

/// Runs every trial of the scenario. Trial i uses seed trial_seed(seed, i).
inline RunSummary run(const Scenario& scenario, const RunOptions& options = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  scenario.validate();
  const bool closed = scenario.mode == Mode::closed_loop;
  const std::size_t H = scenario.horizon;

  std::optional<SystemModel> open_model;
  std::optional<ClosedLoopModel> cl_model;
  LinearController ctrl;
  if (closed) {
    cl_model = scenario.closed_loop_model();
    ctrl = scenario.build_controller();
  } else {
    open_model = scenario.system_model();
  }
  const Matrix& A = closed ? cl_model->A : open_model->A;
  const Matrix& C = closed ? cl_model->C : open_model->C;

  RunSummary out;
  out.name = scenario.name;
  out.mode = scenario.mode;
  out.seed = scenario.seed;
  out.trials = scenario.trials;
  out.horizon = H;
  out.probs = probabilities(scenario.channel.cyclic(0));
  if (closed) {
    out.F = ctrl.F;
    if (ctrl.feedforward.size() > 0)
      out.feedforward = ctrl.feedforward;
    out.rho_nominal = numerics::spectral_radius(A - cl_model->B * ctrl.F);
    out.rho_scaled =
        numerics::spectral_radius(A - out.probs.p * out.probs.q * cl_model->B * ctrl.F);
  }

  const std::size_t bsize = detail::block_size(scenario.trials);
  const std::size_t blocks = (scenario.trials + bsize - 1) / bsize;
  const std::size_t keep = std::min(scenario.trajectories, scenario.trials);
  std::vector<std::optional<detail::BlockAccumulator>> acc(blocks);
  parallel_for(blocks, options.threads, [&](std::size_t b) {
    detail::BlockAccumulator block(H, A.rows(), C.rows());
    const std::size_t end = std::min(scenario.trials, (b + 1) * bsize);
    for (std::size_t trial = b * bsize; trial < end; ++trial) {
      TrialStreams streams(trial_seed(scenario.seed, trial));
      TrajectoryRecord rec =
          closed ? run_closed_loop(*cl_model, ctrl, scenario.channel, scenario.reference, H,
                                   streams)
                       .record
                 : run_filter(*open_model, scenario.channel, H, streams).record;
      block.add(rec, C, H);
      if (trial < keep)
        block.kept.push_back(std::move(rec));
    }
    acc[b] = std::move(block);
  });

  out.error_covariance.assign(H, Matrix::Zero(A.rows(), A.rows()));
  out.alive.assign(H, 0);
  out.mean_trace_P.assign(H, 0.0);
  const std::size_t l = std::size_t(C.rows());
  std::vector<double> mi(l, 0.0), mf(l, 0.0);
  std::vector<std::size_t> ci(l, 0), cf(l, 0);
  for (auto& block : acc) {
    for (std::size_t k = 0; k < H; ++k) {
      out.error_covariance[k] += block->cov_sum[k];
      out.alive[k] += block->alive[k];
      out.mean_trace_P[k] += block->trace_sum[k];
    }
    for (std::size_t j = 0; j < l; ++j) {
      mi[j] += block->mse_init[j];
      mf[j] += block->mse_final[j];
      ci[j] += block->count_init[j];
      cf[j] += block->count_final[j];
    }
    out.max_trace_P = std::max(out.max_trace_P, block->max_trace);
    out.diverged_at.insert(out.diverged_at.end(), block->diverged_at.begin(),
                           block->diverged_at.end());
    for (auto& rec : block->kept)
      out.trajectories.push_back(std::move(rec));
    block.reset();
  }
  for (std::size_t k = 0; k < H; ++k)
    if (out.alive[k] > 0) {
      out.error_covariance[k] /= double(out.alive[k]);
      out.mean_trace_P[k] /= double(out.alive[k]);
    }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t j = 0; j < l; ++j) {
    out.mse_initial_quarter.push_back(ci[j] ? mi[j] / double(ci[j]) : nan);
    out.mse_final_quarter.push_back(cf[j] ? mf[j] / double(cf[j]) : nan);
  }
  out.diverged_trials =
      std::size_t(std::count_if(out.diverged_at.begin(), out.diverged_at.end(),
                                [](std::size_t k) { return k > 0; }));
  out.divergence_rate = double(out.diverged_trials) / double(scenario.trials);
  for (std::size_t i = 0; i < out.trajectories.size(); ++i)
    out.trajectory_files.push_back(detail::trajectory_file_name(i));
  out.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline nlohmann::json to_json(const RunSummary& s) {
  using nlohmann::json;
  json j;
  j["name"] = s.name;
  j["mode"] = to_string(s.mode);
  j["seed"] = s.seed;
  j["trials"] = s.trials;
  j["horizon"] = s.horizon;
  j["diverged_trials"] = s.diverged_trials;
  j["divergence_rate"] = s.divergence_rate;
  j["channel"] = to_json(s.probs);
  json mi = json::array(), mf = json::array();
  for (double v : s.mse_initial_quarter)
    mi.push_back(detail::finite_or_null(v));
  for (double v : s.mse_final_quarter)
    mf.push_back(detail::finite_or_null(v));
  j["mse_initial_quarter"] = std::move(mi);
  j["mse_final_quarter"] = std::move(mf);
  j["max_trace_P"] = s.max_trace_P;
  j["final_trace_P"] = s.mean_trace_P.empty() ? 0.0 : s.mean_trace_P.back();
  // Largest mean trace(P_{k|k}) over the first and the last quarter of the horizon.
  const std::size_t quarter = s.mean_trace_P.size() / 4;
  double first = 0.0, last = 0.0;
  for (std::size_t k = 0; k < quarter; ++k) {
    first = std::max(first, s.mean_trace_P[k]);
    last = std::max(last, s.mean_trace_P[s.mean_trace_P.size() - 1 - k]);
  }
  j["max_trace_P_initial_quarter"] = detail::finite_or_null(first);
  j["max_trace_P_final_quarter"] = detail::finite_or_null(last);
  if (s.F)
    j["F"] = detail::matrix_json(*s.F);
  if (s.feedforward)
    j["feedforward"] = detail::vector_json(*s.feedforward);
  if (s.rho_nominal)
    j["rho_A_minus_BF"] = *s.rho_nominal;
  if (s.rho_scaled)
    j["rho_A_minus_pqBF"] = *s.rho_scaled;
  json files = json::array();
  for (std::size_t i = 0; i < s.trajectory_files.size(); ++i)
    files.push_back({{"file", s.trajectory_files[i]}, {"diverged", s.trajectories[i].diverged()}});
  j["trajectory_files"] = std::move(files);
  j["wall_clock_seconds"] = s.wall_clock_seconds;
  return j;
}

/// Columns: k, trials, trace_emp, trace_P, c_i_j (row-major).
inline void write_error_covariance_csv(std::ostream& os, const RunSummary& s) {
  const Eigen::Index n = s.error_covariance.empty() ? 0 : s.error_covariance[0].rows();
  os << "k,trials,trace_emp,trace_P";
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      os << ",c_" << (i + 1) << '_' << (j + 1);
  os << '\n';
  for (std::size_t k = 0; k < s.error_covariance.size(); ++k) {
    const Matrix& m = s.error_covariance[k];
    os << (k + 1) << ',' << s.alive[k] << ',' << format_number(m.trace()) << ','
       << format_number(s.mean_trace_P[k]);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        os << ',' << format_number(m(i, j));
    os << '\n';
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw ValidationError("cannot write " + path.string());
  f << text;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

/// Writes trajectory_XXXX.csv, error_covariance.csv and summary.json.
inline void write_artifacts(const std::filesystem::path& dir, const RunSummary& s) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < s.trajectories.size(); ++i) {
    std::ostringstream os;
    s.trajectories[i].write_csv(os);
    write_text(dir / s.trajectory_files[i], os.str());
  }
  std::ostringstream cov;
  write_error_covariance_csv(cov, s);
  write_text(dir / "error_covariance.csv", cov.str());
  write_json(dir / "summary.json", to_json(s));
}

} // namespace twoswitch
