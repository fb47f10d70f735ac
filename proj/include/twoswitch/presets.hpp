#pragma once

// Built-in experiment presets for the inverted pendulum-cart examples and the
// scalar separation demo.

#include <array>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "twoswitch/experiment.hpp"
#include "twoswitch/reports.hpp"
#include "twoswitch/scenario.hpp"
#include "twoswitch/separation_dp.hpp"
#include "twoswitch/stability.hpp"

namespace twoswitch::presets {

inline const std::vector<std::string>& names() {
  static const std::vector<std::string> n{"pendulum-estimation", "cl-stable",     "cl-diverge",
                                          "cl-rescaled",         "peak-cov-check", "separation-demo"};
  return n;
}

inline Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(Eigen::Index(r.size()), Eigen::Index(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row)
      m(i, j++) = v;
    ++i;
  }
  return m;
}

/// Open-loop pendulum used for estimation.
inline Matrix estimation_A() {
  return rows({{1.0000, -0.0002, 0.0010, -0.0000},
               {0.0000, 0.9996, 0.0001, 0.0010},
               {0.0315, -0.3901, 1.0518, -0.0417},
               {0.0726, -0.8763, 0.1193, 0.9038}});
}

/// Printed process noise; not symmetric, and its symmetric part is indefinite.
inline Matrix estimation_V() {
  return rows({{0.0100, 0.0090, 0.0020, 0.0050},
               {0.0060, 0.0100, 0.0080, 0.0060},
               {0.0040, 0.0080, 0.0030, 0.0070},
               {0.0090, 0.0040, 0.0050, 0.0100}});
}

inline Matrix position_angle_C() { return rows({{1, 0, 0, 0}, {0, 1, 0, 0}}); }
inline Matrix position_C() { return rows({{1, 0, 0, 0}}); }

/// Unstable pendulum-cart used for control.
inline Matrix control_A() {
  return rows({{1.0000, 0.0000, 0.0010, -0.0000},
               {0.0000, 1.0000, -0.0000, 0.0010},
               {0.0000, 0.0022, 0.9842, -0.0000},
               {0.0000, 0.0278, -0.0363, 0.9999}});
}

inline Matrix control_B() { return rows({{0.0000}, {0.0000}, {0.0023}, {0.0052}}); }

/// LQR gain of the deterministic loop.
inline Matrix nominal_F() { return rows({{-13.9382, 173.6752, -29.9030, 18.4750}}); }

inline Matrix rescaled_Q() {
  Matrix Q = Matrix::Zero(4, 4);
  Q.diagonal() << 100, 100, 1000, 100;
  return Q;
}

inline constexpr std::uint64_t kDefaultSeed = 20150601;
inline constexpr std::size_t kControlHorizon = 3000;
inline constexpr std::size_t kControlTrials = 100;

inline Scenario pendulum_estimation() {
  Scenario s;
  s.name = "pendulum-estimation";
  s.mode = Mode::open_loop;
  s.model.A = estimation_A();
  s.model.C = position_angle_C();
  s.model.V = estimation_V();
  s.model.W = 0.001 * Matrix::Identity(2, 2);
  s.model.x1 = Vector::Zero(4);
  s.model.x1(0) = 1.0;
  s.model.xhat1 = Vector::Zero(4);
  s.model.P1 = Matrix::Identity(4, 4);
  s.noise_repair = NoiseRepair::nearest_spd;
  s.channel = ChannelSchedule::single(PuTopology::uniform(1, 1, 1, 0.8));
  s.horizon = kControlHorizon;
  s.trials = 20;
  s.seed = kDefaultSeed;
  s.trajectories = 1;
  return s;
}

inline Scenario closed_loop_base(const std::string& name, std::vector<double> inactivity) {
  Scenario s;
  s.name = name;
  s.mode = Mode::closed_loop;
  s.model.A = control_A();
  s.model.B = control_B();
  s.model.C = position_angle_C();
  s.model.V = Matrix::Constant(1, 1, 1e-3);
  s.model.W = 1e-3 * Matrix::Identity(2, 2);
  s.model.x1 = Vector::Zero(4);
  s.model.xhat1 = Vector::Zero(4);
  s.model.P1 = 0.01 * Matrix::Identity(4, 4);
  s.channel = ChannelSchedule::single(PuTopology{1, 1, 1, std::move(inactivity)});
  s.controller.kind = ControllerKind::fixed;
  s.controller.F = nominal_F();
  s.reference.step = true;
  s.reference.amplitude = 1.0;
  s.reference.onset = 0;
  s.reference.output = 0;
  s.horizon = kControlHorizon;
  s.trials = kControlTrials;
  s.seed = kDefaultSeed;
  s.trajectories = 3;
  s.stability = StabilitySpec{GainMethod::exact, 12, kDefaultGainBudget};
  return s;
}

inline Scenario cl_stable() { return closed_loop_base("cl-stable", {0.8, 0.8, 0.8}); }
inline Scenario cl_diverge() { return closed_loop_base("cl-diverge", {0.5, 0.8, 0.8}); }

inline Scenario cl_rescaled() {
  Scenario s = closed_loop_base("cl-rescaled", {0.5, 0.8, 0.8});
  s.controller.kind = ControllerKind::scaled_lqr;
  s.controller.F.resize(0, 0);
  s.controller.Q = rescaled_Q();
  s.controller.R = Matrix::Identity(1, 1);
  s.stability = StabilitySpec{GainMethod::monte_carlo, 50, kDefaultGainBudget};
  return s;
}

/// p = 1 case with position-only output.
inline Scenario peak_cov_check() {
  Scenario s = closed_loop_base("peak-cov-check", {1.0, 0.7, 0.8});
  s.model.C = position_C();
  s.model.W = Matrix::Constant(1, 1, 1e-3);
  s.trials = 20;
  s.trajectories = 1;
  s.stability.reset();
  return s;
}

inline std::optional<Scenario> scenario(const std::string& name) {
  if (name == "pendulum-estimation") return pendulum_estimation();
  if (name == "cl-stable") return cl_stable();
  if (name == "cl-diverge") return cl_diverge();
  if (name == "cl-rescaled") return cl_rescaled();
  if (name == "peak-cov-check") return peak_cov_check();
  return std::nullopt;
}

/// Scalar plant a = b = c = w = 1, v = 0, Q = Q_N = 1, R = 0.
inline ScalarPlant separation_plant() { return {}; }
inline constexpr std::size_t kSeparationHorizon = 3;

struct ReproduceOptions {
  std::size_t threads = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> trajectories;
  std::optional<std::size_t> stability_budget;
};

inline constexpr std::array<double, 3> kTabulatedD{1.0395, 1.0805, 1.1230};
inline constexpr std::size_t kPeakSteps = 100000;

namespace detail {

inline nlohmann::json peak_cov_analysis(const Scenario& s, const std::filesystem::path& dir) {
  const ClosedLoopModel m = s.closed_loop_model();
  const ChannelProbabilities probs = probabilities(s.channel.channels[0]);
  const StructuralIndices idx = indices(m.A, m.B, m.C);
  const std::size_t I = idx.combined();
  const std::vector<double> d = d_coefficients(m.A, std::max<std::size_t>(I - 1, 1));
  PeakCovReport rep = peak_cov_condition(m.A, probs.q, d, I);
  rep.I0 = idx.observability;
  rep.I1 = idx.controllability;
  const PeakCovReport tab =
      peak_cov_condition(m.A, probs.q, std::vector<double>(kTabulatedD.begin(), kTabulatedD.end()), 4);

  // Peak covariance process over a sampled receiver-switch sequence.
  Rng rng(stream_seed(trial_seed(s.seed, 0), StreamKind::switches));
  std::vector<bool> s_r(kPeakSteps);
  s_r[0] = true;
  for (std::size_t k = 1; k < kPeakSteps; ++k)
    s_r[k] = sample(s.channel.channels[0], rng).s_r;
  const auto L = peak_covariance_process(m, s.controller.F, probs, s_r);
  const PeakExtraction px = extract_peaks(s_r, L);
  std::ostringstream csv;
  write_peaks_csv(csv, px);
  write_text(dir / "peaks.csv", csv.str());
  double running = 0.0;
  nlohmann::json marks = nlohmann::json::array();
  const std::size_t n = px.peaks.norms.size();
  for (std::size_t i = 0; i < n; ++i) {
    running = std::max(running, px.peaks.norms[i]);
    if ((i + 1) % std::max<std::size_t>(1, n / 4) == 0 || i + 1 == n)
      marks.push_back({{"peaks", i + 1}, {"running_max", running}});
  }
  nlohmann::json out;
  out["report"] = to_json(rep);
  out["tabulated_d"] = kTabulatedD;
  out["lhs_tabulated_d"] = twoswitch::detail::finite_or_null(tab.lhs);
  out["peak_process"] = {{"steps", kPeakSteps},
                         {"peaks", n},
                         {"dropped_trailing", px.dropped_trailing},
                         {"max_norm", running},
                         {"running_max", std::move(marks)}};
  return out;
}

} // namespace detail

/// Runs a preset and writes its artifacts into `dir`. Returns the headline
/// summary, which is also written as summary.json.
inline nlohmann::json reproduce(const std::string& name, const std::filesystem::path& dir,
                                const ReproduceOptions& opts = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json headline;
  headline["preset"] = name;

  if (name == "separation-demo") {
    const ScalarPlant plant = separation_plant();
    const DpGrid grid;
    headline["grid_resolution"] = grid.xhat_resolution();
    headline["horizon"] = kSeparationHorizon;
    for (double p1 : {0.5, 1.0}) {
      const ChannelProbabilities probs = probabilities(PuTopology{1, 1, 1, {p1, 0.8, 0.8}});
      const DpDemoResult res = separation_demo(plant, probs, kSeparationHorizon, grid, opts.threads);
      const std::string tag = p1 == 1.0 ? "p1" : "p0.5";
      std::ostringstream csv;
      res.write_csv(csv);
      write_text(dir / ("dp_" + tag + ".csv"), csv.str());
      nlohmann::json steps = nlohmann::json::array();
      for (std::size_t i = 0; i < res.steps.size(); ++i) {
        const RatioSpread rs = ratio_spread(res, i);
        steps.push_back({{"steps_to_go", i + 1},
                         {"max_ratio_spread", rs.max_spread},
                         {"at_xhat", rs.at_xhat},
                         {"max_control_spread", rs.max_control_spread},
                         {"control_at_xhat", rs.control_at_xhat}});
      }
      headline[tag] = {{"channel", to_json(probs)}, {"ratio_spread", std::move(steps)}};
    }
    write_json(dir / "summary.json", headline);
    return headline;
  }

  std::optional<Scenario> sc = scenario(name);
  if (!sc)
    throw ValidationError("unknown preset \"" + name + "\"");
  if (opts.seed) sc->seed = *opts.seed;
  if (opts.trials) sc->trials = *opts.trials;
  if (opts.trajectories) sc->trajectories = *opts.trajectories;
  if (opts.stability_budget && sc->stability) sc->stability->budget = *opts.stability_budget;
  write_json(dir / "scenario.json", to_json(*sc));

  const RunSummary summary = run(*sc, RunOptions{opts.threads});
  write_artifacts(dir / "run", summary);
  headline["run"] = to_json(summary);

  if (sc->mode == Mode::closed_loop && sc->stability) {
    const ClosedLoopModel m = sc->closed_loop_model();
    const LinearController ctrl = sc->build_controller();
    const MeanStabilityReport rep =
        mean_stability(m, ctrl.F, probabilities(sc->channel.channels[0]), sc->stability->horizon,
                       sc->stability->method, sc->stability->budget, sc->seed, opts.threads);
    headline["mean_stability"] = to_json(rep);
    write_json(dir / "stability.json", headline["mean_stability"]);
  }
  if (name == "peak-cov-check") {
    headline["peak_covariance"] = detail::peak_cov_analysis(*sc, dir);
    write_json(dir / "stability.json", headline["peak_covariance"]);
  }
  write_json(dir / "summary.json", headline);
  return headline;
}

} // namespace twoswitch::presets
