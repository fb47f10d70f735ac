// crsim: command-line front end for the two-switch estimation/control library.
//
//   crsim estimate  <scenario.json>
//   crsim control   <scenario.json>
//   crsim stability <scenario.json> [--method exact|mc] [--horizon K] [--budget N]
//   crsim reproduce <preset>
//
// Exit status: 0 success, 2 invalid input, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "twoswitch/twoswitch.hpp"

namespace ts = twoswitch;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> trajectories;
  std::string out = "out";
  std::size_t threads = ts::default_thread_count();
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--seed", f.seed, "64-bit scenario seed");
  cmd->add_option("--trials", f.trials, "Monte Carlo trial count")->check(CLI::PositiveNumber);
  cmd->add_option("--trajectories", f.trajectories, "number of trajectory CSVs to write");
  cmd->add_option("--out", f.out, "output directory")->capture_default_str();
  cmd->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

ts::Scenario load(const std::string& path, const CommonFlags& f) {
  ts::Scenario s = ts::load_scenario(path);
  if (f.seed) s.seed = *f.seed;
  if (f.trials) s.trials = *f.trials;
  if (f.trajectories) s.trajectories = *f.trajectories;
  return s;
}

void print_headline(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

int simulate(const std::string& path, const CommonFlags& f, ts::Mode expected) {
  const ts::Scenario s = load(path, f);
  if (s.mode != expected)
    throw ts::ValidationError(path + ": mode: expected \"" + ts::to_string(expected) +
                              "\" for this command, got \"" + ts::to_string(s.mode) + "\"");
  const ts::RunSummary summary = ts::run(s, ts::RunOptions{f.threads});
  ts::write_artifacts(f.out, summary);
  nlohmann::json j = ts::to_json(summary);
  j.erase("trajectory_files");
  print_headline(j);
  return 0;
}

int stability(const std::string& path, const CommonFlags& f, std::optional<std::string> method,
              std::optional<std::size_t> horizon, std::optional<std::size_t> budget) {
  const ts::Scenario s = load(path, f);
  if (s.mode != ts::Mode::closed_loop)
    throw ts::ValidationError(path + ": mode: stability analysis needs a closed_loop scenario");
  ts::StabilitySpec spec = s.stability.value_or(ts::StabilitySpec{});
  if (horizon) spec.horizon = *horizon;
  if (budget) spec.budget = *budget;
  if (method)
    spec.method = *method == "exact" ? ts::GainMethod::exact : ts::GainMethod::monte_carlo;
  else if (!s.stability && spec.horizon - 1 > ts::kMaxExactHistory)
    spec.method = ts::GainMethod::monte_carlo;

  const ts::ClosedLoopModel m = s.closed_loop_model();
  const ts::LinearController ctrl = s.build_controller();
  const ts::ChannelProbabilities probs = s.design_probabilities();
  nlohmann::json out;
  out["channel"] = ts::to_json(probs);
  out["F"] = ts::detail::matrix_json(ctrl.F);
  out["mean_stability"] = ts::to_json(
      ts::mean_stability(m, ctrl.F, probs, spec.horizon, spec.method, spec.budget, s.seed, f.threads));

  try {
    const ts::StructuralIndices idx = ts::indices(m.A, m.B, m.C);
    out["indices"] = {{"I0", idx.observability}, {"I1", idx.controllability}};
    if (probs.p == 1.0) {
      const std::size_t I = idx.combined();
      ts::PeakCovReport rep =
          ts::peak_cov_condition(m.A, probs.q, ts::d_coefficients(m.A, std::max<std::size_t>(I - 1, 1)), I);
      rep.I0 = idx.observability;
      rep.I1 = idx.controllability;
      out["peak_covariance"] = ts::to_json(rep);
    }
  } catch (const ts::ValidationError& e) {
    out["indices"] = {{"error", e.what()}};
  }

  fs::create_directories(f.out);
  ts::write_json(fs::path(f.out) / "stability.json", out);
  print_headline(out);
  return 0;
}

int reproduce(const std::string& preset, const CommonFlags& f, std::optional<std::size_t> budget) {
  ts::presets::ReproduceOptions opts;
  opts.threads = f.threads;
  opts.seed = f.seed;
  opts.trials = f.trials;
  opts.trajectories = f.trajectories;
  opts.stability_budget = budget;
  nlohmann::json j = ts::presets::reproduce(preset, fs::path(f.out), opts);
  if (j.contains("run"))
    j["run"].erase("trajectory_files");
  print_headline(j);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimation and control over a two-switch cognitive-radio channel"};
  app.require_subcommand(1);

  CommonFlags est_flags, ctl_flags, stab_flags, rep_flags;
  std::string est_path, ctl_path, stab_path, preset;
  std::optional<std::string> method;
  std::optional<std::size_t> horizon, stab_budget, rep_budget;

  auto* est = app.add_subcommand("estimate", "run the open-loop estimator scenario");
  est->add_option("scenario", est_path, "scenario JSON")->required()->check(CLI::ExistingFile);
  add_common(est, est_flags);

  auto* ctl = app.add_subcommand("control", "run the closed-loop scenario");
  ctl->add_option("scenario", ctl_path, "scenario JSON")->required()->check(CLI::ExistingFile);
  add_common(ctl, ctl_flags);

  auto* stab = app.add_subcommand("stability", "mean-stability and peak-covariance tests");
  stab->add_option("scenario", stab_path, "scenario JSON")->required()->check(CLI::ExistingFile);
  stab->add_option("--method", method, "expected-gain method")->check(CLI::IsMember({"exact", "mc"}));
  stab->add_option("--horizon", horizon, "number of steps k checked")->check(CLI::PositiveNumber);
  stab->add_option("--budget", stab_budget, "Monte Carlo histories")->check(CLI::PositiveNumber);
  add_common(stab, stab_flags);

  auto* rep = app.add_subcommand("reproduce", "run a built-in preset");
  rep->add_option("preset", preset, "preset name")->required()->check(CLI::IsMember(ts::presets::names()));
  rep->add_option("--budget", rep_budget, "Monte Carlo histories for the stability check")
      ->check(CLI::PositiveNumber);
  add_common(rep, rep_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*est)
      return simulate(est_path, est_flags, ts::Mode::open_loop);
    if (*ctl)
      return simulate(ctl_path, ctl_flags, ts::Mode::closed_loop);
    if (*stab)
      return stability(stab_path, stab_flags, method, horizon, stab_budget);
    if (*rep)
      return reproduce(preset, rep_flags, rep_budget);
  } catch (const ts::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ts::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
