#pragma once

// Two-switch cognitive-radio channel: Y = s_r (s_t X + Z).
//
// Primary users (PUs) are split into three groups by which secondary node can
// sense them: transmitter only, both (intersection), receiver only. Each PU is
// independently inactive with its own probability. The transmitter switch s_t
// is closed iff every PU it senses is inactive, likewise s_r for the receiver.

#include <cstddef>
#include <string>
#include <vector>

#include "twoswitch/errors.hpp"
#include "twoswitch/rng.hpp"

namespace twoswitch {

struct PuTopology {
  std::size_t st_only = 0; ///< h: PUs sensed only by the transmitter
  std::size_t shared = 0;  ///< m: PUs in both sensing regions
  std::size_t sr_only = 0; ///< o: PUs sensed only by the receiver
  /// Inactivity probability per PU, ordered transmitter-only, shared, receiver-only.
  std::vector<double> inactivity;

  std::size_t size() const { return st_only + shared + sr_only; }

  void validate(const std::string& where = "topology") const {
    if (inactivity.size() != size())
      throw ValidationError(where + ".inactivity: expected " + std::to_string(size()) +
                            " probabilities (h+m+o), got " + std::to_string(inactivity.size()));
    for (std::size_t i = 0; i < inactivity.size(); ++i) {
      const double p = inactivity[i];
      if (!(p >= 0.0 && p <= 1.0))
        throw ValidationError(where + ".inactivity[" + std::to_string(i) + "]: probability " +
                              std::to_string(p) + " outside [0,1]");
    }
  }

  static PuTopology uniform(std::size_t h, std::size_t m, std::size_t o, double p) {
    return {h, m, o, std::vector<double>(h + m + o, p)};
  }
};

struct ChannelProbabilities {
  double gamma = 1.0; ///< P(s_t = 1)
  double q = 1.0;     ///< P(s_r = 1)
  double p = 1.0;     ///< P(s_t = 1 | s_r = 1)
  double p_d0 = 0.0;  ///< P(s_t = 1 | s_r = 0); 0 when q = 1

  /// Transmit probability conditioned on the current receiver switch.
  double p_d(bool s_r) const { return s_r ? p : p_d0; }
};

struct SwitchSample {
  bool s_t = false;
  bool s_r = false;
};

namespace detail {
inline double product(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double out = 1.0;
  for (std::size_t i = begin; i < end; ++i)
    out *= v[i];
  return out;
}
} // namespace detail

inline ChannelProbabilities probabilities(const PuTopology& topo) {
  topo.validate();
  const auto& pi = topo.inactivity;
  const std::size_t h = topo.st_only, hm = topo.st_only + topo.shared, all = topo.size();
  ChannelProbabilities out;
  out.gamma = detail::product(pi, 0, hm);
  out.q = detail::product(pi, h, all);
  out.p = detail::product(pi, 0, h);
  // P(s_t=1, s_r=0) needs every transmitter-side PU idle and some receiver-only PU active.
  const double sr_only_idle = detail::product(pi, hm, all);
  out.p_d0 = out.q < 1.0 ? out.gamma * (1.0 - sr_only_idle) / (1.0 - out.q) : 0.0;
  return out;
}

inline SwitchSample sample(const PuTopology& topo, Rng& rng) {
  const std::size_t h = topo.st_only, hm = topo.st_only + topo.shared;
  SwitchSample s{true, true};
  for (std::size_t i = 0; i < topo.size(); ++i) {
    const bool idle = rng.bernoulli(topo.inactivity[i]);
    if (!idle) {
      if (i < hm)
        s.s_t = false;
      if (i >= h)
        s.s_r = false;
    }
  }
  return s;
}

/// N channels plus the channel index i_k sensed at each step (0-based).
/// Transmitter and receiver always sense the same channel.
struct ChannelSchedule {
  std::vector<PuTopology> channels;
  std::vector<std::size_t> selection;

  static ChannelSchedule single(PuTopology topo) { return {{std::move(topo)}, {0}}; }

  void validate(const std::string& where = "channel") const {
    if (channels.empty())
      throw ValidationError(where + ".channels: at least one channel required");
    if (selection.empty())
      throw ValidationError(where + ".selection: must not be empty");
    for (std::size_t i = 0; i < channels.size(); ++i)
      channels[i].validate(where + ".channels[" + std::to_string(i) + "]");
    for (std::size_t k = 0; k < selection.size(); ++k)
      if (selection[k] >= channels.size())
        throw ValidationError(where + ".selection[" + std::to_string(k) + "]: channel " +
                              std::to_string(selection[k]) + " does not exist");
  }

  /// Topology sensed at 0-based step `k`.
  const PuTopology& at(std::size_t k) const {
    if (k >= selection.size())
      throw ValidationError("schedule step " + std::to_string(k) + " out of range (length " +
                            std::to_string(selection.size()) + ")");
    const std::size_t idx = selection[k];
    if (idx >= channels.size())
      throw ValidationError("schedule selects missing channel " + std::to_string(idx));
    return channels[idx];
  }

  /// Simulators apply the selection cyclically.
  const PuTopology& cyclic(std::size_t k) const { return at(k % selection.size()); }
};

inline ChannelProbabilities step_probabilities(const ChannelSchedule& schedule, std::size_t k) {
  return probabilities(schedule.at(k));
}

} // namespace twoswitch
