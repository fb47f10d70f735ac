#pragma once

// Scenario files: JSON with a versioned "schema" field, matrices as nested row
// arrays, vectors as flat arrays. Field errors name the offending path and,
// when loaded from text, its line and column.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "twoswitch/channel.hpp"
#include "twoswitch/closed_loop.hpp"
#include "twoswitch/errors.hpp"
#include "twoswitch/estimator.hpp"
#include "twoswitch/numerics.hpp"
#include "twoswitch/stability.hpp"

namespace twoswitch {

using json = nlohmann::json;

inline constexpr std::string_view kScenarioSchema = "twoswitch-scenario/1";
inline constexpr double kNearestSpdFloor = 1e-6;

enum class Mode { open_loop, closed_loop };
enum class NoiseRepair { none, symmetrize, nearest_spd };
enum class ControllerKind { none, fixed, lqr, scaled_lqr };

struct ControllerSpec {
  ControllerKind kind = ControllerKind::none;
  Matrix F; ///< fixed gain
  Matrix Q; ///< LQR weights
  Matrix R;
  std::size_t design_channel = 0; ///< channel whose p, q scale B for scaled_lqr
};

struct StabilitySpec {
  GainMethod method = GainMethod::exact;
  std::size_t horizon = 20;
  std::size_t budget = kDefaultGainBudget;
};

struct ModelSpec {
  Matrix A, B, C, V, W, P1;
  Vector x1;
  std::optional<Vector> xhat1;
};

struct Scenario {
  std::string name;
  Mode mode = Mode::open_loop;
  ModelSpec model;
  NoiseRepair noise_repair = NoiseRepair::symmetrize;
  ChannelSchedule channel;
  bool single_topology = true; ///< serialized as "topology" rather than "channels"
  ControllerSpec controller;
  Reference reference;
  std::size_t horizon = 100;
  std::size_t trials = 1;
  std::uint64_t seed = 1;
  std::size_t trajectories = 1;
  std::optional<StabilitySpec> stability;

  Matrix repaired(const Matrix& m) const {
    switch (noise_repair) {
    case NoiseRepair::none:
      return m;
    case NoiseRepair::symmetrize:
      return numerics::symmetrize(m);
    case NoiseRepair::nearest_spd:
      return numerics::nearest_spd(m, kNearestSpdFloor);
    }
    return m;
  }

  SystemModel system_model() const {
    SystemModel m{model.A, model.C, repaired(model.V), repaired(model.W), model.x1, model.xhat1,
                  model.P1};
    m.validate();
    return m;
  }

  ClosedLoopModel closed_loop_model() const {
    ClosedLoopModel m{model.A,  model.B,  model.C,     repaired(model.V),
                      repaired(model.W), model.x1, model.xhat1, model.P1};
    m.validate();
    return m;
  }

  ChannelProbabilities design_probabilities() const {
    if (controller.design_channel >= channel.channels.size())
      throw ValidationError("controller.design_channel: channel does not exist");
    return probabilities(channel.channels[controller.design_channel]);
  }

  /// Resolves the controller spec into a gain and feedforward.
  LinearController build_controller() const {
    const ClosedLoopModel m = closed_loop_model();
    LinearController ctrl;
    switch (controller.kind) {
    case ControllerKind::none:
      ctrl.F = Matrix::Zero(m.input_dim(), m.state_dim());
      break;
    case ControllerKind::fixed:
      numerics::require_shape(controller.F, m.input_dim(), m.state_dim(), "controller.F");
      ctrl.F = controller.F;
      break;
    case ControllerKind::lqr:
      ctrl.F = numerics::lqr_gain(m.A, m.B, controller.Q, controller.R);
      break;
    case ControllerKind::scaled_lqr:
      ctrl = scaled_lqr_gain(m.A, m.B, design_probabilities(), controller.Q, controller.R);
      break;
    }
    if (reference.step)
      ctrl.feedforward = feedforward_gain(m.A, m.B, m.C, ctrl.F, reference.output);
    return ctrl;
  }

  void validate() const {
    if (horizon < 1)
      throw ValidationError("horizon: must be at least 1");
    if (trials < 1)
      throw ValidationError("trials: must be at least 1");
    channel.validate();
    if (mode == Mode::open_loop) {
      system_model();
    } else {
      const ClosedLoopModel m = closed_loop_model();
      if (reference.output < 0 || reference.output >= m.output_dim())
        throw ValidationError("reference.output: index out of range");
      build_controller();
    }
    if (stability && stability->horizon < 1)
      throw ValidationError("stability.horizon: must be at least 1");
  }
};

namespace detail {

/// Maps JSON paths such as `model.A[0][1]` to 1-based (line, column) of the
/// value in already-validated JSON text.
class PositionIndex {
public:
  explicit PositionIndex(std::string_view text) : text_(text) {
    skip_ws();
    if (pos_ < text_.size())
      value("");
  }

  std::optional<std::pair<std::size_t, std::size_t>> find(const std::string& path) const {
    auto it = positions_.find(path);
    if (it == positions_.end())
      return std::nullopt;
    return it->second;
  }

private:
  std::string_view text_;
  std::size_t pos_ = 0, line_ = 1, col_ = 1;
  std::map<std::string, std::pair<std::size_t, std::size_t>> positions_;

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }
  void skip_ws() {
    while (pos_ < text_.size() &&
           (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' || text_[pos_] == '\r'))
      advance();
  }
  std::string string_token() {
    std::string out;
    advance(); // opening quote
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\') {
        advance();
        if (pos_ >= text_.size())
          break;
      }
      out += text_[pos_];
      advance();
    }
    if (pos_ < text_.size())
      advance();
    return out;
  }
  void value(const std::string& path) {
    positions_.emplace(path, std::pair{line_, col_});
    const char c = text_[pos_];
    if (c == '{') {
      advance();
      skip_ws();
      while (pos_ < text_.size() && text_[pos_] != '}') {
        const std::string key = string_token();
        skip_ws();
        advance(); // ':'
        skip_ws();
        value(path.empty() ? key : path + "." + key);
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ',') {
          advance();
          skip_ws();
        }
      }
      if (pos_ < text_.size())
        advance();
    } else if (c == '[') {
      advance();
      skip_ws();
      std::size_t i = 0;
      while (pos_ < text_.size() && text_[pos_] != ']') {
        value(path + "[" + std::to_string(i++) + "]");
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ',') {
          advance();
          skip_ws();
        }
      }
      if (pos_ < text_.size())
        advance();
    } else if (c == '"') {
      string_token();
    } else {
      while (pos_ < text_.size() && std::string_view(",]} \t\r\n").find(text_[pos_]) == std::string_view::npos)
        advance();
    }
  }
};

class Reader {
public:
  explicit Reader(const PositionIndex* index) : index_(index) {}

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    throw ValidationError(locate(path) + path + ": " + msg);
  }

  std::string locate(const std::string& path) const {
    if (!index_)
      return "";
    std::string p = path;
    // Fall back to the nearest enclosing value for missing fields.
    for (;;) {
      if (auto pos = index_->find(p))
        return "line " + std::to_string(pos->first) + ", column " + std::to_string(pos->second) +
               ": ";
      const auto cut = p.find_last_of(".[");
      if (cut == std::string::npos)
        return "";
      p.erase(cut);
    }
  }

  const json& require(const json& obj, const std::string& path, const std::string& key) const {
    if (!obj.is_object())
      fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end())
      fail(join(path, key), "required field missing");
    return *it;
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

  double number(const json& j, const std::string& path) const {
    if (!j.is_number())
      fail(path, "expected a number");
    return j.get<double>();
  }

  std::size_t count(const json& j, const std::string& path) const {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0))
      fail(path, "expected a nonnegative integer");
    return j.get<std::size_t>();
  }

  std::uint64_t u64(const json& j, const std::string& path) const {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
      fail(path, "expected a 64-bit unsigned integer");
    return j.get<std::uint64_t>();
  }

  std::string string(const json& j, const std::string& path) const {
    if (!j.is_string())
      fail(path, "expected a string");
    return j.get<std::string>();
  }

  Vector vector(const json& j, const std::string& path) const {
    if (!j.is_array())
      fail(path, "expected an array of numbers");
    Vector v(Eigen::Index(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
      v(Eigen::Index(i)) = number(j[i], path + "[" + std::to_string(i) + "]");
    return v;
  }

  /// Nested row arrays; a bare number is a 1x1 matrix.
  Matrix matrix(const json& j, const std::string& path) const {
    if (j.is_number())
      return Matrix::Constant(1, 1, j.get<double>());
    if (!j.is_array() || j.empty())
      fail(path, "expected a non-empty array of rows");
    const std::size_t rows = j.size();
    if (!j[0].is_array() || j[0].empty())
      fail(path + "[0]", "expected a non-empty row array");
    const std::size_t cols = j[0].size();
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
      const std::string rp = path + "[" + std::to_string(r) + "]";
      if (!j[r].is_array())
        fail(rp, "expected a row array");
      if (j[r].size() != cols)
        fail(rp, "row has " + std::to_string(j[r].size()) + " entries, expected " +
                     std::to_string(cols));
      for (std::size_t c = 0; c < cols; ++c)
        m(Eigen::Index(r), Eigen::Index(c)) = number(j[r][c], rp + "[" + std::to_string(c) + "]");
    }
    return m;
  }

  PuTopology topology(const json& j, const std::string& path) const {
    PuTopology t;
    t.st_only = count(require(j, path, "h"), join(path, "h"));
    t.shared = count(require(j, path, "m"), join(path, "m"));
    t.sr_only = count(require(j, path, "o"), join(path, "o"));
    const std::string ip = join(path, "inactivity");
    const json& probs = require(j, path, "inactivity");
    if (!probs.is_array())
      fail(ip, "expected an array of probabilities");
    if (probs.size() != t.size())
      fail(ip, "expected " + std::to_string(t.size()) + " probabilities (h+m+o), got " +
                   std::to_string(probs.size()));
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const std::string pp = ip + "[" + std::to_string(i) + "]";
      const double p = number(probs[i], pp);
      if (!(p >= 0.0 && p <= 1.0))
        fail(pp, "probability " + json(p).dump() + " outside [0,1]");
      t.inactivity.push_back(p);
    }
    return t;
  }

private:
  const PositionIndex* index_;
};

template <typename E>
E parse_enum(const Reader& rd, const json& j, const std::string& path,
             std::initializer_list<std::pair<std::string_view, E>> options) {
  const std::string s = rd.string(j, path);
  std::string names;
  for (const auto& [name, value] : options) {
    if (s == name)
      return value;
    names += (names.empty() ? "" : ", ") + std::string(name);
  }
  rd.fail(path, "unknown value \"" + s + "\" (expected one of " + names + ")");
}

inline json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    arr.push_back(v(i));
  return arr;
}

inline json topology_json(const PuTopology& t) {
  return {{"h", t.st_only}, {"m", t.shared}, {"o", t.sr_only}, {"inactivity", t.inactivity}};
}

} // namespace detail

inline std::string to_string(Mode m) { return m == Mode::open_loop ? "open_loop" : "closed_loop"; }

inline std::string to_string(NoiseRepair r) {
  switch (r) {
  case NoiseRepair::none: return "none";
  case NoiseRepair::symmetrize: return "symmetrize";
  case NoiseRepair::nearest_spd: return "nearest_spd";
  }
  return "none";
}

inline std::string to_string(ControllerKind k) {
  switch (k) {
  case ControllerKind::none: return "none";
  case ControllerKind::fixed: return "fixed";
  case ControllerKind::lqr: return "lqr";
  case ControllerKind::scaled_lqr: return "scaled_lqr";
  }
  return "none";
}

/// Builds and validates a scenario from parsed JSON. `index` adds line numbers
/// to error messages.
inline Scenario scenario_from_json(const json& root, const detail::PositionIndex* index = nullptr) {
  const detail::Reader rd(index);
  if (!root.is_object())
    rd.fail("", "scenario must be a JSON object");
  Scenario s;
  const std::string schema = rd.string(rd.require(root, "", "schema"), "schema");
  if (schema != kScenarioSchema)
    rd.fail("schema", "unsupported schema \"" + schema + "\" (expected \"" +
                          std::string(kScenarioSchema) + "\")");
  if (root.contains("name"))
    s.name = rd.string(root["name"], "name");
  s.mode = detail::parse_enum<Mode>(rd, rd.require(root, "", "mode"), "mode",
                                    {{"open_loop", Mode::open_loop},
                                     {"closed_loop", Mode::closed_loop}});

  const json& m = rd.require(root, "", "model");
  s.model.A = rd.matrix(rd.require(m, "model", "A"), "model.A");
  s.model.C = rd.matrix(rd.require(m, "model", "C"), "model.C");
  s.model.V = rd.matrix(rd.require(m, "model", "V"), "model.V");
  s.model.W = rd.matrix(rd.require(m, "model", "W"), "model.W");
  s.model.P1 = rd.matrix(rd.require(m, "model", "P1"), "model.P1");
  s.model.x1 = rd.vector(rd.require(m, "model", "x1"), "model.x1");
  if (m.contains("xhat1"))
    s.model.xhat1 = rd.vector(m["xhat1"], "model.xhat1");
  if (s.mode == Mode::closed_loop)
    s.model.B = rd.matrix(rd.require(m, "model", "B"), "model.B");
  else if (m.contains("B"))
    s.model.B = rd.matrix(m["B"], "model.B");

  if (root.contains("noise_repair"))
    s.noise_repair = detail::parse_enum<NoiseRepair>(
        rd, root["noise_repair"], "noise_repair",
        {{"none", NoiseRepair::none},
         {"symmetrize", NoiseRepair::symmetrize},
         {"nearest_spd", NoiseRepair::nearest_spd}});

  const json& ch = rd.require(root, "", "channel");
  if (ch.is_object() && ch.contains("topology")) {
    s.channel = ChannelSchedule::single(rd.topology(ch["topology"], "channel.topology"));
    s.single_topology = true;
  } else {
    s.single_topology = false;
    const json& list = rd.require(ch, "channel", "channels");
    if (!list.is_array() || list.empty())
      rd.fail("channel.channels", "expected a non-empty array of topologies");
    for (std::size_t i = 0; i < list.size(); ++i)
      s.channel.channels.push_back(
          rd.topology(list[i], "channel.channels[" + std::to_string(i) + "]"));
    const json& sel = rd.require(ch, "channel", "selection");
    if (!sel.is_array() || sel.empty())
      rd.fail("channel.selection", "expected a non-empty array of channel indices");
    for (std::size_t k = 0; k < sel.size(); ++k) {
      const std::string sp = "channel.selection[" + std::to_string(k) + "]";
      const std::size_t idx = rd.count(sel[k], sp);
      if (idx >= s.channel.channels.size())
        rd.fail(sp, "channel " + std::to_string(idx) + " does not exist");
      s.channel.selection.push_back(idx);
    }
  }

  if (root.contains("controller")) {
    const json& c = root["controller"];
    s.controller.kind = detail::parse_enum<ControllerKind>(
        rd, rd.require(c, "controller", "type"), "controller.type",
        {{"none", ControllerKind::none},
         {"fixed", ControllerKind::fixed},
         {"lqr", ControllerKind::lqr},
         {"scaled_lqr", ControllerKind::scaled_lqr}});
    if (s.controller.kind == ControllerKind::fixed)
      s.controller.F = rd.matrix(rd.require(c, "controller", "F"), "controller.F");
    if (s.controller.kind == ControllerKind::lqr || s.controller.kind == ControllerKind::scaled_lqr) {
      s.controller.Q = rd.matrix(rd.require(c, "controller", "Q"), "controller.Q");
      s.controller.R = rd.matrix(rd.require(c, "controller", "R"), "controller.R");
    }
    if (c.contains("design_channel"))
      s.controller.design_channel = rd.count(c["design_channel"], "controller.design_channel");
  }
  if (s.mode == Mode::closed_loop && s.controller.kind == ControllerKind::none && !root.contains("controller"))
    rd.fail("controller", "required field missing for closed_loop mode");

  if (root.contains("reference")) {
    const json& r = root["reference"];
    const std::string type = rd.string(rd.require(r, "reference", "type"), "reference.type");
    if (type == "step") {
      s.reference.step = true;
      if (r.contains("amplitude"))
        s.reference.amplitude = rd.number(r["amplitude"], "reference.amplitude");
      if (r.contains("onset"))
        s.reference.onset = rd.count(r["onset"], "reference.onset");
      if (r.contains("output"))
        s.reference.output = Eigen::Index(rd.count(r["output"], "reference.output"));
    } else if (type != "none") {
      rd.fail("reference.type", "unknown value \"" + type + "\" (expected one of none, step)");
    }
  }

  s.horizon = rd.count(rd.require(root, "", "horizon"), "horizon");
  if (root.contains("trials"))
    s.trials = rd.count(root["trials"], "trials");
  if (root.contains("seed"))
    s.seed = rd.u64(root["seed"], "seed");
  if (root.contains("trajectories"))
    s.trajectories = rd.count(root["trajectories"], "trajectories");

  if (root.contains("stability")) {
    const json& st = root["stability"];
    StabilitySpec spec;
    if (st.contains("method"))
      spec.method = detail::parse_enum<GainMethod>(
          rd, st["method"], "stability.method",
          {{"exact", GainMethod::exact}, {"mc", GainMethod::monte_carlo}});
    if (st.contains("horizon"))
      spec.horizon = rd.count(st["horizon"], "stability.horizon");
    if (st.contains("budget"))
      spec.budget = rd.count(st["budget"], "stability.budget");
    s.stability = spec;
  }

  // Invariant checks; map messages that already carry a field path to a line.
  try {
    s.validate();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    const std::string where = rd.locate(msg.substr(0, msg.find_first_of(": ")));
    if (dynamic_cast<const DimensionError*>(&e))
      throw DimensionError(where + msg);
    throw ValidationError(where + msg);
  }
  return s;
}

inline Scenario parse_scenario(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // Byte offset to line/column.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ValidationError("line " + std::to_string(line) + ", column " + std::to_string(col) +
                          ": JSON parse error: " + e.what());
  }
  const detail::PositionIndex index(text);
  return scenario_from_json(root, &index);
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot open scenario file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_scenario(ss.str());
  } catch (const DimensionError& e) {
    throw DimensionError(path + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline json to_json(const Scenario& s) {
  using namespace detail;
  json j;
  j["schema"] = kScenarioSchema;
  if (!s.name.empty())
    j["name"] = s.name;
  j["mode"] = to_string(s.mode);
  json m;
  m["A"] = matrix_json(s.model.A);
  if (s.model.B.size() > 0)
    m["B"] = matrix_json(s.model.B);
  m["C"] = matrix_json(s.model.C);
  m["V"] = matrix_json(s.model.V);
  m["W"] = matrix_json(s.model.W);
  m["x1"] = vector_json(s.model.x1);
  if (s.model.xhat1)
    m["xhat1"] = vector_json(*s.model.xhat1);
  m["P1"] = matrix_json(s.model.P1);
  j["model"] = std::move(m);
  j["noise_repair"] = to_string(s.noise_repair);
  if (s.single_topology && s.channel.channels.size() == 1 && s.channel.selection.size() == 1) {
    j["channel"] = {{"topology", topology_json(s.channel.channels[0])}};
  } else {
    json list = json::array();
    for (const auto& t : s.channel.channels)
      list.push_back(topology_json(t));
    j["channel"] = {{"channels", std::move(list)}, {"selection", s.channel.selection}};
  }
  json c;
  c["type"] = to_string(s.controller.kind);
  if (s.controller.kind == ControllerKind::fixed)
    c["F"] = matrix_json(s.controller.F);
  if (s.controller.kind == ControllerKind::lqr || s.controller.kind == ControllerKind::scaled_lqr) {
    c["Q"] = matrix_json(s.controller.Q);
    c["R"] = matrix_json(s.controller.R);
  }
  if (s.controller.kind == ControllerKind::scaled_lqr)
    c["design_channel"] = s.controller.design_channel;
  j["controller"] = std::move(c);
  if (s.reference.step)
    j["reference"] = {{"type", "step"},
                      {"amplitude", s.reference.amplitude},
                      {"onset", s.reference.onset},
                      {"output", s.reference.output}};
  else
    j["reference"] = {{"type", "none"}};
  j["horizon"] = s.horizon;
  j["trials"] = s.trials;
  j["seed"] = s.seed;
  j["trajectories"] = s.trajectories;
  if (s.stability)
    j["stability"] = {{"method", s.stability->method == GainMethod::exact ? "exact" : "mc"},
                      {"horizon", s.stability->horizon},
                      {"budget", s.stability->budget}};
  return j;
}

} // namespace twoswitch
