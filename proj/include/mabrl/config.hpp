#pragma once

// JSON loading for scenarios and experiment configs, `--set key=value`
// overrides, broad-network checkpoints and summary output.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mabrl/broad_network.hpp"
#include "mabrl/harness.hpp"

namespace mabrl {

using json = nlohmann::json;

/// Raised for unreadable or invalid configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

/// Line of the first `"key"` token, 0 when absent.
inline std::size_t line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  return pos == std::string::npos ? 0 : line_of_offset(text, pos);
}

/// Reads object members while tracking which keys were consumed.
class Reader {
 public:
  Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.emplace_back(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& at(const char* key) {
    seen_.emplace_back(key);
    return obj_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items()) {
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
        throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

  const std::string& where() const { return where_; }

 private:
  const json& obj_;
  std::string where_;
  std::vector<std::string> seen_;
};

}  // namespace detail

/// Parses JSON text; syntax errors report "name:line: ...".
inline json parse_json_text(const std::string& text, const std::string& name) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(name + ":" + std::to_string(detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                      ": " + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Scenario schema (all keys optional):
///   rows, cols, block_length, lanes_per_movement, arrival_rate,
///   entry_rates: [{intersection, side: "N"|"E"|"S"|"W", rate}],
///   turn_ratios: {left, straight, right}, saturation_flow, link_delay,
///   decision_interval, yellow_duration, episode_length, reward_weight, seed,
///   vehicles: [{spawn_time, route: [intersection ids], entry, exit}]
inline Scenario scenario_from_json(const json& j, const std::string& where = "scenario") {
  Scenario s;
  detail::Reader r(j, where);
  r.get("rows", s.rows);
  r.get("cols", s.cols);
  r.get("block_length", s.block_length);
  r.get("lanes_per_movement", s.lanes_per_movement);
  r.get("arrival_rate", s.arrival_rate);
  r.get("saturation_flow", s.saturation_flow);
  r.get("link_delay", s.link_delay);
  r.get("decision_interval", s.decision_interval);
  r.get("yellow_duration", s.yellow_duration);
  r.get("episode_length", s.episode_length);
  r.get("seed", s.seed);
  if (r.has("reward_weight")) {
    double w = 0;
    r.get("reward_weight", w);
    s.reward_weight = w;
  }
  if (r.has("turn_ratios")) {
    detail::Reader t(r.at("turn_ratios"), where + ".turn_ratios");
    t.get("left", s.turns.left);
    t.get("straight", s.turns.straight);
    t.get("right", s.turns.right);
    t.finish();
  }
  try {
    if (r.has("entry_rates")) {
      for (const auto& e : r.at("entry_rates")) {
        detail::Reader er(e, where + ".entry_rates[]");
        EntryPoint p;
        std::string side = "N";
        double rate = 0;
        er.get("intersection", p.intersection);
        er.get("side", side);
        er.get("rate", rate);
        er.finish();
        p.side = side_from_string(side);
        s.entry_rates.emplace_back(p, rate);
      }
    }
    if (r.has("vehicles")) {
      for (const auto& v : r.at("vehicles")) {
        detail::Reader vr(v, where + ".vehicles[]");
        ScheduledVehicle sv;
        std::string entry = "W", exit = "E";
        vr.get("spawn_time", sv.spawn_time);
        vr.get("route", sv.intersections);
        vr.get("entry", entry);
        vr.get("exit", exit);
        vr.finish();
        sv.entry = side_from_string(entry);
        sv.exit = side_from_string(exit);
        s.vehicles.push_back(std::move(sv));
      }
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  r.finish();
  try {
    s.validate();
    TrafficWorld probe(s, 0);  // validates scheduled routes against the grid
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return s;
}

inline json to_json(const Scenario& s) {
  json j{{"rows", s.rows},
         {"cols", s.cols},
         {"block_length", s.block_length},
         {"lanes_per_movement", s.lanes_per_movement},
         {"arrival_rate", s.arrival_rate},
         {"turn_ratios", {{"left", s.turns.left}, {"straight", s.turns.straight}, {"right", s.turns.right}}},
         {"saturation_flow", s.saturation_flow},
         {"link_delay", s.link_delay},
         {"decision_interval", s.decision_interval},
         {"yellow_duration", s.yellow_duration},
         {"episode_length", s.episode_length},
         {"seed", s.seed}};
  if (s.reward_weight) j["reward_weight"] = *s.reward_weight;
  if (!s.entry_rates.empty()) {
    j["entry_rates"] = json::array();
    for (const auto& [e, rate] : s.entry_rates)
      j["entry_rates"].push_back({{"intersection", e.intersection}, {"side", to_string(e.side)}, {"rate", rate}});
  }
  if (!s.vehicles.empty()) {
    j["vehicles"] = json::array();
    for (const auto& v : s.vehicles)
      j["vehicles"].push_back({{"spawn_time", v.spawn_time},
                               {"route", v.intersections},
                               {"entry", to_string(v.entry)},
                               {"exit", to_string(v.exit)}});
  }
  return j;
}

/// Applies "a.b.c=value" overrides. The value is parsed as JSON when possible,
/// otherwise taken as a string.
inline void apply_overrides(json& root, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set '" + o + "': expected key=value");
    const std::string path = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &root;
    std::size_t start = 0;
    for (;;) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (key.empty()) throw ConfigError("--set '" + o + "': empty key segment");
      if (!node->is_object()) throw ConfigError("--set '" + o + "': '" + key + "' is not inside an object");
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      if (node->is_null()) *node = json::object();
      start = dot + 1;
    }
  }
}

/// Resolves a string-valued "scenario" key by loading that file (relative to `base_dir`).
inline void inline_scenario(json& root, const std::string& base_dir) {
  if (!root.contains("scenario") || !root["scenario"].is_string()) return;
  std::string path = root["scenario"].get<std::string>();
  if (!path.empty() && path.front() != '/' && !base_dir.empty()) path = base_dir + "/" + path;
  root["scenario"] = parse_json_text(read_text_file(path), path);
}

/// Experiment config schema (all keys optional; defaults in parentheses):
///   scenario (object or path), controller ("MABRL_DSCIM"), episodes (100),
///   episode_length (scenario's, 3600), seeds ([1]), output_dir ("out"),
///   gamma (0.99), lambda (0.01), pretrain_steps (200), epsilon_start (0.1),
///   epsilon_min (0.01), epsilon_decay (0.995), update_period (10),
///   sync_period (100), batch_size (512), memory_capacity (10000),
///   learning_rate (0.001, unused), mapped_groups (10), mapped_nodes (10),
///   enhancement_groups (25), enhancement_nodes (10), map_activation ("tanh"),
///   enh_activation ("tanh"), ft_durations ([30,30,30,30]),
///   sotl_threshold (8), neighbor_mode ("nearest" | "all_others")
inline ExperimentConfig config_from_json(const json& j, const std::string& where = "config") {
  ExperimentConfig c;
  detail::Reader r(j, where);
  if (r.has("scenario")) c.scenario = scenario_from_json(r.at("scenario"), where + ".scenario");
  std::string controller = to_string(c.controller);
  r.get("controller", controller);
  try {
    c.controller = controller_kind_from_string(controller);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ".controller: " + e.what());
  }
  r.get("episodes", c.episodes);
  if (r.has("episode_length")) r.get("episode_length", c.scenario.episode_length);
  r.get("seeds", c.seeds);
  r.get("output_dir", c.output_dir);

  AgentConfig& a = c.options.agent;
  r.get("gamma", a.gamma);
  r.get("lambda", a.lambda);
  r.get("pretrain_steps", a.pretrain_steps);
  r.get("epsilon_start", a.epsilon_start);
  r.get("epsilon_min", a.epsilon_min);
  r.get("epsilon_decay", a.epsilon_decay);
  r.get("update_period", a.update_period);
  r.get("sync_period", a.sync_period);
  r.get("batch_size", a.batch_size);
  r.get("memory_capacity", a.memory_capacity);
  r.get("learning_rate", a.learning_rate);
  r.get("mapped_groups", a.net.mapped_groups);
  r.get("mapped_nodes", a.net.mapped_nodes);
  r.get("enhancement_groups", a.net.enhancement_groups);
  r.get("enhancement_nodes", a.net.enhancement_nodes);
  std::string map_act = to_string(a.net.map_activation), enh_act = to_string(a.net.enh_activation);
  r.get("map_activation", map_act);
  r.get("enh_activation", enh_act);
  std::vector<std::int64_t> ft(c.options.ft_durations.begin(), c.options.ft_durations.end());
  r.get("ft_durations", ft);
  r.get("sotl_threshold", c.options.sotl_threshold);
  std::string mode = "nearest";
  r.get("neighbor_mode", mode);
  r.finish();

  try {
    a.net.map_activation = activation_from_string(map_act);
    a.net.enh_activation = activation_from_string(enh_act);
    if (ft.size() != kPhaseCount) throw std::invalid_argument("ft_durations needs exactly 4 entries");
    std::copy(ft.begin(), ft.end(), c.options.ft_durations.begin());
    if (mode == "nearest") c.options.neighbor_mode = NeighborMode::Nearest;
    else if (mode == "all_others") c.options.neighbor_mode = NeighborMode::AllOthers;
    else throw std::invalid_argument("neighbor_mode must be 'nearest' or 'all_others'");
    if (!(c.options.sotl_threshold > 0)) throw std::invalid_argument("sotl_threshold must be positive");
    for (auto d : c.options.ft_durations)
      if (d <= 0) throw std::invalid_argument("ft_durations must be positive");
    // Dimensions are filled in per controller; validate with the observation layout.
    AgentConfig probe = a;
    probe.net.input_dim = kObservationDim;
    probe.validate();
    c.scenario.validate();
    if (c.episodes == 0) throw std::invalid_argument("episodes must be >= 1");
    if (c.seeds.empty()) throw std::invalid_argument("seeds must not be empty");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

/// Loads a config file, resolves its scenario and applies overrides.
/// Errors carry the file name and, where locatable, the line.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  json root = json::object();
  std::string text;
  std::string base_dir;
  if (!path.empty()) {
    text = read_text_file(path);
    root = parse_json_text(text, path);
    const auto slash = path.find_last_of('/');
    base_dir = slash == std::string::npos ? "." : path.substr(0, slash);
  }
  // A scenario path override must be resolved before nested scenario overrides apply.
  std::vector<std::string> scenario_path_overrides, rest;
  for (const auto& o : overrides) (o.rfind("scenario=", 0) == 0 ? scenario_path_overrides : rest).push_back(o);
  apply_overrides(root, scenario_path_overrides);
  inline_scenario(root, scenario_path_overrides.empty() ? base_dir : ".");
  apply_overrides(root, rest);
  try {
    return config_from_json(root, path.empty() ? "config" : path);
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    // Point at the offending key's line when the message names one.
    const auto q1 = msg.find("key '");
    std::string key;
    if (q1 != std::string::npos) key = msg.substr(q1 + 5, msg.find('\'', q1 + 5) - q1 - 5);
    else if (const auto dot = msg.rfind('.', msg.find(':')); dot != std::string::npos && !path.empty())
      key = msg.substr(dot + 1, msg.find(':') - dot - 1);
    if (!text.empty() && !key.empty()) {
      if (const auto line = detail::line_of_key(text, key); line > 0)
        throw ConfigError(path + ":" + std::to_string(line) + ": " + msg);
    }
    throw;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: {"format": "mabrl-broadnet-v1", "config": {...},
//               "w_m"|"beta_m"|"w_e"|"beta_e"|"w_out": {"rows", "cols", "data": [row-major]}}

inline json to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

inline Matrix matrix_from_json(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), j.at("data").get<std::vector<double>>());
}

inline json to_json(const BroadNetParams& p) {
  const auto& c = p.config;
  return {{"format", "mabrl-broadnet-v1"},
          {"config",
           {{"input_dim", c.input_dim},
            {"joint_dim", c.joint_dim},
            {"mapped_groups", c.mapped_groups},
            {"mapped_nodes", c.mapped_nodes},
            {"enhancement_groups", c.enhancement_groups},
            {"enhancement_nodes", c.enhancement_nodes},
            {"action_count", c.action_count},
            {"map_activation", to_string(c.map_activation)},
            {"enh_activation", to_string(c.enh_activation)}}},
          {"w_m", to_json(p.w_m)},
          {"beta_m", to_json(p.beta_m)},
          {"w_e", to_json(p.w_e)},
          {"beta_e", to_json(p.beta_e)},
          {"w_out", to_json(p.w_out)}};
}

inline BroadNetParams broad_net_from_json(const json& j) {
  if (j.value("format", "") != "mabrl-broadnet-v1") throw ConfigError("checkpoint: unknown format");
  const json& c = j.at("config");
  BroadNetParams p;
  p.config.input_dim = c.at("input_dim");
  p.config.joint_dim = c.at("joint_dim");
  p.config.mapped_groups = c.at("mapped_groups");
  p.config.mapped_nodes = c.at("mapped_nodes");
  p.config.enhancement_groups = c.at("enhancement_groups");
  p.config.enhancement_nodes = c.at("enhancement_nodes");
  p.config.action_count = c.at("action_count");
  p.config.map_activation = activation_from_string(c.at("map_activation"));
  p.config.enh_activation = activation_from_string(c.at("enh_activation"));
  p.config.validate();
  p.w_m = matrix_from_json(j.at("w_m"));
  p.beta_m = matrix_from_json(j.at("beta_m"));
  p.w_e = matrix_from_json(j.at("w_e"));
  p.beta_e = matrix_from_json(j.at("beta_e"));
  p.w_out = matrix_from_json(j.at("w_out"));
  const auto& cfg = p.config;
  if (p.w_m.rows() != cfg.input_dim || p.w_m.cols() != cfg.mapped_width() || p.beta_m.cols() != cfg.mapped_width() ||
      p.w_e.rows() != cfg.mapped_width() + cfg.joint_dim || p.w_e.cols() != cfg.enhancement_width() ||
      p.beta_e.cols() != cfg.enhancement_width() || p.w_out.rows() != cfg.feature_width() ||
      p.w_out.cols() != cfg.action_count)
    throw ConfigError("checkpoint: matrix shapes do not match config");
  return p;
}

// ---------------------------------------------------------------------------
// Summaries

inline json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"count", m.count}}; }

inline json to_json(const SummaryTable& t) {
  auto arm = [](const ArmSummary& a, bool with_seed) {
    json j{{"controller", a.controller},
           {"episodes_used", a.episodes},
           {"reward", to_json(a.reward)},
           {"waiting_time", to_json(a.waiting)},
           {"travel_time", to_json(a.travel)}};
    if (with_seed) j["seed"] = a.seed;
    return j;
  };
  json out{{"burn_in_fraction", 0.5}, {"per_seed", json::array()}, {"pooled", json::array()}};
  for (const auto& a : t.per_seed) out["per_seed"].push_back(arm(a, true));
  for (const auto& a : t.pooled) out["pooled"].push_back(arm(a, false));
  return out;
}

}  // namespace mabrl
