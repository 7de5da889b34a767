#pragma once

// Signal controllers sharing one decision interface: fixed-time, SOTL, a
// single broad-RL agent over the whole grid, and multi-agent broad RL with
// three neighbor-information wirings (none, random, DSCIM).

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabrl/agent.hpp"
#include "mabrl/dscim.hpp"
#include "mabrl/random.hpp"
#include "mabrl/traffic_sim.hpp"

namespace mabrl {

enum class ControllerKind { FixedTime, Sotl, Sabrl, MabrlOriginal, MabrlRandom, MabrlDscim };

inline const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::FixedTime: return "FT";
    case ControllerKind::Sotl: return "SOTL";
    case ControllerKind::Sabrl: return "SABRL";
    case ControllerKind::MabrlOriginal: return "MABRL_ORIGINAL";
    case ControllerKind::MabrlRandom: return "MABRL_RANDOM";
    case ControllerKind::MabrlDscim: return "MABRL_DSCIM";
  }
  return "?";
}

inline ControllerKind controller_kind_from_string(const std::string& s) {
  for (auto k : {ControllerKind::FixedTime, ControllerKind::Sotl, ControllerKind::Sabrl,
                 ControllerKind::MabrlOriginal, ControllerKind::MabrlRandom, ControllerKind::MabrlDscim})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown controller '" + s +
                              "' (expected FT, SOTL, SABRL, MABRL_ORIGINAL, MABRL_RANDOM or MABRL_DSCIM)");
}

/// Everything a controller sees at one decision point. Observations and
/// rewards cover the window that just elapsed; both are zero before the first window.
struct DecisionContext {
  const TrafficWorld& world;
  std::span<const std::vector<double>> observations;
  std::span<const double> rewards;
  std::size_t step = 0;          // decision index within the episode
  std::int64_t time = 0;         // seconds since episode start
  bool has_previous = false;     // false at the first decision of an episode
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual ControllerKind kind() const = 0;
  virtual void begin_episode() {}
  virtual std::vector<Phase> act(const DecisionContext& ctx) = 0;
  /// Receives the final window of an episode (learning controllers store the last transition).
  virtual void end_episode(const DecisionContext&) {}
  /// Interaction flags of the most recent act(), one per intersection.
  virtual std::vector<bool> interaction_flags(std::size_t n) const { return std::vector<bool>(n, false); }
};

// ---------------------------------------------------------------------------
// Fixed time

/// Phase active at `clock` seconds into a repeating cycle of four durations.
inline Phase ft_act(std::int64_t clock, std::span<const std::int64_t, kPhaseCount> durations) {
  std::int64_t cycle = 0;
  for (auto d : durations) {
    if (d <= 0) throw std::invalid_argument("ft_act: phase durations must be positive");
    cycle += d;
  }
  std::int64_t t = clock % cycle;
  if (t < 0) t += cycle;
  for (std::size_t p = 0; p < kPhaseCount; ++p) {
    if (t < durations[p]) return static_cast<Phase>(p);
    t -= durations[p];
  }
  return Phase::EwStraight;
}

class FixedTimeController final : public Controller {
 public:
  explicit FixedTimeController(std::array<std::int64_t, kPhaseCount> durations) : durations_(durations) {
    for (auto d : durations_)
      if (d <= 0) throw std::invalid_argument("FT: phase durations must be positive");
  }
  ControllerKind kind() const override { return ControllerKind::FixedTime; }
  std::vector<Phase> act(const DecisionContext& ctx) override {
    return std::vector<Phase>(ctx.world.intersection_count(), ft_act(ctx.time, durations_));
  }

 private:
  std::array<std::int64_t, kPhaseCount> durations_;
};

// ---------------------------------------------------------------------------
// Self-organizing traffic lights

/// Advance to the next phase once the queue waiting on red reaches the threshold.
inline Phase sotl_act(Phase current, double red_queue, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("sotl_act: threshold must be positive");
  return red_queue >= threshold ? next_phase(current) : current;
}

class SotlController final : public Controller {
 public:
  explicit SotlController(double threshold) : threshold_(threshold) {
    if (!(threshold > 0.0)) throw std::invalid_argument("SOTL: threshold must be positive");
  }
  ControllerKind kind() const override { return ControllerKind::Sotl; }
  void begin_episode() override { phases_.clear(); }
  std::vector<Phase> act(const DecisionContext& ctx) override {
    const std::size_t n = ctx.world.intersection_count();
    if (phases_.size() != n) phases_.assign(n, Phase::EwStraight);
    for (std::size_t i = 0; i < n; ++i)
      phases_[i] = sotl_act(phases_[i], ctx.world.red_queue(i, phases_[i]), threshold_);
    return phases_;
  }

 private:
  double threshold_;
  std::vector<Phase> phases_;
};

// ---------------------------------------------------------------------------
// Learning controllers

/// Raw window sums become per-second averages, compressed with log1p so the
/// tanh features stay out of saturation.
inline std::vector<double> observation_features(std::span<const double> raw, std::int64_t window) {
  std::vector<double> out(raw.size());
  const double inv = 1.0 / static_cast<double>(window);
  for (std::size_t k = 0; k < raw.size(); ++k) out[k] = std::log1p(std::max(0.0, raw[k]) * inv);
  return out;
}

/// Seeds derived from a master seed: agent i's network uses tag 1000+i, its
/// exploration stream 2000+i; the random-interaction ablation uses tag 3000.
inline std::uint64_t agent_init_seed(std::uint64_t master, std::size_t i) { return derive_seed(master, 1000 + i); }
inline std::uint64_t agent_explore_seed(std::uint64_t master, std::size_t i) { return derive_seed(master, 2000 + i); }

/// One broad-RL agent controlling every intersection through per-intersection action blocks.
class SabrlController final : public Controller {
 public:
  SabrlController(AgentConfig config, std::size_t intersections, std::int64_t window, std::uint64_t master_seed)
      : window_(window),
        agent_(prepare(std::move(config), intersections), agent_init_seed(master_seed, 0),
               agent_explore_seed(master_seed, 0)) {}

  ControllerKind kind() const override { return ControllerKind::Sabrl; }
  const Agent& agent() const noexcept { return agent_; }

  void begin_episode() override { has_prev_ = false; }

  std::vector<Phase> act(const DecisionContext& ctx) override {
    auto s = global_state(ctx);
    record(ctx, s);
    prev_actions_ = agent_.act(s);
    prev_state_ = std::move(s);
    has_prev_ = true;
    std::vector<Phase> out;
    for (auto a : prev_actions_) out.push_back(static_cast<Phase>(a));
    return out;
  }

  void end_episode(const DecisionContext& ctx) override {
    record(ctx, global_state(ctx));
    has_prev_ = false;
  }

 private:
  static AgentConfig prepare(AgentConfig c, std::size_t n) {
    c.net.input_dim = kObservationDim * n;
    c.net.joint_dim = 0;
    c.net.action_count = kPhaseCount * n;
    c.action_blocks = n;
    return c;
  }

  std::vector<double> global_state(const DecisionContext& ctx) const {
    std::vector<double> s;
    for (const auto& o : ctx.observations) {
      const auto f = observation_features(o, window_);
      s.insert(s.end(), f.begin(), f.end());
    }
    return s;
  }

  void record(const DecisionContext& ctx, const std::vector<double>& s) {
    if (!has_prev_ || !ctx.has_previous) return;
    agent_.observe({prev_state_, prev_actions_, global_threshold(ctx.rewards), s});
  }

  std::int64_t window_;
  Agent agent_;
  bool has_prev_ = false;
  std::vector<double> prev_state_;
  std::vector<std::size_t> prev_actions_;
};

/// One broad-RL agent per intersection. The state of agent i is its own
/// observation features followed by a joint block chosen by the wiring:
/// zeros (original), uniform noise (random) or the DSCIM aggregate.
class MabrlController final : public Controller {
 public:
  MabrlController(ControllerKind kind, AgentConfig config, std::vector<AgentPosition> positions,
                  std::int64_t window, std::uint64_t master_seed, NeighborMode mode = NeighborMode::Nearest)
      : kind_(kind), positions_(std::move(positions)), window_(window), mode_(mode),
        noise_rng_(derive_seed(master_seed, 3000)),
        feature_max_(kObservationDim, 0.0) {
    if (kind != ControllerKind::MabrlOriginal && kind != ControllerKind::MabrlRandom &&
        kind != ControllerKind::MabrlDscim)
      throw std::invalid_argument("MabrlController: not a multi-agent broad-RL kind");
    config.net.input_dim = kObservationDim;
    config.net.joint_dim = kObservationDim;
    config.net.action_count = kPhaseCount;
    config.action_blocks = 1;
    for (std::size_t i = 0; i < positions_.size(); ++i)
      agents_.emplace_back(config, agent_init_seed(master_seed, i), agent_explore_seed(master_seed, i));
    prev_states_.resize(agents_.size());
    prev_actions_.resize(agents_.size());
    flags_.assign(agents_.size(), false);
  }

  ControllerKind kind() const override { return kind_; }
  std::span<const Agent> agents() const noexcept { return agents_; }

  void begin_episode() override { has_prev_ = false; }

  std::vector<Phase> act(const DecisionContext& ctx) override {
    const auto states = joint_states(ctx);
    record(ctx, states);
    std::vector<Phase> out(agents_.size());
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      prev_actions_[i] = agents_[i].act_one(states[i]);
      out[i] = static_cast<Phase>(prev_actions_[i]);
    }
    prev_states_ = states;
    has_prev_ = true;
    return out;
  }

  void end_episode(const DecisionContext& ctx) override {
    record(ctx, joint_states(ctx));
    has_prev_ = false;
  }

  std::vector<bool> interaction_flags(std::size_t) const override { return flags_; }

  /// Joint states s_i = (local features | joint block) for the current window.
  std::vector<std::vector<double>> joint_states(const DecisionContext& ctx) {
    const std::size_t n = agents_.size();
    if (ctx.observations.size() != n || ctx.rewards.size() != n)
      throw DimensionError("MabrlController: observation/reward count does not match agents");
    std::vector<std::vector<double>> local(n);
    for (std::size_t i = 0; i < n; ++i) {
      local[i] = observation_features(ctx.observations[i], window_);
      for (std::size_t k = 0; k < kObservationDim; ++k) feature_max_[k] = std::max(feature_max_[k], local[i][k]);
    }

    std::vector<std::vector<double>> states(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> joint(kObservationDim, 0.0);
      flags_[i] = false;
      switch (kind_) {
        case ControllerKind::MabrlOriginal: break;
        case ControllerKind::MabrlRandom:
          for (std::size_t k = 0; k < kObservationDim; ++k) joint[k] = uniform(noise_rng_, 0.0, feature_max_[k]);
          flags_[i] = true;
          break;
        default: {
          const auto d = decide_interaction(ctx.rewards, positions_, local, i, mode_);
          flags_[i] = d.interact;
          joint.assign(d.joint_info.data().begin(), d.joint_info.data().end());
          break;
        }
      }
      states[i] = local[i];
      states[i].insert(states[i].end(), joint.begin(), joint.end());
    }
    return states;
  }

 private:
  void record(const DecisionContext& ctx, const std::vector<std::vector<double>>& states) {
    if (!has_prev_ || !ctx.has_previous) return;
    for (std::size_t i = 0; i < agents_.size(); ++i)
      agents_[i].observe({prev_states_[i], {prev_actions_[i]}, ctx.rewards[i], states[i]});
  }

  ControllerKind kind_;
  std::vector<AgentPosition> positions_;
  std::int64_t window_;
  NeighborMode mode_;
  Rng noise_rng_;
  std::vector<double> feature_max_;
  std::vector<Agent> agents_;
  bool has_prev_ = false;
  std::vector<std::vector<double>> prev_states_;
  std::vector<std::size_t> prev_actions_;
  std::vector<bool> flags_;
};

struct ControllerOptions {
  AgentConfig agent;
  std::array<std::int64_t, kPhaseCount> ft_durations{30, 30, 30, 30};
  double sotl_threshold = 8.0;
  NeighborMode neighbor_mode = NeighborMode::Nearest;
};

inline std::unique_ptr<Controller> make_controller(ControllerKind kind, const ControllerOptions& opt,
                                                   const TrafficWorld& world, std::uint64_t master_seed) {
  const auto window = world.scenario().decision_interval;
  switch (kind) {
    case ControllerKind::FixedTime: return std::make_unique<FixedTimeController>(opt.ft_durations);
    case ControllerKind::Sotl: return std::make_unique<SotlController>(opt.sotl_threshold);
    case ControllerKind::Sabrl:
      return std::make_unique<SabrlController>(opt.agent, world.intersection_count(), window, master_seed);
    default:
      return std::make_unique<MabrlController>(kind, opt.agent, world.positions(), window, master_seed,
                                               opt.neighbor_mode);
  }
}

}  // namespace mabrl
