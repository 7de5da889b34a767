#pragma once

// Episode loop, metrics CSV and mean +/- std summaries.
//
// metrics.csv columns:
//   controller,seed,episode,step,agent,reward,queue_length,waiting_time,action,interact
// one row per agent per decision step, ordered by (episode, step, agent) within a seed.
//
// episodes.csv columns:
//   controller,seed,episode,mean_reward,mean_queue,mean_waiting_time,mean_travel_time,spawned,exited

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabrl/controllers.hpp"
#include "mabrl/traffic_sim.hpp"

namespace mabrl {

struct ExperimentConfig {
  Scenario scenario;
  ControllerKind controller = ControllerKind::MabrlDscim;
  std::size_t episodes = 100;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";
  ControllerOptions options;

  void validate() const {
    scenario.validate();
    if (episodes == 0) throw std::invalid_argument("config: episodes must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("config: at least one seed is required");
    options.agent.validate();
  }
};

struct EpisodeStats {
  ControllerKind controller = ControllerKind::FixedTime;
  std::uint64_t seed = 0;
  std::size_t episode = 0;
  double mean_reward = 0.0;        // over agents and decision steps
  double mean_queue = 0.0;         // window queue-length sum, per agent and step
  double mean_waiting_time = 0.0;  // queued seconds per spawned vehicle
  double mean_travel_time = 0.0;   // spawn-to-exit seconds per exited vehicle
  std::size_t spawned = 0;
  std::size_t exited = 0;
};

inline constexpr const char* kMetricsHeader =
    "controller,seed,episode,step,agent,reward,queue_length,waiting_time,action,interact";
inline constexpr const char* kEpisodesHeader =
    "controller,seed,episode,mean_reward,mean_queue,mean_waiting_time,mean_travel_time,spawned,exited";

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// Demand seed of an episode. Independent of the controller, so every arm
/// sees identical arrivals for a given (master seed, episode).
inline std::uint64_t episode_demand_seed(std::uint64_t master, std::uint64_t scenario_seed, std::size_t episode) {
  return derive_seed(derive_seed(master, 17) ^ scenario_seed, episode);
}

/// Runs episodes of one controller under one master seed.
class EpisodeRunner {
 public:
  EpisodeRunner(const ExperimentConfig& config, ControllerKind kind, std::uint64_t seed)
      : config_(config), kind_(kind), seed_(seed) {
    config_.validate();
    TrafficWorld probe(config_.scenario, 0);
    controller_ = make_controller(kind_, config_.options, probe, seed_);
  }

  Controller& controller() noexcept { return *controller_; }
  const Controller& controller() const noexcept { return *controller_; }
  std::size_t decision_steps() const {
    return static_cast<std::size_t>(config_.scenario.episode_length / config_.scenario.decision_interval);
  }

  EpisodeStats run_episode(std::size_t episode, std::ostream* metrics = nullptr) {
    const Scenario& sc = config_.scenario;
    TrafficWorld world(sc, episode_demand_seed(seed_, sc.seed, episode));
    const std::size_t n = world.intersection_count();
    const std::size_t steps = decision_steps();

    std::vector<std::vector<double>> obs(n, std::vector<double>(kObservationDim, 0.0));
    std::vector<double> rewards(n, 0.0);
    EpisodeStats stats{kind_, seed_, episode};
    double reward_sum = 0.0;
    double queue_sum = 0.0;

    controller_->begin_episode();
    for (std::size_t k = 0; k < steps; ++k) {
      DecisionContext ctx{world, obs, rewards, k, world.time(), k > 0};
      const std::vector<Phase> actions = controller_->act(ctx);
      const std::vector<bool> flags = controller_->interaction_flags(n);
      if (actions.size() != n) throw std::runtime_error("controller returned the wrong number of actions");
      for (std::size_t i = 0; i < n; ++i) world.apply_action(i, actions[i]);

      world.begin_window();
      world.run(sc.decision_interval);
      for (std::size_t i = 0; i < n; ++i) {
        const Observation& o = world.observe(i);
        obs[i] = o.flatten();
        rewards[i] = world.reward(i);
        reward_sum += rewards[i];
        queue_sum += o.queue_total();
        if (metrics) {
          *metrics << to_string(kind_) << ',' << seed_ << ',' << episode << ',' << k << ',' << i << ','
                   << format_number(rewards[i]) << ',' << format_number(o.queue_total()) << ','
                   << format_number(o.waiting_total()) << ',' << static_cast<int>(actions[i]) << ','
                   << (flags[i] ? 1 : 0) << '\n';
        }
      }
    }
    DecisionContext final_ctx{world, obs, rewards, steps, world.time(), true};
    controller_->end_episode(final_ctx);

    const double rows = static_cast<double>(steps * n);
    stats.mean_reward = reward_sum / rows;
    stats.mean_queue = queue_sum / rows;
    stats.mean_waiting_time = world.mean_waiting_time();
    stats.mean_travel_time = world.mean_travel_time();
    stats.spawned = world.spawned();
    stats.exited = world.exited();
    return stats;
  }

 private:
  ExperimentConfig config_;
  ControllerKind kind_;
  std::uint64_t seed_;
  std::unique_ptr<Controller> controller_;
};

inline void write_episode_row(std::ostream& out, const EpisodeStats& e) {
  out << to_string(e.controller) << ',' << e.seed << ',' << e.episode << ',' << format_number(e.mean_reward) << ','
      << format_number(e.mean_queue) << ',' << format_number(e.mean_waiting_time) << ','
      << format_number(e.mean_travel_time) << ',' << e.spawned << ',' << e.exited << '\n';
}

/// All episodes of one (controller, seed) arm.
inline std::vector<EpisodeStats> run_arm(const ExperimentConfig& config, ControllerKind kind, std::uint64_t seed,
                                         std::ostream* metrics = nullptr, std::ostream* episodes = nullptr) {
  EpisodeRunner runner(config, kind, seed);
  std::vector<EpisodeStats> out;
  for (std::size_t e = 0; e < config.episodes; ++e) {
    out.push_back(runner.run_episode(e, metrics));
    if (episodes) write_episode_row(*episodes, out.back());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population convention (divide by n)
  std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
  if (xs.empty()) return {};
  double s = 0.0;
  for (double x : xs) s += x;
  const double m = s / static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size())), xs.size()};
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median: empty input");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// Episodes kept after burn-in: the last half, rounded up.
inline std::size_t kept_episodes(std::size_t total) { return total - total / 2; }

struct ArmSummary {
  std::string controller;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  MeanStd reward;
  MeanStd waiting;  // window waiting sum (metrics) or per-vehicle waiting (episodes)
  MeanStd travel;
};

struct SummaryTable {
  std::vector<ArmSummary> per_seed;
  std::vector<ArmSummary> pooled;  // seed == 0
};

/// Per-episode values keyed by (controller, seed), in episode order.
struct EpisodeSeries {
  std::vector<double> reward;
  std::vector<double> waiting;
  std::vector<double> travel;
};

inline SummaryTable summarize_series(const std::map<std::pair<std::string, std::uint64_t>, EpisodeSeries>& series) {
  SummaryTable table;
  std::map<std::string, EpisodeSeries> pooled;
  for (const auto& [key, s] : series) {
    const std::size_t keep = kept_episodes(s.reward.size());
    const std::size_t from = s.reward.size() - keep;
    auto tail = [from](const std::vector<double>& v) {
      return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(std::min(from, v.size())), v.end());
    };
    ArmSummary a{key.first, key.second, keep, mean_std(tail(s.reward)), mean_std(tail(s.waiting)),
                 mean_std(tail(s.travel))};
    table.per_seed.push_back(a);
    auto& p = pooled[key.first];
    for (double v : tail(s.reward)) p.reward.push_back(v);
    for (double v : tail(s.waiting)) p.waiting.push_back(v);
    for (double v : tail(s.travel)) p.travel.push_back(v);
  }
  for (const auto& [name, p] : pooled)
    table.pooled.push_back({name, 0, p.reward.size(), mean_std(p.reward), mean_std(p.waiting), mean_std(p.travel)});
  return table;
}

inline SummaryTable summarize_episodes(std::span<const EpisodeStats> episodes) {
  std::map<std::pair<std::string, std::uint64_t>, EpisodeSeries> series;
  for (const auto& e : episodes) {
    auto& s = series[{to_string(e.controller), e.seed}];
    s.reward.push_back(e.mean_reward);
    s.waiting.push_back(e.mean_waiting_time);
    s.travel.push_back(e.mean_travel_time);
  }
  return summarize_series(series);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Reads a metrics CSV and summarizes per-episode means (reward and window
/// waiting sum). Travel time is not part of the metrics stream and stays zero.
inline SummaryTable summarize_metrics(std::istream& in, const std::string& name = "metrics") {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(name + ": empty file");
  if (line != kMetricsHeader) throw std::runtime_error(name + ":1: unexpected header '" + line + "'");

  struct Acc {
    double reward = 0, waiting = 0;
    std::size_t rows = 0;
  };
  std::map<std::pair<std::string, std::uint64_t>, std::map<std::size_t, Acc>> acc;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 10)
      throw std::runtime_error(name + ":" + std::to_string(lineno) + ": expected 10 columns, got " +
                               std::to_string(cells.size()));
    try {
      auto& a = acc[{cells[0], std::stoull(cells[1])}][std::stoul(cells[2])];
      a.reward += std::stod(cells[5]);
      a.waiting += std::stod(cells[7]);
      ++a.rows;
    } catch (const std::logic_error&) {
      throw std::runtime_error(name + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  if (acc.empty()) throw std::runtime_error(name + ": no metric rows");

  std::map<std::pair<std::string, std::uint64_t>, EpisodeSeries> series;
  for (const auto& [key, eps] : acc) {
    auto& s = series[key];
    for (const auto& [ep, a] : eps) {
      s.reward.push_back(a.reward / static_cast<double>(a.rows));
      s.waiting.push_back(a.waiting / static_cast<double>(a.rows));
      s.travel.push_back(0.0);
    }
  }
  return summarize_series(series);
}

inline SummaryTable summarize_metrics_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  return summarize_metrics(in, path);
}

inline std::string format_table(const SummaryTable& t) {
  std::ostringstream out;
  auto row = [&out](const ArmSummary& a, const std::string& seed) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s %-8s %4zu  %10.3f +/- %-9.3f %10.3f +/- %-9.3f %9.3f +/- %-8.3f\n",
                  a.controller.c_str(), seed.c_str(), a.episodes, a.reward.mean, a.reward.std, a.waiting.mean,
                  a.waiting.std, a.travel.mean, a.travel.std);
    out << buf;
  };
  out << "controller       seed     eps   reward                   waiting                  travel\n";
  for (const auto& a : t.per_seed) row(a, std::to_string(a.seed));
  for (const auto& a : t.pooled) row(a, "pooled");
  return out.str();
}

}  // namespace mabrl
