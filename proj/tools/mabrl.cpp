// mabrl: run experiments, summarize metrics files, compare controller arms.
//
//   mabrl run --config exp.json [--set key=value]... [--seed N]... [--out DIR] [--controller NAME]
//   mabrl compare --config exp.json --arms FT,SOTL,MABRL_DSCIM [--set ...] [--seed N]... [--out DIR]
//   mabrl summarize DIR/metrics.csv [--json out.json]
//
// Exit codes: 0 ok, 2 config/usage error, 3 runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mabrl/config.hpp"
#include "mabrl/harness.hpp"

namespace fs = std::filesystem;
using namespace mabrl;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct RunArgs {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string controller;
  std::string arms;
  bool checkpoint = false;
};

ExperimentConfig resolve(const RunArgs& a) {
  std::vector<std::string> overrides = a.sets;
  if (!a.controller.empty()) overrides.push_back("controller=\"" + a.controller + "\"");
  ExperimentConfig c = load_config(a.config, overrides);
  if (!a.seeds.empty()) c.seeds = a.seeds;
  if (!a.out.empty()) c.output_dir = a.out;
  return c;
}

std::vector<ControllerKind> parse_arms(const std::string& list) {
  std::vector<ControllerKind> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    try {
      out.push_back(controller_kind_from_string(name));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--arms: ") + e.what());
    }
  }
  if (out.empty()) throw ConfigError("--arms: no controllers given");
  return out;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error(p.string() + ": cannot open for writing");
  return f;
}

json checkpoint_of(const Controller& c) {
  json agents = json::array();
  if (const auto* m = dynamic_cast<const MabrlController*>(&c)) {
    for (const auto& a : m->agents()) agents.push_back(to_json(a.evaluation_net()));
  } else if (const auto* s = dynamic_cast<const SabrlController*>(&c)) {
    agents.push_back(to_json(s->agent().evaluation_net()));
  }
  return agents;
}

/// Runs every (arm, seed) pair into one metrics/episodes stream and writes summary.json.
int execute(const ExperimentConfig& config, const std::vector<ControllerKind>& arms, bool checkpoint) {
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  auto metrics = open_out(dir / "metrics.csv");
  auto episodes = open_out(dir / "episodes.csv");
  metrics << kMetricsHeader << '\n';
  episodes << kEpisodesHeader << '\n';

  std::vector<EpisodeStats> all;
  for (const auto kind : arms) {
    for (const auto seed : config.seeds) {
      EpisodeRunner runner(config, kind, seed);
      for (std::size_t e = 0; e < config.episodes; ++e) {
        all.push_back(runner.run_episode(e, &metrics));
        write_episode_row(episodes, all.back());
        std::cerr << to_string(kind) << " seed " << seed << " episode " << e << " reward "
                  << format_number(all.back().mean_reward) << '\n';
      }
      if (checkpoint) {
        const json agents = checkpoint_of(runner.controller());
        if (!agents.empty()) {
          auto f = open_out(dir / (std::string("checkpoint_") + to_string(kind) + "_" + std::to_string(seed) + ".json"));
          f << json{{"controller", to_string(kind)}, {"seed", seed}, {"agents", agents}}.dump() << '\n';
        }
      }
    }
  }
  if (!metrics || !episodes) throw std::runtime_error("failed writing output files");

  const SummaryTable table = summarize_episodes(all);
  auto summary = open_out(dir / "summary.json");
  summary << to_json(table).dump(2) << '\n';
  std::cout << format_table(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent broad reinforcement learning for traffic signal control"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto add_common = [&run_args](CLI::App* sub) {
    sub->add_option("-c,--config", run_args.config, "experiment config (JSON)");
    sub->add_option("-s,--set", run_args.sets, "override, e.g. --set gamma=0.9 --set scenario.rows=2");
    sub->add_option("--seed", run_args.seeds, "master seed (repeatable; replaces the config's seed list)");
    sub->add_option("-o,--out", run_args.out, "output directory");
    sub->add_flag("--checkpoint", run_args.checkpoint, "write learned output weights per arm and seed");
  };

  auto* run = app.add_subcommand("run", "run one controller");
  add_common(run);
  run->add_option("--controller", run_args.controller, "FT, SOTL, SABRL, MABRL_ORIGINAL, MABRL_RANDOM, MABRL_DSCIM");

  auto* compare = app.add_subcommand("compare", "run several controllers on the same demand");
  add_common(compare);
  compare->add_option("--arms", run_args.arms, "comma-separated controller list")
      ->default_val("FT,SOTL,MABRL_DSCIM");

  std::string metrics_path, json_path;
  auto* summarize = app.add_subcommand("summarize", "mean +/- std over the last half of episodes");
  summarize->add_option("metrics", metrics_path, "metrics CSV")->required();
  summarize->add_option("--json", json_path, "also write the summary as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*summarize) {
      const SummaryTable t = summarize_metrics_file(metrics_path);
      std::cout << format_table(t);
      if (!json_path.empty()) open_out(json_path) << to_json(t).dump(2) << '\n';
      return 0;
    }
    const ExperimentConfig config = resolve(run_args);
    const auto arms = *compare ? parse_arms(run_args.arms) : std::vector<ControllerKind>{config.controller};
    return execute(config, arms, run_args.checkpoint);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
