#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <random>
#include <algorithm>

#include <sys/wait.h>
#include <unistd.h>

#include "mabrl/config.hpp"
#include "mabrl/harness.hpp"

using namespace mabrl;
namespace fs = std::filesystem;

namespace {

const std::string kScenarios = MABRL_SCENARIO_DIR;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mabrl_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string metrics_rows(const std::string& controller, std::uint64_t seed, const std::vector<double>& episode_rewards) {
  std::ostringstream out;
  for (std::size_t e = 0; e < episode_rewards.size(); ++e)
    for (std::size_t step = 0; step < 2; ++step)
      for (std::size_t agent = 0; agent < 2; ++agent)
        out << controller << ',' << seed << ',' << e << ',' << step << ',' << agent << ',' << episode_rewards[e]
            << ",1,3,0,0\n";
  return out.str();
}

ExperimentConfig small_experiment(ControllerKind kind) {
  ExperimentConfig c;
  c.scenario.rows = 2;
  c.scenario.cols = 2;
  c.scenario.arrival_rate = 0.1;
  c.scenario.episode_length = 300;
  c.controller = kind;
  c.episodes = 3;
  c.options.agent.pretrain_steps = 20;
  c.options.agent.batch_size = 64;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MABRL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(MeanStd, PopulationConvention) {
  const std::vector<double> c(10, -4.0);
  EXPECT_EQ(mean_std(c).mean, -4.0);
  EXPECT_EQ(mean_std(c).std, 0.0);
  const auto m = mean_std(std::vector<double>{-2, -6});
  EXPECT_DOUBLE_EQ(m.mean, -4.0);
  EXPECT_DOUBLE_EQ(m.std, 2.0);
  EXPECT_EQ(kept_episodes(100), 50u);
  EXPECT_EQ(kept_episodes(5), 3u);
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

TEST(Summarize, ConstantRewardHasZeroStd) {
  std::istringstream in(std::string(kMetricsHeader) + "\n" + metrics_rows("FT", 1, std::vector<double>(10, -4.0)));
  const auto t = summarize_metrics(in);
  ASSERT_EQ(t.per_seed.size(), 1u);
  EXPECT_EQ(t.per_seed[0].episodes, 5u);
  EXPECT_DOUBLE_EQ(t.per_seed[0].reward.mean, -4.0);
  EXPECT_DOUBLE_EQ(t.per_seed[0].reward.std, 0.0);
  EXPECT_DOUBLE_EQ(t.per_seed[0].waiting.mean, 3.0);
}

TEST(Summarize, LastHalfOnlyAndPooledAcrossSeeds) {
  // Burn-in episodes carry a large value that must not leak into the summary.
  std::istringstream in(std::string(kMetricsHeader) + "\n" + metrics_rows("SOTL", 1, {-100, -100, -2, -6}) +
                        metrics_rows("SOTL", 2, {-100, -100, -10, -10}));
  const auto t = summarize_metrics(in);
  ASSERT_EQ(t.per_seed.size(), 2u);
  EXPECT_DOUBLE_EQ(t.per_seed[0].reward.mean, -4.0);
  EXPECT_DOUBLE_EQ(t.per_seed[0].reward.std, 2.0);
  ASSERT_EQ(t.pooled.size(), 1u);
  EXPECT_EQ(t.pooled[0].seed, 0u);
  EXPECT_DOUBLE_EQ(t.pooled[0].reward.mean, -7.0);  // mean of the per-seed means
  EXPECT_EQ(t.pooled[0].episodes, 4u);
}

TEST(Summarize, ReportsFileAndLine) {
  {
    std::istringstream in("");
    EXPECT_THROW(summarize_metrics(in, "m.csv"), std::runtime_error);
  }
  {
    std::istringstream in("a,b,c\n");
    try {
      summarize_metrics(in, "m.csv");
      FAIL();
    } catch (const std::runtime_error& e) {
      EXPECT_NE(std::string(e.what()).find("m.csv:1"), std::string::npos) << e.what();
    }
  }
  {
    std::istringstream in(std::string(kMetricsHeader) + "\nFT,1,0,0,0,-1,1,1,0,0\nFT,1,0,1,0,oops,1,1,0,0\n");
    try {
      summarize_metrics(in, "m.csv");
      FAIL();
    } catch (const std::runtime_error& e) {
      EXPECT_NE(std::string(e.what()).find("m.csv:3"), std::string::npos) << e.what();
    }
  }
  {
    std::istringstream in(std::string(kMetricsHeader) + "\nFT,1,0,0,0\n");
    try {
      summarize_metrics(in, "m.csv");
      FAIL();
    } catch (const std::runtime_error& e) {
      EXPECT_NE(std::string(e.what()).find("m.csv:2"), std::string::npos) << e.what();
    }
  }
}

TEST(Runner, FixedTimeWithoutDemandIsAllZero) {
  ExperimentConfig c = small_experiment(ControllerKind::FixedTime);
  c.scenario.arrival_rate = 0.0;
  std::ostringstream metrics;
  const auto eps = run_arm(c, ControllerKind::FixedTime, 1, &metrics);
  ASSERT_EQ(eps.size(), 3u);
  for (const auto& e : eps) {
    EXPECT_EQ(e.mean_reward, 0.0);
    EXPECT_EQ(e.mean_queue, 0.0);
    EXPECT_EQ(e.spawned, 0u);
  }
  std::istringstream in(std::string(kMetricsHeader) + "\n" + metrics.str());
  const auto t = summarize_metrics(in);
  EXPECT_EQ(t.per_seed[0].reward.mean, 0.0);
}

TEST(Runner, MetricsRowOrderAndCount) {
  const ExperimentConfig c = small_experiment(ControllerKind::MabrlDscim);
  std::ostringstream metrics;
  run_arm(c, ControllerKind::MabrlDscim, 4, &metrics);
  std::istringstream in(metrics.str());
  std::string line;
  std::size_t rows = 0;
  std::tuple<std::size_t, std::size_t, std::size_t> prev{0, 0, 0};
  while (std::getline(in, line)) {
    const auto cells = split_csv_line(line);
    ASSERT_EQ(cells.size(), 10u);
    EXPECT_EQ(cells[0], "MABRL_DSCIM");
    const std::tuple<std::size_t, std::size_t, std::size_t> key{std::stoul(cells[2]), std::stoul(cells[3]),
                                                                std::stoul(cells[4])};
    if (rows > 0) {
      EXPECT_LT(prev, key);
    }
    prev = key;
    ++rows;
  }
  EXPECT_EQ(rows, 3u * 30u * 4u);
}

TEST(Runner, StoresOneTransitionPerStepPerAgent) {
  const ExperimentConfig c = small_experiment(ControllerKind::MabrlOriginal);
  EpisodeRunner runner(c, ControllerKind::MabrlOriginal, 2);
  for (std::size_t e = 0; e < c.episodes; ++e) runner.run_episode(e);
  const auto& m = dynamic_cast<const MabrlController&>(runner.controller());
  for (const auto& a : m.agents()) EXPECT_EQ(a.stored_transitions(), runner.decision_steps() * c.episodes);
}

TEST(Runner, ByteIdenticalMetricsForSameSeed) {
  const ExperimentConfig c = small_experiment(ControllerKind::MabrlDscim);
  std::ostringstream a, b, other;
  run_arm(c, ControllerKind::MabrlDscim, 9, &a);
  run_arm(c, ControllerKind::MabrlDscim, 9, &b);
  run_arm(c, ControllerKind::MabrlDscim, 10, &other);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), other.str());
}

TEST(Runner, ArmsShareDemand) {
  const ExperimentConfig c = small_experiment(ControllerKind::FixedTime);
  const auto ft = run_arm(c, ControllerKind::FixedTime, 3);
  const auto sotl = run_arm(c, ControllerKind::Sotl, 3);
  for (std::size_t e = 0; e < ft.size(); ++e) EXPECT_EQ(ft[e].spawned, sotl[e].spawned);
}

TEST(Runner, LearnerBeatsFixedTimeOnUnbalancedSingleIntersection) {
  ExperimentConfig c = load_config(kScenarios + "/experiment.json", {"scenario=" + kScenarios + "/single.json",
                                                                     "episodes=16", "seeds=[1]"});
  const auto ft = run_arm(c, ControllerKind::FixedTime, 1);
  const auto rl = run_arm(c, ControllerKind::MabrlDscim, 1);
  std::vector<EpisodeStats> all(ft.begin(), ft.end());
  all.insert(all.end(), rl.begin(), rl.end());
  const auto t = summarize_episodes(all);
  double ft_mean = 0, rl_mean = 0;
  for (const auto& a : t.pooled) (a.controller == "FT" ? ft_mean : rl_mean) = a.reward.mean;
  EXPECT_GT(rl_mean, ft_mean);
}

TEST(Config, LoadsShippedFilesAndOverrides) {
  const auto c = load_config(kScenarios + "/experiment.json", {"gamma=0.5", "scenario.rows=2", "controller=FT"});
  EXPECT_EQ(c.options.agent.gamma, 0.5);
  EXPECT_EQ(c.options.agent.lambda, 10.0);
  EXPECT_EQ(c.scenario.rows, 2u);
  EXPECT_EQ(c.scenario.cols, 3u);
  EXPECT_EQ(c.scenario.episode_length, 1200);
  EXPECT_EQ(c.controller, ControllerKind::FixedTime);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));

  const auto r = load_config("", {"scenario=" + kScenarios + "/replay.json"});
  EXPECT_EQ(r.scenario.vehicles.size(), 4u);
  TrafficWorld w(r.scenario, 1);
  w.run(200);
  EXPECT_EQ(w.spawned(), 4u);
  EXPECT_EQ(w.exited(), 3u);  // the N->S vehicle never sees green under the initial phase
  EXPECT_EQ(w.lane_queue(1, Side::North, Turn::Straight).size(), 1u);
}

TEST(Config, ErrorsNameFileAndLine) {
  const fs::path dir = scratch_dir("cfg");
  const auto bad_syntax = write_file(dir / "syntax.json", "{\n  \"gamma\": 0.9,\n  \"lambda\": ,\n}\n");
  try {
    load_config(bad_syntax);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("syntax.json:3"), std::string::npos) << e.what();
  }
  const auto unknown = write_file(dir / "unknown.json", "{\n  \"gamma\": 0.9,\n  \"gama\": 0.9\n}\n");
  try {
    load_config(unknown);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown.json:3"), std::string::npos) << e.what();
  }
  const auto range = write_file(dir / "range.json", "{\n  \"episodes\": 2,\n  \"gamma\": 1.5\n}\n");
  EXPECT_THROW(load_config(range), ConfigError);
  const auto type = write_file(dir / "type.json", "{\n\n  \"lambda\": \"big\"\n}\n");
  try {
    load_config(type);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("type.json:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_config((dir / "missing.json").string()), ConfigError);
  EXPECT_THROW(load_config("", {"novalue"}), ConfigError);
  EXPECT_THROW(load_config("", {"controller=DQN"}), ConfigError);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripsBroadNet) {
  BroadNetConfig nc;
  nc.joint_dim = 12;
  auto p = init_broad_net(nc, 5);
  std::mt19937_64 rng(1);
  std::vector<double> w(nc.feature_width() * nc.action_count);
  for (double& v : w) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  p = set_output_weight(p, Matrix(nc.feature_width(), nc.action_count, w));
  const auto back = broad_net_from_json(json::parse(to_json(p).dump()));
  EXPECT_EQ(back, p);
  json broken = to_json(p);
  broken["w_out"]["rows"] = 3;
  broken["w_out"]["data"] = std::vector<double>(12, 0.0);
  EXPECT_THROW(broad_net_from_json(broken), ConfigError);
}

TEST(Cli, ExitCodesAndOutputs) {
  const fs::path dir = scratch_dir("cli");
  const std::string cfg = kScenarios + "/experiment.json";
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("run --bogus"), 2);
  EXPECT_EQ(run_cli("run --config " + (dir / "none.json").string()), 2);
  EXPECT_EQ(run_cli("run --config " + cfg + " --set gamma=2"), 2);
  EXPECT_EQ(run_cli("compare --config " + cfg + " --arms FT,XYZ"), 2);
  EXPECT_EQ(run_cli("summarize " + (dir / "none.csv").string()), 3);

  const std::string out = (dir / "run").string();
  ASSERT_EQ(run_cli("compare --config " + cfg + " --arms FT,MABRL_DSCIM --seed 1 --set episodes=2 "
                    "--set episode_length=100 --checkpoint --out " + out),
            0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "summary.json"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "checkpoint_MABRL_DSCIM_1.json"));
  EXPECT_FALSE(fs::exists(fs::path(out) / "checkpoint_FT_1.json"));
  const std::string metrics = slurp(fs::path(out) / "metrics.csv");
  EXPECT_EQ(metrics.rfind(kMetricsHeader, 0), 0u);
  // 2 arms x 2 episodes x 10 steps x 9 agents, plus the header.
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 361);
  const auto ckpt = json::parse(slurp(fs::path(out) / "checkpoint_MABRL_DSCIM_1.json"));
  EXPECT_EQ(ckpt["agents"].size(), 9u);
  EXPECT_NO_THROW(broad_net_from_json(ckpt["agents"][0]));

  EXPECT_EQ(run_cli("summarize " + out + "/metrics.csv --json " + (dir / "s.json").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "s.json"));
  write_file(dir / "bad.csv", "nope\n");
  EXPECT_EQ(run_cli("summarize " + (dir / "bad.csv").string()), 3);
  fs::remove_all(dir);
}
