#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mabrl/controllers.hpp"

using namespace mabrl;

namespace {

Scenario quiet(std::size_t rows, std::size_t cols) {
  Scenario s;
  s.rows = rows;
  s.cols = cols;
  s.arrival_rate = 0.0;
  return s;
}

AgentConfig greedy_config() {
  AgentConfig c;
  c.pretrain_steps = 0;
  c.epsilon_start = 0.0;
  c.epsilon_min = 0.0;
  return c;
}

struct Inputs {
  std::vector<std::vector<double>> obs;
  std::vector<double> rewards;

  DecisionContext context(const TrafficWorld& w, std::size_t step = 1) const {
    return {w, obs, rewards, step, static_cast<std::int64_t>(step) * 10, step > 0};
  }
};

Inputs random_inputs(std::mt19937_64& rng, std::size_t n) {
  Inputs in;
  in.obs.assign(n, std::vector<double>(kObservationDim));
  for (auto& o : in.obs)
    for (double& v : o) v = std::uniform_real_distribution<double>(0, 200)(rng);
  for (std::size_t i = 0; i < n; ++i) in.rewards.push_back(std::uniform_real_distribution<double>(-20, 0)(rng));
  return in;
}

}  // namespace

TEST(FixedTime, CycleBoundaries) {
  const std::array<std::int64_t, 4> d{30, 30, 30, 30};
  EXPECT_EQ(ft_act(0, d), Phase::EwStraight);
  EXPECT_EQ(ft_act(29, d), Phase::EwStraight);
  EXPECT_EQ(ft_act(30, d), Phase::EwLeft);
  EXPECT_EQ(ft_act(45, d), Phase::EwLeft);
  EXPECT_EQ(ft_act(60, d), Phase::NsStraight);
  EXPECT_EQ(ft_act(119, d), Phase::NsLeft);
  EXPECT_EQ(ft_act(120, d), Phase::EwStraight);
}

TEST(FixedTime, PeriodicAndUneven) {
  const std::array<std::int64_t, 4> d{20, 5, 40, 10};
  for (std::int64_t t = 0; t < 400; ++t) EXPECT_EQ(ft_act(t, d), ft_act(t + 75, d));
  EXPECT_EQ(ft_act(24, d), Phase::EwLeft);
  EXPECT_EQ(ft_act(25, d), Phase::NsStraight);
  EXPECT_EQ(ft_act(70, d), Phase::NsLeft);
  const std::array<std::int64_t, 4> bad{30, 0, 30, 30};
  EXPECT_THROW(ft_act(0, bad), std::invalid_argument);
}

TEST(FixedTime, ControllerUsesContextTime) {
  TrafficWorld w(quiet(2, 2), 1);
  FixedTimeController ft({30, 30, 30, 30});
  Inputs in;
  in.obs.assign(4, std::vector<double>(kObservationDim, 0.0));
  in.rewards.assign(4, 0.0);
  DecisionContext ctx{w, in.obs, in.rewards, 4, 40, true};
  EXPECT_EQ(ft.act(ctx), std::vector<Phase>(4, Phase::EwLeft));
}

TEST(Sotl, HoldsBelowThresholdAdvancesAtIt) {
  EXPECT_EQ(sotl_act(Phase::EwStraight, 7.0, 8.0), Phase::EwStraight);
  EXPECT_EQ(sotl_act(Phase::EwStraight, 8.0, 8.0), Phase::EwLeft);
  EXPECT_EQ(sotl_act(Phase::NsLeft, 100.0, 8.0), Phase::EwStraight);
  EXPECT_THROW(sotl_act(Phase::EwStraight, 1.0, 0.0), std::invalid_argument);
}

TEST(Sotl, ThresholdOneCyclesWhenRedTrafficWaits) {
  TrafficWorld w(quiet(1, 1), 1);
  // One vehicle on every gated lane: each phase always leaves some red queue.
  for (Side s : {Side::North, Side::East, Side::South, Side::West})
    for (Turn t : {Turn::Left, Turn::Straight}) w.add_vehicle({{0, s, t}});
  w.set_all_red(true);
  SotlController c(1.0);
  Inputs in;
  in.obs.assign(1, std::vector<double>(kObservationDim, 0.0));
  in.rewards.assign(1, 0.0);
  std::vector<Phase> trace;
  for (int k = 0; k < 5; ++k) trace.push_back(c.act(in.context(w))[0]);
  EXPECT_EQ(trace, (std::vector<Phase>{Phase::EwLeft, Phase::NsStraight, Phase::NsLeft, Phase::EwStraight,
                                       Phase::EwLeft}));
}

TEST(Sotl, HugeThresholdHolds) {
  TrafficWorld w(quiet(1, 1), 1);
  for (int k = 0; k < 20; ++k) w.add_vehicle({{0, Side::North, Turn::Straight}});
  SotlController c(1e9);
  Inputs in;
  in.obs.assign(1, std::vector<double>(kObservationDim, 0.0));
  in.rewards.assign(1, 0.0);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(c.act(in.context(w))[0], Phase::EwStraight);
}

TEST(ObservationFeatures, LogOfPerSecondAverage) {
  const std::vector<double> raw{0, 10, 90, -5};
  const auto f = observation_features(raw, 10);
  EXPECT_EQ(f[0], 0.0);
  EXPECT_DOUBLE_EQ(f[1], std::log(2.0));
  EXPECT_DOUBLE_EQ(f[2], std::log(10.0));
  EXPECT_EQ(f[3], 0.0);
}

TEST(Sabrl, FreshGreedyAgentPicksFirstPhase) {
  TrafficWorld w(quiet(1, 1), 1);
  SabrlController c(greedy_config(), 1, 10, 5);
  Inputs in;
  in.obs.assign(1, std::vector<double>(kObservationDim, 3.0));
  in.rewards.assign(1, -1.0);
  EXPECT_EQ(c.act(in.context(w, 0)), std::vector<Phase>{Phase::EwStraight});
  EXPECT_EQ(c.agent().config().net.action_count, 4u);
  EXPECT_EQ(c.agent().config().net.input_dim, kObservationDim);
}

TEST(Sabrl, BlockGreedyMatchesJointBruteForce) {
  AgentConfig cfg = greedy_config();
  cfg.net.input_dim = 2 * kObservationDim;
  cfg.net.action_count = 8;
  cfg.action_blocks = 2;
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    Agent a(cfg, rng(), rng());
    std::vector<double> w(cfg.net.feature_width() * 8);
    for (double& v : w) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    a.set_evaluation_weight(Matrix(cfg.net.feature_width(), 8, w));
    std::vector<double> s(cfg.net.input_dim);
    for (double& v : s) v = std::uniform_real_distribution<double>(0, 4)(rng);
    const auto q = a.q_values(s);
    double best = -INFINITY;
    std::pair<std::size_t, std::size_t> arg{};
    for (std::size_t a0 = 0; a0 < 4; ++a0)
      for (std::size_t a1 = 0; a1 < 4; ++a1)
        if (q[a0] + q[4 + a1] > best) {
          best = q[a0] + q[4 + a1];
          arg = {a0, a1};
        }
    EXPECT_EQ(a.act(s), (std::vector<std::size_t>{arg.first, arg.second}));
  }
}

TEST(Sabrl, StoresOneTransitionPerDecisionAfterTheFirst) {
  TrafficWorld w(quiet(2, 2), 1);
  SabrlController c(greedy_config(), 4, 10, 5);
  std::mt19937_64 rng(2);
  c.begin_episode();
  for (std::size_t k = 0; k < 6; ++k) c.act(random_inputs(rng, 4).context(w, k));
  c.end_episode(random_inputs(rng, 4).context(w, 6));
  EXPECT_EQ(c.agent().stored_transitions(), 6u);
  EXPECT_EQ(c.agent().config().action_blocks, 4u);
}

TEST(Ablation, OriginalJointBlockIsZero) {
  TrafficWorld w(quiet(3, 3), 1);
  MabrlController c(ControllerKind::MabrlOriginal, AgentConfig{}, w.positions(), 10, 1);
  std::mt19937_64 rng(1);
  const auto in = random_inputs(rng, 9);
  const auto states = c.joint_states(in.context(w));
  for (std::size_t i = 0; i < 9; ++i) {
    ASSERT_EQ(states[i].size(), 2 * kObservationDim);
    const auto local = observation_features(in.obs[i], 10);
    for (std::size_t k = 0; k < kObservationDim; ++k) {
      EXPECT_EQ(states[i][k], local[k]);
      EXPECT_EQ(states[i][kObservationDim + k], 0.0);
    }
  }
  EXPECT_EQ(c.interaction_flags(9), std::vector<bool>(9, false));
}

TEST(Ablation, RandomJointBlockIsReproducibleAndBounded) {
  TrafficWorld w(quiet(3, 3), 1);
  MabrlController a(ControllerKind::MabrlRandom, AgentConfig{}, w.positions(), 10, 8);
  MabrlController b(ControllerKind::MabrlRandom, AgentConfig{}, w.positions(), 10, 8);
  MabrlController other(ControllerKind::MabrlRandom, AgentConfig{}, w.positions(), 10, 9);
  std::mt19937_64 rng(3);
  const auto in = random_inputs(rng, 9);
  const auto sa = a.joint_states(in.context(w));
  EXPECT_EQ(sa, b.joint_states(in.context(w)));
  EXPECT_NE(sa, other.joint_states(in.context(w)));
  std::vector<double> fmax(kObservationDim, 0.0);
  for (const auto& o : in.obs) {
    const auto f = observation_features(o, 10);
    for (std::size_t k = 0; k < kObservationDim; ++k) fmax[k] = std::max(fmax[k], f[k]);
  }
  for (const auto& s : sa)
    for (std::size_t k = 0; k < kObservationDim; ++k) {
      EXPECT_GE(s[kObservationDim + k], 0.0);
      EXPECT_LE(s[kObservationDim + k], fmax[k]);
    }
}

TEST(Ablation, DscimEqualRewardsInteractWithNearestNeighbors) {
  TrafficWorld w(quiet(3, 3), 1);
  MabrlController c(ControllerKind::MabrlDscim, AgentConfig{}, w.positions(), 10, 1);
  std::mt19937_64 rng(4);
  auto in = random_inputs(rng, 9);
  in.rewards.assign(9, -3.0);
  const auto states = c.joint_states(in.context(w));
  EXPECT_EQ(c.interaction_flags(9), std::vector<bool>(9, true));
  // Center intersection: mean of the four edge-adjacent intersections.
  for (std::size_t k = 0; k < kObservationDim; ++k) {
    double sum = 0;
    for (std::size_t j : {1, 3, 5, 7}) sum += observation_features(in.obs[j], 10)[k];
    EXPECT_NEAR(states[4][kObservationDim + k], sum / 4.0, 1e-12);
  }
}

TEST(Ablation, DscimAboveMeanAgentsStayLocal) {
  TrafficWorld w(quiet(1, 3), 1);
  MabrlController c(ControllerKind::MabrlDscim, AgentConfig{}, w.positions(), 10, 1);
  std::mt19937_64 rng(5);
  auto in = random_inputs(rng, 3);
  in.rewards = {-1, -9, -2};
  const auto states = c.joint_states(in.context(w));
  EXPECT_EQ(c.interaction_flags(3), (std::vector<bool>{false, true, false}));
  for (std::size_t k = 0; k < kObservationDim; ++k) EXPECT_EQ(states[0][kObservationDim + k], 0.0);
}

TEST(Mabrl, RejectsMismatchedInputs) {
  TrafficWorld w(quiet(2, 2), 1);
  MabrlController c(ControllerKind::MabrlDscim, AgentConfig{}, w.positions(), 10, 1);
  std::mt19937_64 rng(6);
  EXPECT_THROW(c.joint_states(random_inputs(rng, 3).context(w)), DimensionError);
  EXPECT_THROW(MabrlController(ControllerKind::Sotl, AgentConfig{}, w.positions(), 10, 1), std::invalid_argument);
}

TEST(Mabrl, AgentsGetDistinctSeeds) {
  TrafficWorld w(quiet(2, 2), 1);
  MabrlController c(ControllerKind::MabrlOriginal, AgentConfig{}, w.positions(), 10, 1);
  ASSERT_EQ(c.agents().size(), 4u);
  EXPECT_NE(c.agents()[0].evaluation_net().w_m, c.agents()[1].evaluation_net().w_m);
}

TEST(MakeController, BuildsEveryKind) {
  TrafficWorld w(quiet(2, 2), 1);
  const ControllerOptions opt;
  for (auto k : {ControllerKind::FixedTime, ControllerKind::Sotl, ControllerKind::Sabrl, ControllerKind::MabrlOriginal,
                 ControllerKind::MabrlRandom, ControllerKind::MabrlDscim}) {
    const auto c = make_controller(k, opt, w, 3);
    EXPECT_EQ(c->kind(), k);
    EXPECT_EQ(controller_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(controller_kind_from_string("DQN"), std::invalid_argument);
}
