#pragma once

// One broad-RL agent: replay memory, evaluation/target broad networks,
// epsilon-greedy action selection and the least-squares output-weight update.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabrl/broad_network.hpp"
#include "mabrl/linalg.hpp"
#include "mabrl/random.hpp"

namespace mabrl {

/// (s, a, r, s'). `actions` holds one index per action block; ordinary agents
/// have a single block.
struct Transition {
  std::vector<double> s;
  std::vector<std::size_t> actions;
  double reward = 0.0;
  std::vector<double> s_next;
};

/// Fixed-capacity ring buffer; once full, each push evicts the oldest item.
template <typename T>
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayMemory: capacity must be >= 1");
    items_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  void push(T t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }

  /// i-th oldest stored item.
  const T& operator[](std::size_t i) const { return items_[(head_ + i) % items_.size()]; }

  /// Up to n distinct items drawn uniformly without replacement.
  std::vector<const T*> sample(Rng& rng, std::size_t n) const {
    n = std::min(n, items_.size());
    std::vector<std::size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<const T*> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + uniform_index(rng, idx.size() - i);
      std::swap(idx[i], idx[j]);
      out.push_back(&items_[idx[i]]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<T> items_;
};

using ReplayMemory = RingBuffer<Transition>;

/// A stored transition with the frozen-feature rows U(s) and U(s') cached.
/// EBN and TBN share frozen weights, so one cache serves both networks.
struct Experience {
  Transition transition;
  std::vector<double> features;
  std::vector<double> next_features;
};

struct AgentConfig {
  BroadNetConfig net;
  std::size_t action_blocks = 1;  // net.action_count must be a multiple of this
  double gamma = 0.99;
  double lambda = 0.01;
  std::size_t pretrain_steps = 200;  // random actions and r-only targets before this step
  double epsilon_start = 0.1;
  double epsilon_min = 0.01;
  double epsilon_decay = 0.995;  // per update after pre-training
  std::size_t update_period = 10;
  std::size_t sync_period = 100;
  std::size_t batch_size = 512;
  std::size_t memory_capacity = 10000;
  double learning_rate = 0.001;  // carried for config parity; the least-squares update has no step size

  std::size_t block_width() const { return net.action_count / action_blocks; }

  void validate() const {
    net.validate();
    if (action_blocks == 0 || net.action_count % action_blocks != 0 || block_width() < 2)
      throw std::invalid_argument("AgentConfig: action_count must split into blocks of >= 2");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("AgentConfig: gamma must be in [0,1)");
    if (!(lambda >= 0.0)) throw std::invalid_argument("AgentConfig: lambda must be >= 0");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0) || !(epsilon_min >= 0.0 && epsilon_min <= 1.0))
      throw std::invalid_argument("AgentConfig: epsilon values must be in [0,1]");
    if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0))
      throw std::invalid_argument("AgentConfig: epsilon_decay must be in (0,1]");
    if (update_period == 0 || sync_period == 0 || batch_size == 0 || memory_capacity == 0)
      throw std::invalid_argument("AgentConfig: periods, batch size and capacity must be >= 1");
  }
};

struct RegressionTargets {
  Matrix u;  // batch x feature_width
  Matrix y;  // batch x action_count
};

class Agent {
 public:
  /// EBN and TBN are built from the same init seed, so they share frozen weights.
  Agent(AgentConfig config, std::uint64_t init_seed, std::uint64_t explore_seed)
      : config_((config.validate(), std::move(config))),
        ebn_(init_broad_net(config_.net, init_seed)),
        tbn_(ebn_),
        memory_(config_.memory_capacity),
        rng_(explore_seed),
        epsilon_(config_.epsilon_start) {}

  const AgentConfig& config() const noexcept { return config_; }
  const BroadNetParams& evaluation_net() const noexcept { return ebn_; }
  const BroadNetParams& target_net() const noexcept { return tbn_; }
  const RingBuffer<Experience>& memory() const noexcept { return memory_; }
  std::size_t global_step() const noexcept { return step_; }
  std::size_t stored_transitions() const noexcept { return stored_; }
  double epsilon() const noexcept { return epsilon_; }

  std::size_t state_dim() const noexcept { return config_.net.input_dim + config_.net.joint_dim; }

  std::vector<double> q_values(std::span<const double> s) const { return evaluate(ebn_, s); }
  std::vector<double> target_q_values(std::span<const double> s) const { return evaluate(tbn_, s); }

  /// Per-block argmax of the evaluation network; ties go to the lowest index.
  std::vector<std::size_t> greedy(std::span<const double> s) const {
    const auto q = q_values(s);
    const std::size_t w = config_.block_width();
    std::vector<std::size_t> out(config_.action_blocks);
    for (std::size_t b = 0; b < config_.action_blocks; ++b) {
      const auto first = q.begin() + static_cast<std::ptrdiff_t>(b * w);
      out[b] = static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(w)) - first);
    }
    return out;
  }

  /// Random during pre-training, epsilon-greedy afterwards.
  std::vector<std::size_t> act(std::span<const double> s) {
    check_state(s);
    const bool explore = step_ < config_.pretrain_steps || uniform01(rng_) < epsilon_;
    if (!explore) return greedy(s);
    std::vector<std::size_t> out(config_.action_blocks);
    for (auto& a : out) a = uniform_index(rng_, config_.block_width());
    return out;
  }

  /// Single-block convenience.
  std::size_t act_one(std::span<const double> s) { return act(s).front(); }

  /// Regression problem for a batch: rows of y start at the EBN's prediction,
  /// then the taken action's entry in each block becomes r (pre-training) or
  /// r + gamma * max Q_T(s') over that block.
  RegressionTargets build_targets(std::span<const Transition* const> batch) const {
    if (batch.empty()) throw std::invalid_argument("build_targets: empty batch");
    const auto [s, s_joint] = split_batch(batch, /*next=*/false);
    const auto [sn, sn_joint] = split_batch(batch, /*next=*/true);
    return targets_from_features(batch, broad_features(ebn_, s, s_joint), broad_features(tbn_, sn, sn_joint));
  }

  RegressionTargets build_targets(std::span<const Transition> batch) const {
    std::vector<const Transition*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& t : batch) ptrs.push_back(&t);
    return build_targets(std::span<const Transition* const>(ptrs));
  }

  /// Fits W_out by ridge regression on the batch and installs it in the EBN.
  const Matrix& update(std::span<const Transition* const> batch) { return fit(build_targets(batch)); }

  const Matrix& update(std::span<const Transition> batch) {
    std::vector<const Transition*> ptrs;
    for (const auto& t : batch) ptrs.push_back(&t);
    return update(std::span<const Transition* const>(ptrs));
  }

  void sync_target() { tbn_ = set_output_weight(std::move(tbn_), ebn_.w_out); }

  /// Stores a transition, advances the global step and runs the periodic
  /// update/sync schedule.
  void observe(Transition t) {
    if (t.s.size() != state_dim() || t.s_next.size() != state_dim())
      throw DimensionError("observe: transition state has wrong dimension");
    Experience e{std::move(t), {}, {}};
    e.features = feature_row(e.transition.s);
    e.next_features = feature_row(e.transition.s_next);
    memory_.push(std::move(e));
    ++stored_;
    ++step_;
    if (step_ % config_.update_period == 0) update_from_memory();
    if (step_ % config_.sync_period == 0) sync_target();
  }

  /// One least-squares update on a uniform sample of min(memory, batch_size) experiences.
  const Matrix& update_from_memory() {
    const auto sample = memory_.sample(rng_, config_.batch_size);
    const std::size_t f = config_.net.feature_width();
    Matrix u(sample.size(), f);
    Matrix u_next(sample.size(), f);
    std::vector<const Transition*> batch;
    batch.reserve(sample.size());
    for (std::size_t r = 0; r < sample.size(); ++r) {
      std::copy(sample[r]->features.begin(), sample[r]->features.end(), u.row(r).begin());
      std::copy(sample[r]->next_features.begin(), sample[r]->next_features.end(), u_next.row(r).begin());
      batch.push_back(&sample[r]->transition);
    }
    return fit(targets_from_features(batch, std::move(u), u_next));
  }

  /// Direct output-weight installation (tests, checkpoint restore).
  void set_evaluation_weight(Matrix w) { ebn_ = set_output_weight(std::move(ebn_), std::move(w)); }
  void set_target_weight(Matrix w) { tbn_ = set_output_weight(std::move(tbn_), std::move(w)); }
  void set_global_step(std::size_t step) noexcept { step_ = step; }

 private:
  void check_state(std::span<const double> s) const {
    if (s.size() != state_dim())
      throw DimensionError("agent: state has " + std::to_string(s.size()) + " entries, expected " +
                           std::to_string(state_dim()));
  }

  std::vector<double> feature_row(std::span<const double> s) const {
    const auto [local, joint] = split_state(s);
    const Matrix u = broad_features(ebn_, local, joint);
    return {u.data().begin(), u.data().end()};
  }

  RegressionTargets targets_from_features(std::span<const Transition* const> batch, Matrix u,
                                          const Matrix& u_next) const {
    const std::size_t n = batch.size();
    Matrix y = matmul(u, ebn_.w_out);
    const bool bootstrap = step_ >= config_.pretrain_steps && config_.gamma > 0.0;
    Matrix q_next;
    if (bootstrap) q_next = matmul(u_next, tbn_.w_out);

    const std::size_t w = config_.block_width();
    for (std::size_t r = 0; r < n; ++r) {
      const Transition& t = *batch[r];
      if (t.actions.size() != config_.action_blocks)
        throw DimensionError("build_targets: transition has " + std::to_string(t.actions.size()) +
                             " actions, expected " + std::to_string(config_.action_blocks));
      for (std::size_t b = 0; b < config_.action_blocks; ++b) {
        if (t.actions[b] >= w) throw std::out_of_range("build_targets: action index out of range");
        double target = t.reward;
        if (bootstrap) {
          const auto row = q_next.row(r).subspan(b * w, w);
          target += config_.gamma * *std::max_element(row.begin(), row.end());
        }
        y(r, b * w + t.actions[b]) = target;
      }
    }
    return {std::move(u), std::move(y)};
  }

  const Matrix& fit(const RegressionTargets& t) {
    Matrix w;
    try {
      w = ridge_solve(t.u, t.y, config_.lambda);
    } catch (const SolverError& e) {
      throw SolverError(std::string("agent update failed at step ") + std::to_string(step_) + ": " + e.what());
    }
    ebn_ = set_output_weight(std::move(ebn_), std::move(w));
    if (step_ >= config_.pretrain_steps) epsilon_ = std::max(config_.epsilon_min, epsilon_ * config_.epsilon_decay);
    return ebn_.w_out;
  }

  std::pair<Matrix, Matrix> split_state(std::span<const double> s) const {
    check_state(s);
    const std::size_t in = config_.net.input_dim;
    const std::size_t jd = config_.net.joint_dim;
    Matrix local(1, in, std::vector<double>(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(in)));
    Matrix joint(1, jd, std::vector<double>(s.begin() + static_cast<std::ptrdiff_t>(in), s.end()));
    return {std::move(local), std::move(joint)};
  }

  std::pair<Matrix, Matrix> split_batch(std::span<const Transition* const> batch, bool next) const {
    const std::size_t in = config_.net.input_dim;
    const std::size_t jd = config_.net.joint_dim;
    Matrix local(batch.size(), in);
    Matrix joint(batch.size(), jd);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const auto& v = next ? batch[r]->s_next : batch[r]->s;
      if (v.size() != in + jd) throw DimensionError("agent: batch state has wrong dimension");
      std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(in), local.row(r).begin());
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(in), v.end(), joint.row(r).begin());
    }
    return {std::move(local), std::move(joint)};
  }

  std::vector<double> evaluate(const BroadNetParams& net, std::span<const double> s) const {
    const auto [local, joint] = split_state(s);
    const Matrix q = forward(net, local, joint).q;
    return {q.data().begin(), q.data().end()};
  }

  AgentConfig config_;
  BroadNetParams ebn_;
  BroadNetParams tbn_;
  RingBuffer<Experience> memory_;
  Rng rng_;
  double epsilon_;
  std::size_t step_ = 0;
  std::size_t stored_ = 0;
};

}  // namespace mabrl
