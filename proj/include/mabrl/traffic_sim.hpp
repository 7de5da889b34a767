#pragma once

// Deterministic one-second-tick queueing model of a signalized grid.
//
// Each intersection has four approaches (vehicles arriving from N/E/S/W), each
// with a left, straight and right lane. Queued vehicles discharge at the
// saturation flow when their movement is green, travel the link for a fixed
// delay and then join the next intersection's queue or leave the grid.
// Right turns are never signal-controlled; straight and left movements are
// gated by four protected phases with a yellow interval between changes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabrl/dscim.hpp"
#include "mabrl/random.hpp"

namespace mabrl {

/// Side of the intersection a vehicle arrives from.
enum class Side : std::uint8_t { North = 0, East = 1, South = 2, West = 3 };
enum class Turn : std::uint8_t { Left = 0, Straight = 1, Right = 2 };

/// Protected movements, in cycle order.
enum class Phase : std::uint8_t { EwStraight = 0, EwLeft = 1, NsStraight = 2, NsLeft = 3 };

inline constexpr std::size_t kPhaseCount = 4;
inline constexpr std::size_t kLanesPerIntersection = 12;
/// Observation groups: EW through (straight + right), EW left, NS through, NS left.
inline constexpr std::size_t kMovementGroups = 4;
inline constexpr std::size_t kObservationDim = 3 * kMovementGroups;

inline Phase next_phase(Phase p) {
  return static_cast<Phase>((static_cast<std::size_t>(p) + 1) % kPhaseCount);
}

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::EwStraight: return "EW_STRAIGHT";
    case Phase::EwLeft: return "EW_LEFT";
    case Phase::NsStraight: return "NS_STRAIGHT";
    case Phase::NsLeft: return "NS_LEFT";
  }
  return "?";
}

inline const char* to_string(Side s) {
  switch (s) {
    case Side::North: return "N";
    case Side::East: return "E";
    case Side::South: return "S";
    case Side::West: return "W";
  }
  return "?";
}

inline Side side_from_string(const std::string& s) {
  if (s == "N") return Side::North;
  if (s == "E") return Side::East;
  if (s == "S") return Side::South;
  if (s == "W") return Side::West;
  throw std::invalid_argument("unknown side '" + s + "' (expected N, E, S or W)");
}

inline std::size_t lane_index(Side from, Turn turn) {
  return static_cast<std::size_t>(from) * 3 + static_cast<std::size_t>(turn);
}

inline bool is_ew(Side s) { return s == Side::East || s == Side::West; }

inline std::size_t movement_group(Side from, Turn turn) {
  const std::size_t axis = is_ew(from) ? 0 : 2;
  return axis + (turn == Turn::Left ? 1 : 0);
}

/// Whether a gated (left/straight) lane is served by `phase`.
inline bool phase_serves(Phase phase, Side from, Turn turn) {
  if (turn == Turn::Right) return true;
  switch (phase) {
    case Phase::EwStraight: return is_ew(from) && turn == Turn::Straight;
    case Phase::EwLeft: return is_ew(from) && turn == Turn::Left;
    case Phase::NsStraight: return !is_ew(from) && turn == Turn::Straight;
    case Phase::NsLeft: return !is_ew(from) && turn == Turn::Left;
  }
  return false;
}

struct TurnRatios {
  double left = 0.1;
  double straight = 0.6;
  double right = 0.3;
};

struct EntryPoint {
  std::size_t intersection = 0;
  Side side = Side::North;
};

struct ScheduledVehicle {
  std::int64_t spawn_time = 0;
  std::vector<std::size_t> intersections;
  Side entry = Side::West;
  Side exit = Side::East;
};

struct Scenario {
  std::size_t rows = 3;
  std::size_t cols = 3;
  double block_length = 300.0;      // meters between adjacent intersections
  std::size_t lanes_per_movement = 1;
  double arrival_rate = 0.05;       // vehicles per second per entry approach
  std::vector<std::pair<EntryPoint, double>> entry_rates;  // per-entry overrides
  TurnRatios turns;
  double saturation_flow = 1.0;     // vehicles per second per lane on green
  std::int64_t link_delay = 20;     // seconds between intersections
  std::int64_t decision_interval = 10;
  std::int64_t yellow_duration = 3;
  std::int64_t episode_length = 3600;
  std::optional<double> reward_weight;  // w_l; -1/decision_interval when unset
  std::uint64_t seed = 1;
  std::vector<ScheduledVehicle> vehicles;  // replayable demand in addition to Poisson arrivals

  std::size_t intersection_count() const { return rows * cols; }

  double effective_reward_weight() const {
    return reward_weight ? *reward_weight : -1.0 / static_cast<double>(decision_interval);
  }

  /// Boundary approaches in a fixed order: north edge, east edge, south edge, west edge.
  std::vector<EntryPoint> entry_points() const {
    std::vector<EntryPoint> out;
    for (std::size_t c = 0; c < cols; ++c) out.push_back({c, Side::North});
    for (std::size_t r = 0; r < rows; ++r) out.push_back({r * cols + cols - 1, Side::East});
    for (std::size_t c = 0; c < cols; ++c) out.push_back({(rows - 1) * cols + c, Side::South});
    for (std::size_t r = 0; r < rows; ++r) out.push_back({r * cols, Side::West});
    return out;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("scenario: " + m); };
    if (rows == 0 || cols == 0) fail("grid must have at least one intersection");
    if (!(block_length > 0.0)) fail("block_length must be positive");
    if (lanes_per_movement == 0) fail("lanes_per_movement must be >= 1");
    if (!(arrival_rate >= 0.0)) fail("arrival_rate must be >= 0");
    for (const auto& [e, r] : entry_rates) {
      if (!(r >= 0.0)) fail("entry rates must be >= 0");
      if (e.intersection >= intersection_count()) fail("entry rate names an unknown intersection");
    }
    if (turns.left < 0 || turns.straight < 0 || turns.right < 0 ||
        std::abs(turns.left + turns.straight + turns.right - 1.0) > 1e-9)
      fail("turn ratios must be non-negative and sum to 1");
    if (!(saturation_flow > 0.0)) fail("saturation_flow must be positive");
    if (link_delay < 1) fail("link_delay must be >= 1 second");
    if (decision_interval < 1) fail("decision_interval must be >= 1 second");
    if (yellow_duration < 0) fail("yellow_duration must be >= 0");
    if (episode_length < decision_interval) fail("episode_length must cover one decision interval");
    if (reward_weight && !std::isfinite(*reward_weight)) fail("reward_weight must be finite");
  }
};

struct SignalState {
  Phase phase = Phase::EwStraight;
  std::int64_t yellow_remaining = 0;
  Phase successor = Phase::EwStraight;

  bool in_yellow() const noexcept { return yellow_remaining > 0; }

  friend bool operator==(const SignalState&, const SignalState&) = default;
};

/// N (vehicle count), W (accumulated waiting) and L (queue length) per movement
/// group, each summed over the ticks of the current window.
struct Observation {
  std::array<double, kMovementGroups> vehicles{};
  std::array<double, kMovementGroups> waiting{};
  std::array<double, kMovementGroups> queue{};

  /// [N_0..N_3, W_0..W_3, L_0..L_3]
  std::vector<double> flatten() const {
    std::vector<double> v;
    v.reserve(kObservationDim);
    v.insert(v.end(), vehicles.begin(), vehicles.end());
    v.insert(v.end(), waiting.begin(), waiting.end());
    v.insert(v.end(), queue.begin(), queue.end());
    return v;
  }

  double queue_total() const { return queue[0] + queue[1] + queue[2] + queue[3]; }
  double waiting_total() const { return waiting[0] + waiting[1] + waiting[2] + waiting[3]; }

  friend bool operator==(const Observation&, const Observation&) = default;
};

struct Hop {
  std::size_t intersection = 0;
  Side from = Side::North;
  Turn turn = Turn::Straight;
};

enum class VehicleState : std::uint8_t { Queued, InTransit, Exited };

struct Vehicle {
  std::size_t id = 0;
  std::int64_t spawn_time = 0;
  std::vector<Hop> route;
  std::size_t hop = 0;  // index of the hop the vehicle is at or heading to
  std::int64_t transit_remaining = 0;
  std::int64_t waiting = 0;
  std::int64_t exit_time = -1;
  VehicleState state = VehicleState::Queued;
};

struct Discharge {
  std::size_t intersection;
  std::size_t lane;
  std::size_t vehicle;
};

class TrafficWorld {
 public:
  TrafficWorld(Scenario scenario, std::uint64_t demand_seed)
      : scenario_((scenario.validate(), std::move(scenario))),
        rng_(demand_seed),
        entries_(scenario_.entry_points()),
        entry_rate_(entries_.size(), scenario_.arrival_rate),
        nodes_(scenario_.intersection_count()) {
    for (const auto& [e, rate] : scenario_.entry_rates) {
      bool found = false;
      for (std::size_t k = 0; k < entries_.size(); ++k) {
        if (entries_[k].intersection == e.intersection && entries_[k].side == e.side) {
          entry_rate_[k] = rate;
          found = true;
        }
      }
      if (!found) throw std::invalid_argument("scenario: entry rate is not on the grid boundary");
    }
    schedule_ = scenario_.vehicles;
    std::stable_sort(schedule_.begin(), schedule_.end(),
                     [](const auto& a, const auto& b) { return a.spawn_time < b.spawn_time; });
    for (const auto& sv : schedule_) scheduled_routes_.push_back(route_from_path(sv));
  }

  const Scenario& scenario() const noexcept { return scenario_; }
  std::size_t intersection_count() const noexcept { return nodes_.size(); }
  std::int64_t time() const noexcept { return time_; }

  std::vector<AgentPosition> positions() const {
    std::vector<AgentPosition> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      out.push_back({static_cast<double>(i % scenario_.cols) * scenario_.block_length,
                     static_cast<double>(i / scenario_.cols) * scenario_.block_length});
    }
    return out;
  }

  /// Adjacent intersection on side `toward`; nullopt at the boundary.
  std::optional<std::size_t> neighbor(std::size_t i, Side toward) const {
    const std::size_t r = i / scenario_.cols;
    const std::size_t c = i % scenario_.cols;
    switch (toward) {
      case Side::North: return r == 0 ? std::nullopt : std::optional(i - scenario_.cols);
      case Side::South: return r + 1 == scenario_.rows ? std::nullopt : std::optional(i + scenario_.cols);
      case Side::East: return c + 1 == scenario_.cols ? std::nullopt : std::optional(i + 1);
      case Side::West: return c == 0 ? std::nullopt : std::optional(i - 1);
    }
    return std::nullopt;
  }

  /// Side a vehicle arriving from `from` leaves through after `turn`.
  static Side exit_side(Side from, Turn turn) {
    // Heading is opposite of the arrival side; clockwise order N, E, S, W.
    const int heading = (static_cast<int>(from) + 2) % 4;
    int out = heading;
    if (turn == Turn::Right) out = (heading + 1) % 4;
    if (turn == Turn::Left) out = (heading + 3) % 4;
    return static_cast<Side>(out);
  }

  static Side opposite(Side s) { return static_cast<Side>((static_cast<int>(s) + 2) % 4); }

  /// Builds a route by following `turns` from (start, from). Throws unless the
  /// final turn leaves the grid.
  std::vector<Hop> route_from_turns(std::size_t start, Side from, std::span<const Turn> turns) const {
    std::vector<Hop> route;
    std::size_t at = start;
    Side side = from;
    for (std::size_t k = 0; k < turns.size(); ++k) {
      route.push_back({at, side, turns[k]});
      const Side out = exit_side(side, turns[k]);
      const auto next = neighbor(at, out);
      if (!next) {
        if (k + 1 != turns.size()) throw std::invalid_argument("route leaves the grid early");
        return route;
      }
      at = *next;
      side = opposite(out);
    }
    throw std::invalid_argument("route does not end at the grid boundary");
  }

  /// Route through an explicit intersection sequence, entering from `entry` and leaving via `exit`.
  std::vector<Hop> route_from_path(const ScheduledVehicle& sv) const {
    if (sv.intersections.empty()) throw std::invalid_argument("scheduled vehicle has an empty route");
    std::vector<Hop> route;
    Side from = sv.entry;
    for (std::size_t k = 0; k < sv.intersections.size(); ++k) {
      const std::size_t at = sv.intersections[k];
      if (at >= nodes_.size()) throw std::invalid_argument("scheduled route names an unknown intersection");
      Side out = sv.exit;
      if (k + 1 < sv.intersections.size()) {
        bool adjacent = false;
        for (Side s : {Side::North, Side::East, Side::South, Side::West}) {
          if (neighbor(at, s) == sv.intersections[k + 1]) {
            out = s;
            adjacent = true;
          }
        }
        if (!adjacent) throw std::invalid_argument("scheduled route is not connected in the grid");
      } else if (neighbor(at, out)) {
        throw std::invalid_argument("scheduled route must end at the grid boundary");
      }
      route.push_back({at, from, turn_between(from, out)});
      from = opposite(out);
    }
    if (route.front().intersection != sv.intersections.front() || neighbor(route.front().intersection, sv.entry))
      throw std::invalid_argument("scheduled route must enter from the grid boundary");
    return route;
  }

  static Turn turn_between(Side from, Side out) {
    for (Turn t : {Turn::Left, Turn::Straight, Turn::Right})
      if (exit_side(from, t) == out) return t;
    throw std::invalid_argument("U-turns are not supported");
  }

  /// Inserts a vehicle at the tail of its first queue; returns its id.
  std::size_t add_vehicle(std::vector<Hop> route) {
    if (route.empty()) throw std::invalid_argument("add_vehicle: empty route");
    Vehicle v;
    v.id = vehicles_.size();
    v.spawn_time = time_;
    v.route = std::move(route);
    const Hop& h = v.route.front();
    nodes_[h.intersection].lanes[lane_index(h.from, h.turn)].queue.push_back(v.id);
    vehicles_.push_back(std::move(v));
    return vehicles_.back().id;
  }

  /// Requests a phase. Same phase: no change. Different phase: yellow first.
  /// During yellow the request only replaces the pending successor.
  void apply_action(std::size_t i, Phase target) {
    SignalState& s = nodes_.at(i).signal;
    if (s.in_yellow()) {
      s.successor = target;
      return;
    }
    if (target == s.phase) return;
    if (scenario_.yellow_duration == 0) {
      s.phase = target;
      s.successor = target;
      return;
    }
    s.yellow_remaining = scenario_.yellow_duration;
    s.successor = target;
  }

  const SignalState& signal(std::size_t i) const { return nodes_.at(i).signal; }

  /// Blocks every lane, right turns included. Test hook.
  void set_all_red(bool on) noexcept { all_red_ = on; }

  bool lane_green(std::size_t i, Side from, Turn turn) const {
    if (all_red_) return false;
    if (turn == Turn::Right) return true;
    const SignalState& s = nodes_[i].signal;
    return !s.in_yellow() && phase_serves(s.phase, from, turn);
  }

  const std::deque<std::size_t>& lane_queue(std::size_t i, Side from, Turn turn) const {
    return nodes_.at(i).lanes[lane_index(from, turn)].queue;
  }

  double queue_length(std::size_t i) const {
    double q = 0;
    for (const auto& lane : nodes_.at(i).lanes) q += static_cast<double>(lane.queue.size());
    return q;
  }

  /// Instantaneous queue per movement group.
  std::array<double, kMovementGroups> group_queues(std::size_t i) const {
    std::array<double, kMovementGroups> out{};
    for (Side s : {Side::North, Side::East, Side::South, Side::West})
      for (Turn t : {Turn::Left, Turn::Straight, Turn::Right})
        out[movement_group(s, t)] += static_cast<double>(lane_queue(i, s, t).size());
    return out;
  }

  /// Queued vehicles on gated (left/straight) lanes that `serving` leaves red.
  double red_queue(std::size_t i, Phase serving) const {
    double q = 0;
    for (Side side : {Side::North, Side::East, Side::South, Side::West})
      for (Turn t : {Turn::Left, Turn::Straight})
        if (!phase_serves(serving, side, t)) q += static_cast<double>(lane_queue(i, side, t).size());
    return q;
  }

  /// Advances one second.
  void tick() {
    last_discharges_.clear();

    // Link arrivals.
    std::size_t keep = 0;
    for (std::size_t k = 0; k < transit_.size(); ++k) {
      Vehicle& v = vehicles_[transit_[k]];
      if (--v.transit_remaining == 0) {
        v.state = VehicleState::Queued;
        const Hop& h = v.route[v.hop];
        nodes_[h.intersection].lanes[lane_index(h.from, h.turn)].queue.push_back(v.id);
      } else {
        transit_[keep++] = transit_[k];
      }
    }
    transit_.resize(keep);

    spawn();

    // Discharge.
    const double per_tick = scenario_.saturation_flow * static_cast<double>(scenario_.lanes_per_movement);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      for (Side s : {Side::North, Side::East, Side::South, Side::West}) {
        for (Turn t : {Turn::Left, Turn::Straight, Turn::Right}) {
          const std::size_t li = lane_index(s, t);
          Lane& lane = nodes_[i].lanes[li];
          if (!lane_green(i, s, t) || lane.queue.empty()) {
            lane.credit = 0.0;
            continue;
          }
          lane.credit += per_tick;
          while (lane.credit >= 1.0 && !lane.queue.empty()) {
            lane.credit -= 1.0;
            const std::size_t id = lane.queue.front();
            lane.queue.pop_front();
            last_discharges_.push_back({i, li, id});
            Vehicle& v = vehicles_[id];
            ++v.hop;
            if (v.hop == v.route.size()) {
              v.state = VehicleState::Exited;
              v.exit_time = time_ + 1;
              ++exited_;
              travel_time_sum_ += static_cast<double>(v.exit_time - v.spawn_time);
            } else {
              v.state = VehicleState::InTransit;
              v.transit_remaining = scenario_.link_delay;
              transit_.push_back(id);
            }
          }
          if (lane.queue.empty()) lane.credit = 0.0;
        }
      }
    }

    // Waiting and per-tick observation sums.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& node = nodes_[i];
      for (Side s : {Side::North, Side::East, Side::South, Side::West}) {
        for (Turn t : {Turn::Left, Turn::Straight, Turn::Right}) {
          const std::size_t g = movement_group(s, t);
          const auto& q = node.lanes[lane_index(s, t)].queue;
          for (std::size_t id : q) {
            Vehicle& v = vehicles_[id];
            ++v.waiting;
            ++total_waiting_;
            node.window.waiting[g] += static_cast<double>(v.waiting);
          }
          node.window.queue[g] += static_cast<double>(q.size());
          node.window.vehicles[g] += static_cast<double>(q.size());
        }
      }
    }
    for (std::size_t id : transit_) {
      const Vehicle& v = vehicles_[id];
      const Hop& h = v.route[v.hop];
      nodes_[h.intersection].window.vehicles[movement_group(h.from, h.turn)] += 1.0;
    }

    for (Node& node : nodes_) {
      SignalState& s = node.signal;
      if (s.in_yellow() && --s.yellow_remaining == 0) s.phase = s.successor;
    }

    ++time_;
    ++window_ticks_;
  }

  void run(std::int64_t ticks) {
    for (std::int64_t k = 0; k < ticks; ++k) tick();
  }

  /// Sums since the last begin_window().
  const Observation& observe(std::size_t i) const { return nodes_.at(i).window; }

  /// w_l times the window's queue-length sum.
  double reward(std::size_t i) const {
    return scenario_.effective_reward_weight() * nodes_.at(i).window.queue_total();
  }

  std::int64_t window_ticks() const noexcept { return window_ticks_; }

  void begin_window() {
    for (Node& n : nodes_) n.window = Observation{};
    window_ticks_ = 0;
  }

  std::span<const Vehicle> vehicles() const noexcept { return vehicles_; }
  std::span<const Discharge> last_discharges() const noexcept { return last_discharges_; }
  std::size_t spawned() const noexcept { return vehicles_.size(); }
  std::size_t exited() const noexcept { return exited_; }
  std::size_t in_transit() const noexcept { return transit_.size(); }
  std::size_t queued() const {
    std::size_t n = 0;
    for (const Node& node : nodes_)
      for (const Lane& l : node.lanes) n += l.queue.size();
    return n;
  }
  std::size_t in_network() const { return queued() + in_transit(); }

  /// Vehicle-seconds spent queued, all vehicles.
  double total_waiting() const noexcept { return static_cast<double>(total_waiting_); }
  double mean_travel_time() const { return exited_ ? travel_time_sum_ / static_cast<double>(exited_) : 0.0; }
  double mean_waiting_time() const {
    return vehicles_.empty() ? 0.0 : total_waiting() / static_cast<double>(vehicles_.size());
  }

 private:
  struct Lane {
    std::deque<std::size_t> queue;
    double credit = 0.0;
  };

  struct Node {
    std::array<Lane, kLanesPerIntersection> lanes;
    SignalState signal;
    Observation window;
  };

  void spawn() {
    while (next_scheduled_ < schedule_.size() && schedule_[next_scheduled_].spawn_time <= time_) {
      if (schedule_[next_scheduled_].spawn_time == time_) add_vehicle(scheduled_routes_[next_scheduled_]);
      ++next_scheduled_;
    }
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      const unsigned arrivals = poisson(rng_, entry_rate_[k]);
      for (unsigned a = 0; a < arrivals; ++a) add_vehicle(random_route(entries_[k]));
    }
  }

  std::vector<Hop> random_route(const EntryPoint& e) {
    const std::size_t max_turning_hops = scenario_.rows + scenario_.cols + 2;
    std::vector<Hop> route;
    std::size_t at = e.intersection;
    Side from = e.side;
    for (;;) {
      Turn t = Turn::Straight;
      const double u = uniform01(rng_);
      if (route.size() < max_turning_hops) {
        if (u < scenario_.turns.left) t = Turn::Left;
        else if (u < scenario_.turns.left + scenario_.turns.straight) t = Turn::Straight;
        else t = Turn::Right;
      }
      route.push_back({at, from, t});
      const Side out = exit_side(from, t);
      const auto next = neighbor(at, out);
      if (!next) return route;
      at = *next;
      from = opposite(out);
    }
  }

  Scenario scenario_;
  Rng rng_;
  std::vector<EntryPoint> entries_;
  std::vector<double> entry_rate_;
  std::vector<Node> nodes_;
  std::vector<Vehicle> vehicles_;
  std::vector<std::size_t> transit_;
  std::vector<Discharge> last_discharges_;
  std::vector<ScheduledVehicle> schedule_;
  std::vector<std::vector<Hop>> scheduled_routes_;
  std::size_t next_scheduled_ = 0;
  std::size_t exited_ = 0;
  std::int64_t total_waiting_ = 0;
  double travel_time_sum_ = 0.0;
  std::int64_t time_ = 0;
  std::int64_t window_ticks_ = 0;
  bool all_red_ = false;
};

}  // namespace mabrl
