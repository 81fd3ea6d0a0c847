#pragma once

// Offline datasets: scripted behaviour controllers at several quality tiers,
// JSON-lines persistence, dataset-level aleatoric uncertainty (sigma_D) and
// the FIFO replay buffer used for offline training and online fine-tuning.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psw/envs.hpp"
#include "psw/error.hpp"
#include "psw/rng.hpp"

namespace psw {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;  // terminal: no bootstrapping past this transition
  int trajectory_id = 0;

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Trajectory {
  int id = 0;
  std::vector<Transition> steps;

  double undiscounted_return() const {
    double r = 0.0;
    for (const auto& t : steps) r += t.reward;
    return r;
  }
  std::size_t length() const { return steps.size(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

enum class Tier { Random, Medium, Expert, MediumReplay, Partial };

inline const char* to_string(Tier t) {
  switch (t) {
    case Tier::Random: return "random";
    case Tier::Medium: return "medium";
    case Tier::Expert: return "expert";
    case Tier::MediumReplay: return "medium-replay";
    case Tier::Partial: return "partial";
  }
  return "?";
}

inline Tier parse_tier(std::string_view s) {
  if (s == "random") return Tier::Random;
  if (s == "medium") return Tier::Medium;
  if (s == "expert") return Tier::Expert;
  if (s == "medium-replay") return Tier::MediumReplay;
  if (s == "partial") return Tier::Partial;
  throw ConfigError("unknown dataset tier '" + std::string(s) +
                    "' (expected random|medium|expert|medium-replay|partial)");
}

inline constexpr int kGeneratorVersion = 1;

struct DatasetMeta {
  std::string env_id;
  std::string tier;
  std::uint64_t seed = 0;
  int generator_version = kGeneratorVersion;
  std::size_t requested_transitions = 0;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  DatasetMeta meta;

  std::size_t transition_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.steps.size();
    return n;
  }

  std::vector<double> returns() const {
    std::vector<double> r;
    r.reserve(trajectories.size());
    for (const auto& t : trajectories) r.push_back(t.undiscounted_return());
    return r;
  }

  std::vector<double> lengths() const {
    std::vector<double> r;
    r.reserve(trajectories.size());
    for (const auto& t : trajectories) r.push_back(static_cast<double>(t.length()));
    return r;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws ConfigError if next_state/state linkage or the done-only-last rule
/// is violated anywhere in the dataset.
inline void check_chain(const Dataset& d) {
  for (const auto& tr : d.trajectories) {
    if (tr.steps.empty()) throw ConfigError("dataset: trajectory " + std::to_string(tr.id) + " is empty");
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const auto& s = tr.steps[t];
      if (!std::isfinite(s.reward)) throw ConfigError("dataset: non-finite reward");
      if (t + 1 < tr.steps.size()) {
        if (s.done) throw ConfigError("dataset: done flag before the end of trajectory " + std::to_string(tr.id));
        if (s.next_state != tr.steps[t + 1].state)
          throw ConfigError("dataset: broken next_state chain in trajectory " + std::to_string(tr.id));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Scripted controllers

namespace controllers {

// PD gains shared by every tier; tuned for the dense arena's time constant.
inline constexpr double kKp = 4.0;
inline constexpr double kKd = 1.5;

inline Vec2 pd_toward(const EnvState& s, const Vec2& target, double kp = kKp, double kd = kKd) {
  return {kp * (target[0] - s.position[0]) - kd * s.velocity[0],
          kp * (target[1] - s.position[1]) - kd * s.velocity[1]};
}

/// Sub-goal for the U-maze: along the lower corridor, up the right-hand
/// passage, then left along the upper corridor to the goal.
inline Vec2 maze_waypoint(const EnvSpec& spec, const EnvState& s) {
  const auto& w = spec.walls.front();
  const double pass_x = 0.5 * (w.hi[0] + spec.arena_hi[0]);
  const double lower_y = 0.5 * (spec.arena_lo[1] + w.lo[1]);
  const double upper_y = 0.5 * (w.hi[1] + spec.arena_hi[1]);
  const auto& p = s.position;
  if (p[1] < w.lo[1] && p[0] < w.hi[0]) return {pass_x + 0.3, lower_y};
  if (p[1] < w.hi[1] + 0.3) return {pass_x, upper_y + 0.3};
  return spec.goal;
}

inline Vec2 expert_mean(const EnvSpec& spec, const EnvState& s) {
  const Vec2 target = spec.walls.empty() ? spec.goal : maze_waypoint(spec, s);
  return pd_toward(s, target);
}

struct NoisyExpert {
  double noise_std = 0.05;
  double random_prob = 0.0;

  Vec2 operator()(const EnvSpec& spec, const EnvState& s, Rng& rng) const {
    Vec2 a{};
    if (random_prob > 0.0 && uniform(rng, 0.0, 1.0) < random_prob) {
      for (auto& x : a) x = uniform(rng, -spec.action_bound, spec.action_bound);
      return a;
    }
    a = expert_mean(spec, s);
    for (auto& x : a) x = std::clamp(x + noise_std * standard_normal(rng), -spec.action_bound, spec.action_bound);
    return a;
  }
};

inline Vec2 random_action(const EnvSpec& spec, Rng& rng) {
  return {uniform(rng, -spec.action_bound, spec.action_bound), uniform(rng, -spec.action_bound, spec.action_bound)};
}

inline constexpr NoisyExpert kExpert{0.05, 0.0};
inline constexpr NoisyExpert kMedium{0.4, 0.2};

}  // namespace controllers

namespace detail {

template <class Policy>
Trajectory rollout(const PointMassEnv& env, std::uint64_t reset_seed, int id, Rng& rng, Policy&& policy,
                   int max_steps = -1) {
  Trajectory tr;
  tr.id = id;
  EnvState s = env.reset(reset_seed);
  const int limit = max_steps > 0 ? std::min(max_steps, env.spec().horizon) : env.spec().horizon;
  for (int t = 0; t < limit; ++t) {
    const Vec2 a = policy(s, rng);
    const StepResult r = env.step(s, a);
    Transition tx;
    tx.state = observe(s);
    tx.action = {a[0], a[1]};
    tx.reward = r.reward;
    tx.next_state = observe(r.state);
    tx.done = r.terminal;
    tx.trajectory_id = id;
    tr.steps.push_back(std::move(tx));
    s = r.state;
    if (r.done) break;
  }
  return tr;
}

// Maze segments used by the partial tier: each trajectory starts somewhere
// along the route and covers only a stretch of it.
struct Segment {
  Vec2 start;
  double start_noise;
  int steps;
  bool toward_start;  // walk the route backwards (away from the goal)
};

inline Trajectory partial_rollout(const PointMassEnv& env, const Segment& seg, std::uint64_t seed, int id,
                                  Rng& rng) {
  EnvSpec shifted = env.spec();
  shifted.start = seg.start;
  shifted.start_noise = seg.start_noise;
  const PointMassEnv local(shifted);
  const auto& spec = env.spec();
  auto policy = [&](const EnvState& s, Rng& r) {
    Vec2 a{};
    if (seg.toward_start) {
      a = controllers::pd_toward(s, spec.start);
    } else {
      a = controllers::expert_mean(spec, s);
    }
    for (auto& x : a) x = std::clamp(x + 0.3 * standard_normal(r), -spec.action_bound, spec.action_bound);
    return a;
  };
  return rollout(local, seed, id, rng, policy, seg.steps);
}

}  // namespace detail

/// Rolls scripted-controller episodes until at least `n_transitions` have
/// been collected. Only whole trajectories are kept.
inline Dataset generate_dataset(std::string_view env_id, Tier tier, std::size_t n_transitions, std::uint64_t seed) {
  const PointMassEnv env = make_env(env_id);
  const auto& spec = env.spec();
  if (n_transitions < static_cast<std::size_t>(spec.horizon))
    throw ConfigError("generate_dataset: n_transitions must cover at least one horizon (" +
                      std::to_string(spec.horizon) + ")");
  if (tier == Tier::Partial && spec.walls.empty())
    throw ConfigError("generate_dataset: tier 'partial' is only defined for the maze");

  Dataset d;
  d.meta = DatasetMeta{spec.id, to_string(tier), seed, kGeneratorVersion, n_transitions};
  Rng rng = make_rng(seed, stream::kData);
  std::size_t total = 0;
  int id = 0;
  while (total < n_transitions) {
    const std::uint64_t reset_seed = mix_seed(seed, 1000 + static_cast<std::uint64_t>(id));
    Trajectory tr;
    switch (tier) {
      case Tier::Random:
        tr = detail::rollout(env, reset_seed, id, rng,
                             [&](const EnvState&, Rng& r) { return controllers::random_action(spec, r); });
        break;
      case Tier::Expert:
        tr = detail::rollout(env, reset_seed, id, rng,
                             [&](const EnvState& s, Rng& r) { return controllers::kExpert(spec, s, r); });
        break;
      case Tier::Medium:
        tr = detail::rollout(env, reset_seed, id, rng,
                             [&](const EnvState& s, Rng& r) { return controllers::kMedium(spec, s, r); });
        break;
      case Tier::MediumReplay: {
        // Emulates the replay buffer of a policy under training: exploration
        // noise anneals linearly from 1.0 to 0.4 over the collection.
        // The position gain ramps up alongside, so early trajectories come
        // from a sluggish controller rather than a noisy copy of the expert.
        const double progress = static_cast<double>(total) / static_cast<double>(n_transitions);
        const double noise = 1.0 - 0.6 * progress;
        const double gain = 0.05 + 0.95 * progress;
        tr = detail::rollout(env, reset_seed, id, rng, [&](const EnvState& s, Rng& r) {
          const Vec2 target = spec.walls.empty() ? spec.goal : controllers::maze_waypoint(spec, s);
          Vec2 a = controllers::pd_toward(s, target, controllers::kKp * gain, controllers::kKd);
          for (auto& x : a) x = std::clamp(x + noise * standard_normal(r), -spec.action_bound, spec.action_bound);
          return a;
        });
        break;
      }
      case Tier::Partial: {
        const auto& w = spec.walls.front();
        const double pass_x = 0.5 * (w.hi[0] + spec.arena_hi[0]);
        const double lower_y = 0.5 * (spec.arena_lo[1] + w.lo[1]);
        const double upper_y = 0.5 * (w.hi[1] + spec.arena_hi[1]);
        static constexpr int kKinds = 3;
        switch (id % kKinds) {
          case 0:  // start region, drifting back and forth along the lower corridor
            tr = detail::partial_rollout(env, {{1.6, lower_y}, 1.2, 60, (id / kKinds) % 2 == 1}, reset_seed, id,
                                         rng);
            break;
          case 1:  // the right-hand passage
            tr = detail::partial_rollout(env, {{pass_x, lower_y + 0.6}, 0.5, 60, false}, reset_seed, id, rng);
            break;
          default:  // upper corridor into the goal
            tr = detail::partial_rollout(env, {{pass_x - 0.4, upper_y}, 0.5, 90, false}, reset_seed, id, rng);
            break;
        }
        break;
      }
    }
    total += tr.steps.size();
    d.trajectories.push_back(std::move(tr));
    ++id;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Aleatoric uncertainty

namespace detail {
inline double population_std(std::span<const double> xs) {
  // The rounded mean of identical values can miss them by an ulp.
  if (std::adjacent_find(xs.begin(), xs.end(), std::not_equal_to<>()) == xs.end()) return 0.0;
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / n);
}
}  // namespace detail

/// Population std of trajectory returns divided by R_max, the largest
/// absolute return. An all-zero return set has sigma_D = 0.
inline double sigma_d_from_returns(std::span<const double> returns) {
  if (returns.size() < 2) throw ConfigError("sigma_d: need at least two trajectories");
  double r_max = 0.0;
  for (double r : returns) r_max = std::max(r_max, std::abs(r));
  if (r_max == 0.0) return 0.0;
  return detail::population_std(returns) / r_max;
}

inline double sigma_d_from_lengths(std::span<const double> lengths, int horizon) {
  if (lengths.size() < 2) throw ConfigError("sigma_d: need at least two trajectories");
  if (horizon < 1) throw ConfigError("sigma_d: horizon must be positive");
  return detail::population_std(lengths) / static_cast<double>(horizon);
}

inline double sigma_d_returns(const Dataset& d) { return sigma_d_from_returns(d.returns()); }

inline double sigma_d_lengths(const Dataset& d, int horizon) { return sigma_d_from_lengths(d.lengths(), horizon); }

enum class SigmaMeasure { Returns, Lengths };

inline const char* to_string(SigmaMeasure m) { return m == SigmaMeasure::Returns ? "returns" : "lengths"; }

inline SigmaMeasure parse_measure(std::string_view s) {
  if (s == "returns") return SigmaMeasure::Returns;
  if (s == "lengths") return SigmaMeasure::Lengths;
  throw ConfigError("unknown sigma_D measure '" + std::string(s) + "' (expected returns|lengths)");
}

inline double sigma_d(const Dataset& d, SigmaMeasure m, int horizon) {
  return m == SigmaMeasure::Returns ? sigma_d_returns(d) : sigma_d_lengths(d, horizon);
}

// ---------------------------------------------------------------------------
// Replay buffer

/// Struct-of-arrays minibatch; column j is sample j.
struct Batch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;
  Eigen::VectorXd dones;  // 1.0 for terminal transitions

  Eigen::Index size() const { return states.cols(); }

  Transition transition(Eigen::Index j) const {
    Transition t;
    t.state.assign(states.col(j).data(), states.col(j).data() + states.rows());
    t.action.assign(actions.col(j).data(), actions.col(j).data() + actions.rows());
    t.reward = rewards(j);
    t.next_state.assign(next_states.col(j).data(), next_states.col(j).data() + next_states.rows());
    t.done = dones(j) != 0.0;
    return t;
  }
};

inline Batch make_batch(std::span<const Transition> ts) {
  if (ts.empty()) throw ConfigError("make_batch: empty transition list");
  const auto sd = static_cast<Eigen::Index>(ts.front().state.size());
  const auto ad = static_cast<Eigen::Index>(ts.front().action.size());
  const auto n = static_cast<Eigen::Index>(ts.size());
  Batch b{Eigen::MatrixXd(sd, n), Eigen::MatrixXd(ad, n), Eigen::VectorXd(n), Eigen::MatrixXd(sd, n),
          Eigen::VectorXd(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& t = ts[static_cast<std::size_t>(j)];
    if (static_cast<Eigen::Index>(t.state.size()) != sd || static_cast<Eigen::Index>(t.action.size()) != ad ||
        static_cast<Eigen::Index>(t.next_state.size()) != sd)
      throw ConfigError("make_batch: inconsistent transition dimensions");
    b.states.col(j) = Eigen::Map<const Eigen::VectorXd>(t.state.data(), sd);
    b.actions.col(j) = Eigen::Map<const Eigen::VectorXd>(t.action.data(), ad);
    b.rewards(j) = t.reward;
    b.next_states.col(j) = Eigen::Map<const Eigen::VectorXd>(t.next_state.data(), sd);
    b.dones(j) = t.done ? 1.0 : 0.0;
  }
  return b;
}

/// Fixed-capacity FIFO store. Once full, each insert overwrites the oldest
/// slot, starting from index 0.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int state_dim, int action_dim)
      : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
    if (capacity == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
    states_.resize(capacity * state_dim);
    actions_.resize(capacity * action_dim);
    rewards_.resize(capacity);
    next_states_.resize(capacity * state_dim);
    dones_.resize(capacity);
    offline_.resize(capacity);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return count_; }
  std::size_t cursor() const { return cursor_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  void insert(const Transition& t, bool offline = false) {
    if (static_cast<int>(t.state.size()) != state_dim_ || static_cast<int>(t.next_state.size()) != state_dim_ ||
        static_cast<int>(t.action.size()) != action_dim_)
      throw ConfigError("ReplayBuffer: transition dimensions do not match the buffer");
    const std::size_t i = cursor_;
    std::copy(t.state.begin(), t.state.end(), states_.begin() + static_cast<std::ptrdiff_t>(i * state_dim_));
    std::copy(t.action.begin(), t.action.end(), actions_.begin() + static_cast<std::ptrdiff_t>(i * action_dim_));
    std::copy(t.next_state.begin(), t.next_state.end(),
              next_states_.begin() + static_cast<std::ptrdiff_t>(i * state_dim_));
    rewards_[i] = t.reward;
    dones_[i] = t.done ? 1 : 0;
    if (count_ == capacity_ && offline_[i]) --offline_count_;
    offline_[i] = offline ? 1 : 0;
    if (offline) ++offline_count_;
    cursor_ = (cursor_ + 1) % capacity_;
    count_ = std::min(count_ + 1, capacity_);
  }

  Transition at(std::size_t i) const {
    if (i >= count_) throw ConfigError("ReplayBuffer: index out of range");
    Transition t;
    t.state.assign(states_.begin() + static_cast<std::ptrdiff_t>(i * state_dim_),
                   states_.begin() + static_cast<std::ptrdiff_t>((i + 1) * state_dim_));
    t.action.assign(actions_.begin() + static_cast<std::ptrdiff_t>(i * action_dim_),
                    actions_.begin() + static_cast<std::ptrdiff_t>((i + 1) * action_dim_));
    t.reward = rewards_[i];
    t.next_state.assign(next_states_.begin() + static_cast<std::ptrdiff_t>(i * state_dim_),
                        next_states_.begin() + static_cast<std::ptrdiff_t>((i + 1) * state_dim_));
    t.done = dones_[i] != 0;
    return t;
  }

  bool is_offline(std::size_t i) const { return i < count_ && offline_[i] != 0; }
  std::size_t offline_count() const { return offline_count_; }
  double offline_fraction() const {
    return count_ == 0 ? 0.0 : static_cast<double>(offline_count_) / static_cast<double>(count_);
  }

  /// Uniform with replacement over occupied slots.
  Batch sample(std::size_t batch_size, Rng& rng) const {
    if (count_ == 0) throw ConfigError("ReplayBuffer: cannot sample from an empty buffer");
    if (batch_size == 0) throw ConfigError("ReplayBuffer: batch size must be positive");
    const auto n = static_cast<Eigen::Index>(batch_size);
    Batch b{Eigen::MatrixXd(state_dim_, n), Eigen::MatrixXd(action_dim_, n), Eigen::VectorXd(n),
            Eigen::MatrixXd(state_dim_, n), Eigen::VectorXd(n)};
    std::uniform_int_distribution<std::size_t> pick(0, count_ - 1);
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::size_t i = pick(rng);
      b.states.col(j) = Eigen::Map<const Eigen::VectorXd>(&states_[i * state_dim_], state_dim_);
      b.actions.col(j) = Eigen::Map<const Eigen::VectorXd>(&actions_[i * action_dim_], action_dim_);
      b.rewards(j) = rewards_[i];
      b.next_states.col(j) = Eigen::Map<const Eigen::VectorXd>(&next_states_[i * state_dim_], state_dim_);
      b.dones(j) = dones_[i] ? 1.0 : 0.0;
    }
    return b;
  }

 private:
  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  std::vector<double> states_;
  std::vector<double> actions_;
  std::vector<double> rewards_;
  std::vector<double> next_states_;
  std::vector<std::uint8_t> dones_;
  std::vector<std::uint8_t> offline_;
  std::size_t cursor_ = 0;
  std::size_t count_ = 0;
  std::size_t offline_count_ = 0;
};

/// Capacity equals the dataset size, so online inserts replace offline
/// samples oldest-first and the cursor starts back at slot 0.
inline ReplayBuffer buffer_from_dataset(const Dataset& d) {
  const std::size_t n = d.transition_count();
  if (n == 0) throw ConfigError("buffer_from_dataset: empty dataset");
  const auto& first = d.trajectories.front().steps.front();
  ReplayBuffer buf(n, static_cast<int>(first.state.size()), static_cast<int>(first.action.size()));
  for (const auto& tr : d.trajectories)
    for (const auto& t : tr.steps) buf.insert(t, /*offline=*/true);
  return buf;
}

// ---------------------------------------------------------------------------
// JSON-lines persistence: one trajectory per line,
//   {"id":k,"states":[[...]],"actions":[[...]],"rewards":[...],"done_last":bool}
// where "states" holds T+1 entries (the final next_state closes the list).
// Metadata is written next to it as <path>.meta.json.

inline std::string dataset_meta_path(const std::string& path) { return path + ".meta.json"; }

inline nlohmann::json to_json(const DatasetMeta& m) {
  return {{"env_id", m.env_id},
          {"tier", m.tier},
          {"seed", m.seed},
          {"generator_version", m.generator_version},
          {"requested_transitions", m.requested_transitions}};
}

inline nlohmann::json trajectory_to_json(const Trajectory& tr) {
  nlohmann::json states = nlohmann::json::array();
  nlohmann::json actions = nlohmann::json::array();
  nlohmann::json rewards = nlohmann::json::array();
  for (const auto& t : tr.steps) {
    states.push_back(t.state);
    actions.push_back(t.action);
    rewards.push_back(t.reward);
  }
  states.push_back(tr.steps.back().next_state);
  return {{"id", tr.id},
          {"states", std::move(states)},
          {"actions", std::move(actions)},
          {"rewards", std::move(rewards)},
          {"done_last", tr.steps.back().done}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory tr;
  tr.id = j.at("id").get<int>();
  const auto states = j.at("states").get<std::vector<std::vector<double>>>();
  const auto actions = j.at("actions").get<std::vector<std::vector<double>>>();
  const auto rewards = j.at("rewards").get<std::vector<double>>();
  const bool done_last = j.at("done_last").get<bool>();
  if (actions.empty() || actions.size() != rewards.size() || states.size() != actions.size() + 1)
    throw ConfigError("dataset: trajectory " + std::to_string(tr.id) + " has inconsistent array lengths");
  for (std::size_t t = 0; t < actions.size(); ++t) {
    Transition x;
    x.state = states[t];
    x.action = actions[t];
    x.reward = rewards[t];
    x.next_state = states[t + 1];
    x.done = done_last && t + 1 == actions.size();
    x.trajectory_id = tr.id;
    tr.steps.push_back(std::move(x));
  }
  return tr;
}

inline void write_dataset(const std::string& path, const Dataset& d) {
  check_chain(d);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open dataset for writing: " + path);
    for (const auto& tr : d.trajectories) os << trajectory_to_json(tr).dump() << '\n';
    if (!os) throw IoError("write failed: " + path);
  }
  std::ofstream meta(dataset_meta_path(path), std::ios::trunc);
  if (!meta) throw IoError("cannot open dataset metadata for writing: " + dataset_meta_path(path));
  meta << to_json(d.meta).dump(2) << '\n';
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("missing dataset file: " + path);
  Dataset d;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      d.trajectories.push_back(trajectory_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (d.trajectories.empty()) throw IoError("dataset file has no trajectories: " + path);
  std::ifstream meta(dataset_meta_path(path));
  if (meta) {
    const auto j = nlohmann::json::parse(meta);
    d.meta.env_id = j.value("env_id", "");
    d.meta.tier = j.value("tier", "");
    d.meta.seed = j.value("seed", std::uint64_t{0});
    d.meta.generator_version = j.value("generator_version", kGeneratorVersion);
    d.meta.requested_transitions = j.value("requested_transitions", std::size_t{0});
  }
  check_chain(d);
  return d;
}

// ---------------------------------------------------------------------------

struct ReferenceReturns {
  double random_ref = 0.0;
  double expert_ref = 0.0;
};

/// Mean undiscounted return of the random and expert controllers over
/// `episodes` runs; this is where the registry's reference constants come from.
inline ReferenceReturns reference_returns(const EnvSpec& spec, int episodes = 100, std::uint64_t seed = 0) {
  EnvSpec unnormalized = spec;
  unnormalized.random_ref = 0.0;
  unnormalized.expert_ref = 1.0;
  const PointMassEnv env(unnormalized);
  ReferenceReturns out;
  Rng rng = make_rng(seed, stream::kData);
  for (int e = 0; e < episodes; ++e) {
    const auto reset_seed = mix_seed(seed, 1000 + static_cast<std::uint64_t>(e));
    out.random_ref += detail::rollout(env, reset_seed, e, rng, [&](const EnvState&, Rng& r) {
                        return controllers::random_action(spec, r);
                      }).undiscounted_return();
    out.expert_ref += detail::rollout(env, reset_seed, e, rng, [&](const EnvState& s, Rng& r) {
                        return controllers::kExpert(spec, s, r);
                      }).undiscounted_return();
  }
  out.random_ref /= episodes;
  out.expert_ref /= episodes;
  return out;
}

}  // namespace psw
