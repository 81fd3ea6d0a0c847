#pragma once

// Point-mass double-integrator environments: a dense goal-reaching arena and
// a sparse-reward U-shaped maze.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psw/error.hpp"
#include "psw/rng.hpp"

namespace psw {

using Vec2 = std::array<double, 2>;

enum class RewardKind { Dense, Sparse };

inline const char* to_string(RewardKind k) { return k == RewardKind::Dense ? "dense" : "sparse"; }

/// Axis-aligned solid block inside the arena.
struct Wall {
  Vec2 lo;
  Vec2 hi;

  bool contains(const Vec2& p) const { return p[0] > lo[0] && p[0] < hi[0] && p[1] > lo[1] && p[1] < hi[1]; }
};

struct EnvSpec {
  std::string id;
  int state_dim = 4;
  int action_dim = 2;
  double action_bound = 1.0;
  int horizon = 200;
  RewardKind reward_kind = RewardKind::Dense;
  double gamma = 0.99;
  double random_ref = 0.0;
  double expert_ref = 1.0;

  double dt = 0.05;
  double damping = 0.95;
  Vec2 arena_lo{-2.0, -2.0};
  Vec2 arena_hi{2.0, 2.0};
  Vec2 start{0.0, 0.0};
  double start_noise = 0.1;  // radius of the uniform disk around `start`
  Vec2 goal{1.0, 1.0};
  double goal_radius = 0.0;  // sparse only
  std::vector<Wall> walls;

  /// Upper bound on the speed reachable from rest with box-bounded actions.
  double v_max() const { return dt * action_bound * std::sqrt(2.0) / (1.0 - damping); }
};

struct EnvState {
  Vec2 position{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};
  int step = 0;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;      // episode over, for any reason
  bool terminal = false;  // goal reached; bootstrapping must stop here
};

inline std::vector<double> observe(const EnvState& s) {
  return {s.position[0], s.position[1], s.velocity[0], s.velocity[1]};
}

inline double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

class PointMassEnv {
 public:
  explicit PointMassEnv(EnvSpec spec) : spec_(std::move(spec)) {
    if (spec_.horizon < 1) throw ConfigError("env " + spec_.id + ": horizon must be >= 1");
    if (!(spec_.expert_ref > spec_.random_ref)) throw ConfigError("env " + spec_.id + ": expert_ref <= random_ref");
    if (!(spec_.damping >= 0.0 && spec_.damping < 1.0)) throw ConfigError("env " + spec_.id + ": damping in [0,1)");
  }

  const EnvSpec& spec() const { return spec_; }

  EnvState reset(std::uint64_t seed) const {
    Rng rng = make_rng(seed, 0x5eed);
    EnvState s;
    // Uniform over the disk of radius start_noise.
    const double radius = spec_.start_noise * std::sqrt(uniform(rng, 0.0, 1.0));
    const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    s.position = {spec_.start[0] + radius * std::cos(angle), spec_.start[1] + radius * std::sin(angle)};
    return s;
  }

  StepResult step(const EnvState& s, std::span<const double> action) const {
    if (static_cast<int>(action.size()) != spec_.action_dim)
      throw ConfigError("env " + spec_.id + ": action has wrong dimension");
    Vec2 a{};
    for (int i = 0; i < 2; ++i) {
      if (!std::isfinite(action[i])) throw NumericError("env " + spec_.id + ": non-finite action rejected");
      a[i] = std::clamp(action[i], -spec_.action_bound, spec_.action_bound);
    }

    StepResult r;
    EnvState& n = r.state;
    n.step = s.step + 1;
    for (int i = 0; i < 2; ++i) n.velocity[i] = spec_.damping * s.velocity[i] + spec_.dt * a[i];
    n.position = s.position;
    for (int axis = 0; axis < 2; ++axis) move_axis(n, axis);

    const double d = distance(n.position, spec_.goal);
    if (spec_.reward_kind == RewardKind::Dense) {
      r.reward = -d * spec_.dt;
    } else if (d <= spec_.goal_radius) {
      r.reward = 1.0;
      r.terminal = true;
    }
    r.done = r.terminal || n.step >= spec_.horizon;
    return r;
  }

  bool in_bounds(const Vec2& p) const {
    for (int i = 0; i < 2; ++i)
      if (p[i] < spec_.arena_lo[i] || p[i] > spec_.arena_hi[i]) return false;
    return std::none_of(spec_.walls.begin(), spec_.walls.end(), [&](const Wall& w) { return w.contains(p); });
  }

 private:
  // Axis-wise clip-and-zero collision against the arena and interior walls.
  void move_axis(EnvState& n, int axis) const {
    const double from = n.position[axis];
    double to = from + spec_.dt * n.velocity[axis];
    bool blocked = false;
    if (to < spec_.arena_lo[axis]) {
      to = spec_.arena_lo[axis];
      blocked = true;
    } else if (to > spec_.arena_hi[axis]) {
      to = spec_.arena_hi[axis];
      blocked = true;
    }
    Vec2 p = n.position;
    p[axis] = to;
    for (const auto& w : spec_.walls) {
      if (!w.contains(p)) continue;
      to = (to > from) ? w.lo[axis] : w.hi[axis];
      p[axis] = to;
      blocked = true;
    }
    n.position[axis] = to;
    if (blocked) n.velocity[axis] = 0.0;
  }

  EnvSpec spec_;
};

/// D4RL-style normalization: random_ref maps to 0 and expert_ref to 100.
inline double normalized_score(const EnvSpec& spec, double raw_return) {
  const double span = spec.expert_ref - spec.random_ref;
  if (!(std::abs(span) > 0.0) || !std::isfinite(span))
    throw ConfigError("normalized_score: degenerate reference returns for " + spec.id);
  return 100.0 * (raw_return - spec.random_ref) / span;
}

// ---------------------------------------------------------------------------
// Registry. Reference returns are the 100-episode means of the scripted
// random and expert controllers (see data.hpp, reference_returns()).

inline constexpr std::string_view kDenseEnvId = "point-reach-dense";
inline constexpr std::string_view kMazeEnvId = "point-maze-sparse";

inline EnvSpec dense_spec() {
  EnvSpec s;
  s.id = std::string(kDenseEnvId);
  s.horizon = 200;
  s.reward_kind = RewardKind::Dense;
  s.dt = 0.05;
  s.damping = 0.95;
  s.arena_lo = {-2.0, -2.0};
  s.arena_hi = {2.0, 2.0};
  s.start = {0.0, 0.0};
  s.start_noise = 0.1;
  s.goal = {1.0, 1.0};
  s.random_ref = -14.729914486988401;  // reference_returns(dense_spec(), 100, 0)
  s.expert_ref = -1.6974942086514548;
  return s;
}

inline EnvSpec maze_spec() {
  EnvSpec s;
  s.id = std::string(kMazeEnvId);
  s.horizon = 300;
  s.reward_kind = RewardKind::Sparse;
  s.dt = 0.1;
  s.damping = 0.9;
  s.arena_lo = {0.0, 0.0};
  s.arena_hi = {4.0, 4.0};
  s.start = {0.5, 0.5};
  s.start_noise = 0.1;
  s.goal = {0.5, 3.5};
  s.goal_radius = 0.3;
  // Attached to the left arena wall: the only passage between the lower and
  // upper corridors is on the right.
  s.walls = {Wall{{0.0, 1.7}, {2.8, 2.3}}};
  s.random_ref = 0.0;
  s.expert_ref = 1.0;
  return s;
}

inline std::vector<std::string> env_ids() { return {std::string(kDenseEnvId), std::string(kMazeEnvId)}; }

inline EnvSpec env_spec(std::string_view id) {
  if (id == kDenseEnvId) return dense_spec();
  if (id == kMazeEnvId) return maze_spec();
  throw ConfigError("unknown env id '" + std::string(id) + "'");
}

inline PointMassEnv make_env(std::string_view id) { return PointMassEnv(env_spec(id)); }

inline nlohmann::json to_json(const EnvSpec& s) {
  nlohmann::json walls = nlohmann::json::array();
  for (const auto& w : s.walls) walls.push_back({{"lo", w.lo}, {"hi", w.hi}});
  return {{"id", s.id},
          {"state_dim", s.state_dim},
          {"action_dim", s.action_dim},
          {"action_bound", s.action_bound},
          {"horizon", s.horizon},
          {"reward_kind", to_string(s.reward_kind)},
          {"gamma", s.gamma},
          {"random_ref", s.random_ref},
          {"expert_ref", s.expert_ref},
          {"dt", s.dt},
          {"damping", s.damping},
          {"arena_lo", s.arena_lo},
          {"arena_hi", s.arena_hi},
          {"start", s.start},
          {"start_noise", s.start_noise},
          {"goal", s.goal},
          {"goal_radius", s.goal_radius},
          {"walls", walls}};
}

}  // namespace psw
