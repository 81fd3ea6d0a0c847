#pragma once

// Evaluation-time policy switching. The RL action is scored by its median
// ensemble value minus an epistemic penalty f(sigma_D) * sigma_Q, and the BC
// action by its median value; the higher score wins, ties going to RL.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psw/agents.hpp"
#include "psw/data.hpp"
#include "psw/envs.hpp"
#include "psw/error.hpp"
#include "psw/stats.hpp"

namespace psw {

enum class SwitchMode { Adaptive, FixedHalf };

inline const char* to_string(SwitchMode m) { return m == SwitchMode::Adaptive ? "adaptive" : "fixed_half"; }

inline SwitchMode parse_switch_mode(std::string_view s) {
  if (s == "adaptive") return SwitchMode::Adaptive;
  if (s == "fixed_half") return SwitchMode::FixedHalf;
  throw ConfigError("unknown switch mode '" + std::string(s) + "' (expected adaptive|fixed_half)");
}

struct SwitchConfig {
  double m = 4.0;
  double alpha = 0.1;
  double sigma_d = 0.0;
  SigmaMeasure measure = SigmaMeasure::Returns;
  SwitchMode mode = SwitchMode::Adaptive;

  // m = 0 is accepted: it disables the penalty entirely.
  void validate() const {
    if (!(m >= 0.0) || !std::isfinite(m)) throw ConfigError("switch: m must be finite and >= 0");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("switch: alpha must be finite and > 0");
    if (!(sigma_d >= 0.0)) throw ConfigError("switch: sigma_d must be >= 0");
  }

  static double default_alpha(SigmaMeasure measure) { return measure == SigmaMeasure::Returns ? 0.1 : 0.3; }
};

inline nlohmann::json to_json(const SwitchConfig& c) {
  return {{"m", c.m},
          {"alpha", c.alpha},
          {"sigma_d", c.sigma_d},
          {"measure", to_string(c.measure)},
          {"mode", to_string(c.mode)}};
}

/// f(sigma_D) = m * (1 - exp(-alpha / sigma_D)), with f(0) = m; the
/// fixed_half ablation replaces it with the constant m / 2.
inline double f_penalty(const SwitchConfig& c) {
  if (c.mode == SwitchMode::FixedHalf) return 0.5 * c.m;
  if (c.sigma_d == 0.0) return c.m;
  return c.m * -std::expm1(-c.alpha / c.sigma_d);
}

/// Population standard deviation of the ensemble values.
inline double sigma_q(std::span<const double> values) {
  if (values.size() < 2) throw ConfigError("sigma_q: ensemble needs at least two critics");
  return detail::population_std(values);
}

/// Median; for an even count, the mean of the two central order statistics.
inline double q_median(std::span<const double> values) {
  if (values.empty()) throw ConfigError("q_median: no values");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline double sigma_q(const CriticEnsemble& e, std::span<const double> state, std::span<const double> action) {
  return sigma_q(e.values_at(state, action));
}

inline double q_median(const CriticEnsemble& e, std::span<const double> state, std::span<const double> action) {
  return q_median(e.values_at(state, action));
}

struct SwitchDecision {
  std::vector<double> action;
  bool used_bc = false;
  double q_rl = 0.0;     // penalized
  double q_bc = 0.0;
  double sigma_q = 0.0;  // at the RL action
};

/// The decision rule on precomputed ensemble values at a_RL and a_BC.
inline SwitchDecision decide(std::span<const double> q_at_rl, std::span<const double> q_at_bc, double penalty,
                             std::span<const double> a_rl, std::span<const double> a_bc) {
  SwitchDecision d;
  d.sigma_q = sigma_q(q_at_rl);
  d.q_rl = q_median(q_at_rl) - penalty * d.sigma_q;
  d.q_bc = q_median(q_at_bc);
  d.used_bc = !(d.q_rl >= d.q_bc);
  const auto chosen = d.used_bc ? a_bc : a_rl;
  d.action.assign(chosen.begin(), chosen.end());
  return d;
}

inline SwitchDecision select_action(const Td3nAgent& agent, const GaussianPolicy& bc, std::span<const double> state,
                                    const SwitchConfig& cfg) {
  const auto a_rl = agent.act(state, ActMode::Eval);
  const auto a_bc = bc.act(state, ActMode::Eval);
  const auto sd = static_cast<Eigen::Index>(state.size());
  const auto ad = static_cast<Eigen::Index>(a_rl.size());
  Eigen::MatrixXd states(sd, 2), actions(ad, 2);
  states.col(0) = states.col(1) = Eigen::Map<const Eigen::VectorXd>(state.data(), sd);
  actions.col(0) = Eigen::Map<const Eigen::VectorXd>(a_rl.data(), ad);
  actions.col(1) = Eigen::Map<const Eigen::VectorXd>(a_bc.data(), ad);
  const Eigen::MatrixXd q = agent.critics().values(states, actions);
  const Eigen::VectorXd q_rl = q.col(0);
  const Eigen::VectorXd q_bc = q.col(1);
  return decide({q_rl.data(), static_cast<std::size_t>(q_rl.size())},
                {q_bc.data(), static_cast<std::size_t>(q_bc.size())}, f_penalty(cfg), a_rl, a_bc);
}

// ---------------------------------------------------------------------------

enum class Selector { Switched, RlOnly, BcOnly };

inline const char* to_string(Selector s) {
  switch (s) {
    case Selector::Switched: return "switched";
    case Selector::RlOnly: return "rl";
    case Selector::BcOnly: return "bc";
  }
  return "?";
}

struct EpisodeResult {
  double raw_return = 0.0;
  double normalized = 0.0;
  int length = 0;
  double bc_proportion = 0.0;  // fraction of executed actions that came from BC
  double sigma_q_mean = 0.0;   // mean sigma_Q(s, a_RL) along the trajectory
};

struct EvalReport {
  std::string env_id;
  Selector selector = Selector::Switched;
  SwitchConfig config;
  double penalty = 0.0;
  std::uint64_t seed = 0;
  std::vector<EpisodeResult> episodes;

  std::vector<double> column(double EpisodeResult::*field) const {
    std::vector<double> v;
    v.reserve(episodes.size());
    for (const auto& e : episodes) v.push_back(e.*field);
    return v;
  }
  MeanCi raw_return() const { return mean_ci(column(&EpisodeResult::raw_return)); }
  MeanCi normalized() const { return mean_ci(column(&EpisodeResult::normalized)); }
  double bc_proportion() const { return mean(column(&EpisodeResult::bc_proportion)); }
  double sigma_q_mean() const { return mean(column(&EpisodeResult::sigma_q_mean)); }
};

inline std::uint64_t episode_seed(std::uint64_t seed, int episode) {
  return mix_seed(seed, 0xe7a1000ULL + static_cast<std::uint64_t>(episode));
}

/// Noise-free rollouts with the switching rule applied at every step.
inline EvalReport evaluate(const PointMassEnv& env, const Td3nAgent& agent, const GaussianPolicy& bc,
                           const SwitchConfig& cfg, int n_episodes, std::uint64_t seed,
                           Selector selector = Selector::Switched) {
  cfg.validate();
  if (n_episodes < 1) throw ConfigError("evaluate: n_episodes must be >= 1");
  EvalReport rep;
  rep.env_id = env.spec().id;
  rep.selector = selector;
  rep.config = cfg;
  rep.penalty = f_penalty(cfg);
  rep.seed = seed;
  for (int e = 0; e < n_episodes; ++e) {
    EnvState s = env.reset(episode_seed(seed, e));
    EpisodeResult ep;
    int bc_steps = 0;
    double sq = 0.0;
    for (;;) {
      const auto obs = observe(s);
      const SwitchDecision d = select_action(agent, bc, obs, cfg);
      bool from_bc = d.used_bc;
      if (selector == Selector::RlOnly) from_bc = false;
      if (selector == Selector::BcOnly) from_bc = true;
      const auto action = from_bc ? bc.act(obs, ActMode::Eval) : agent.act(obs, ActMode::Eval);
      const StepResult r = env.step(s, action);
      ep.raw_return += r.reward;
      ++ep.length;
      bc_steps += from_bc ? 1 : 0;
      sq += d.sigma_q;
      s = r.state;
      if (r.done) break;
    }
    ep.normalized = normalized_score(env.spec(), ep.raw_return);
    ep.bc_proportion = static_cast<double>(bc_steps) / ep.length;
    ep.sigma_q_mean = sq / ep.length;
    rep.episodes.push_back(ep);
  }
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : r.episodes)
    eps.push_back({{"return", e.raw_return},
                   {"normalized_score", e.normalized},
                   {"length", e.length},
                   {"bc_proportion", e.bc_proportion},
                   {"sigma_q_mean", e.sigma_q_mean}});
  const auto ret = r.raw_return();
  const auto norm = r.normalized();
  return {{"env_id", r.env_id},
          {"selector", to_string(r.selector)},
          {"switch", to_json(r.config)},
          {"penalty", r.penalty},
          {"seed", r.seed},
          {"summary",
           {{"return_mean", ret.mean},
            {"return_ci95", ret.ci95},
            {"normalized_mean", norm.mean},
            {"normalized_ci95", norm.ci95},
            {"bc_proportion", r.bc_proportion()},
            {"sigma_q_mean", r.sigma_q_mean()},
            {"episodes", r.episodes.size()}}},
          {"episodes", eps}};
}

inline Selector parse_selector(std::string_view s) {
  if (s == "switched") return Selector::Switched;
  if (s == "rl") return Selector::RlOnly;
  if (s == "bc") return Selector::BcOnly;
  throw ConfigError("unknown selector '" + std::string(s) + "' (expected switched|rl|bc)");
}

inline SwitchConfig switch_config_from_json(const nlohmann::json& j, SwitchConfig c = {}) {
  if (j.contains("m")) c.m = j.at("m").get<double>();
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
  if (j.contains("sigma_d")) c.sigma_d = j.at("sigma_d").get<double>();
  if (j.contains("measure")) c.measure = parse_measure(j.at("measure").get<std::string>());
  if (j.contains("mode")) c.mode = parse_switch_mode(j.at("mode").get<std::string>());
  return c;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.env_id = j.at("env_id").get<std::string>();
  r.selector = parse_selector(j.at("selector").get<std::string>());
  r.config = switch_config_from_json(j.at("switch"));
  r.penalty = j.at("penalty").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& e : j.at("episodes")) {
    EpisodeResult ep;
    ep.raw_return = e.at("return").get<double>();
    ep.normalized = e.at("normalized_score").get<double>();
    ep.length = e.at("length").get<int>();
    ep.bc_proportion = e.at("bc_proportion").get<double>();
    ep.sigma_q_mean = e.at("sigma_q_mean").get<double>();
    r.episodes.push_back(ep);
  }
  return r;
}

}  // namespace psw
