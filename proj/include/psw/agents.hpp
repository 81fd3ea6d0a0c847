#pragma once

// The two independently trained policies: TD3 with an N-critic ensemble
// (TD3-N) and a state-conditional Gaussian behavioural-cloning policy.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psw/data.hpp"
#include "psw/error.hpp"
#include "psw/neural.hpp"
#include "psw/rng.hpp"

namespace psw {

struct Td3nConfig {
  std::vector<int> hidden{64, 64};
  int n_critics = 10;
  double gamma = 0.99;
  double tau = 0.005;
  int policy_delay = 2;
  double target_noise_std = 0.2;
  double target_noise_clip = 0.5;
  double exploration_noise_std = 0.1;
  int batch_size = 256;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;

  void validate() const {
    if (n_critics < 2) throw ConfigError("td3n: n_critics must be >= 2");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("td3n: gamma must lie in [0, 1]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("td3n: tau must lie in [0, 1]");
    if (policy_delay < 1) throw ConfigError("td3n: policy_delay must be >= 1");
    if (batch_size < 1) throw ConfigError("td3n: batch_size must be >= 1");
    if (target_noise_std < 0 || target_noise_clip < 0 || exploration_noise_std < 0)
      throw ConfigError("td3n: noise parameters must be non-negative");
    if (hidden.empty() || std::any_of(hidden.begin(), hidden.end(), [](int h) { return h <= 0; }))
      throw ConfigError("td3n: hidden sizes must be positive");
  }
};

struct BcConfig {
  std::vector<int> hidden{64, 64};
  double lr = 3e-4;
  int batch_size = 256;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("bc: batch_size must be >= 1");
    if (!(log_std_min < log_std_max)) throw ConfigError("bc: log_std_min must be < log_std_max");
    if (hidden.empty() || std::any_of(hidden.begin(), hidden.end(), [](int h) { return h <= 0; }))
      throw ConfigError("bc: hidden sizes must be positive");
  }
};

inline nlohmann::json to_json(const Td3nConfig& c) {
  return {{"hidden", c.hidden},
          {"n_critics", c.n_critics},
          {"gamma", c.gamma},
          {"tau", c.tau},
          {"policy_delay", c.policy_delay},
          {"target_noise_std", c.target_noise_std},
          {"target_noise_clip", c.target_noise_clip},
          {"exploration_noise_std", c.exploration_noise_std},
          {"batch_size", c.batch_size},
          {"actor_lr", c.actor_lr},
          {"critic_lr", c.critic_lr}};
}

inline Td3nConfig td3n_config_from_json(const nlohmann::json& j, Td3nConfig c = {}) {
  c.hidden = j.value("hidden", c.hidden);
  c.n_critics = j.value("n_critics", c.n_critics);
  c.gamma = j.value("gamma", c.gamma);
  c.tau = j.value("tau", c.tau);
  c.policy_delay = j.value("policy_delay", c.policy_delay);
  c.target_noise_std = j.value("target_noise_std", c.target_noise_std);
  c.target_noise_clip = j.value("target_noise_clip", c.target_noise_clip);
  c.exploration_noise_std = j.value("exploration_noise_std", c.exploration_noise_std);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.actor_lr = j.value("actor_lr", c.actor_lr);
  c.critic_lr = j.value("critic_lr", c.critic_lr);
  return c;
}

inline nlohmann::json to_json(const BcConfig& c) {
  return {{"hidden", c.hidden},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"log_std_min", c.log_std_min},
          {"log_std_max", c.log_std_max}};
}

inline BcConfig bc_config_from_json(const nlohmann::json& j, BcConfig c = {}) {
  c.hidden = j.value("hidden", c.hidden);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.log_std_min = j.value("log_std_min", c.log_std_min);
  c.log_std_max = j.value("log_std_max", c.log_std_max);
  return c;
}

namespace detail {
inline std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

inline Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
  Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

inline Eigen::MatrixXd as_column(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}
}  // namespace detail

// ---------------------------------------------------------------------------

struct CriticEnsemble {
  std::vector<MlpParams> online;
  std::vector<MlpParams> target;

  std::size_t size() const { return online.size(); }

  /// Row i holds critic i's values for every column of (states, actions).
  Eigen::MatrixXd values(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions, bool use_target = false) const {
    const auto& nets = use_target ? target : online;
    const Eigen::MatrixXd x = detail::stack_rows(states, actions);
    Eigen::MatrixXd q(static_cast<Eigen::Index>(nets.size()), states.cols());
    for (std::size_t i = 0; i < nets.size(); ++i) q.row(static_cast<Eigen::Index>(i)) = forward_batch(nets[i], x);
    return q;
  }

  /// Online critic values at a single (s, a).
  std::vector<double> values_at(std::span<const double> state, std::span<const double> action) const {
    const Eigen::MatrixXd q = values(detail::as_column(state), detail::as_column(action));
    return {q.data(), q.data() + q.size()};
  }
};

enum class TargetMode { MinAll, MinRandom2 };

inline const char* to_string(TargetMode m) { return m == TargetMode::MinAll ? "min_all" : "min_random2"; }

enum class ActMode { Eval, Explore };

class Td3nAgent {
 public:
  Td3nAgent(int state_dim, int action_dim, double action_bound, Td3nConfig cfg, std::uint64_t seed)
      : state_dim_(state_dim), action_dim_(action_dim), bound_(action_bound), cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = make_rng(seed, stream::kInit);
    actor_ = make_mlp(detail::layer_sizes(state_dim, cfg_.hidden, action_dim), Activation::Relu, Activation::Tanh, rng);
    actor_target_ = actor_;
    for (int i = 0; i < cfg_.n_critics; ++i) {
      critics_.online.push_back(make_mlp(detail::layer_sizes(state_dim + action_dim, cfg_.hidden, 1),
                                         Activation::Relu, Activation::Identity, rng));
    }
    critics_.target = critics_.online;
    reset_optimizers();
  }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  double action_bound() const { return bound_; }
  const Td3nConfig& config() const { return cfg_; }
  const MlpParams& actor() const { return actor_; }
  const MlpParams& actor_target() const { return actor_target_; }
  const CriticEnsemble& critics() const { return critics_; }
  std::uint64_t update_count() const { return updates_; }

  MlpParams& mutable_actor() { return actor_; }
  MlpParams& mutable_actor_target() { return actor_target_; }
  CriticEnsemble& mutable_critics() { return critics_; }

  void reset_optimizers() {
    actor_opt_ = AdamState::for_params(actor_, AdamConfig{cfg_.actor_lr});
    critic_opt_.clear();
    for (const auto& c : critics_.online) critic_opt_.push_back(AdamState::for_params(c, AdamConfig{cfg_.critic_lr}));
  }

  /// Actions for each column of `states`, from the online or target actor.
  Eigen::MatrixXd policy(const Eigen::MatrixXd& states, bool use_target = false) const {
    return bound_ * forward_batch(use_target ? actor_target_ : actor_, states);
  }

  std::vector<double> act(std::span<const double> state, ActMode mode, Rng* rng = nullptr) const {
    const Eigen::MatrixXd a = policy(detail::as_column(state));
    std::vector<double> out(a.data(), a.data() + a.size());
    if (mode == ActMode::Explore && cfg_.exploration_noise_std > 0.0) {
      if (!rng) throw ConfigError("td3n act: explore mode needs an rng");
      for (auto& x : out) x += cfg_.exploration_noise_std * bound_ * standard_normal(*rng);
    }
    for (auto& x : out) x = std::clamp(x, -bound_, bound_);
    return out;
  }

  /// Draws the target-policy smoothing noise for a batch (clipped Gaussian).
  Eigen::MatrixXd draw_target_noise(Eigen::Index batch, Rng& rng) const {
    Eigen::MatrixXd n(action_dim_, batch);
    const double clip = cfg_.target_noise_clip * bound_;
    for (Eigen::Index j = 0; j < batch; ++j)
      for (Eigen::Index d = 0; d < action_dim_; ++d)
        n(d, j) = std::clamp(cfg_.target_noise_std * bound_ * standard_normal(rng), -clip, clip);
    return n;
  }

  std::vector<int> draw_target_indices(TargetMode mode, Rng& rng) const {
    const int n = static_cast<int>(critics_.size());
    if (mode == TargetMode::MinAll) {
      std::vector<int> all(static_cast<std::size_t>(n));
      std::iota(all.begin(), all.end(), 0);
      return all;
    }
    const int first = std::uniform_int_distribution<int>(0, n - 1)(rng);
    int second = std::uniform_int_distribution<int>(0, n - 2)(rng);
    if (second >= first) ++second;
    return {first, second};
  }

  /// y = r + gamma * (1 - done) * min_{i in indices} Q_i^target(s', clip(pi_target(s') + noise)).
  Eigen::VectorXd td_targets(const Batch& b, std::span<const int> indices, const Eigen::MatrixXd& noise) const {
    if (indices.empty()) throw ConfigError("td_targets: empty critic index set");
    const Eigen::MatrixXd next_a = (policy(b.next_states, true) + noise).cwiseMax(-bound_).cwiseMin(bound_);
    const Eigen::MatrixXd x = detail::stack_rows(b.next_states, next_a);
    Eigen::RowVectorXd q_min;
    for (int i : indices) {
      if (i < 0 || i >= static_cast<int>(critics_.size())) throw ConfigError("td_targets: critic index out of range");
      const Eigen::RowVectorXd q = forward_batch(critics_.target[static_cast<std::size_t>(i)], x);
      q_min = q_min.size() == 0 ? q : q_min.cwiseMin(q);
    }
    return b.rewards + cfg_.gamma * (Eigen::VectorXd::Ones(b.size()) - b.dones).cwiseProduct(q_min.transpose());
  }

  /// One regression step of every online critic towards a shared TD target,
  /// then Polyak averaging of all target critics. Returns the mean loss.
  double critic_update(const Batch& b, TargetMode mode, Rng& rng) {
    const auto indices = draw_target_indices(mode, rng);
    const auto noise = draw_target_noise(b.size(), rng);
    return critic_update_with(b, indices, noise);
  }

  double critic_update_with(const Batch& b, std::span<const int> indices, const Eigen::MatrixXd& noise) {
    const Eigen::VectorXd y = td_targets(b, indices, noise);
    if (!y.allFinite()) throw NumericError("critic_update: non-finite TD target, update rejected");
    const Eigen::MatrixXd x = detail::stack_rows(b.states, b.actions);
    const double inv_b = 1.0 / static_cast<double>(b.size());
    std::vector<Gradients> grads(critics_.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < critics_.size(); ++i) {
      ForwardCache cache;
      const Eigen::MatrixXd q = forward_batch(critics_.online[i], x, &cache);
      const Eigen::RowVectorXd resid = q.row(0) - y.transpose();
      loss += resid.squaredNorm() * inv_b;
      grads[i] = backward_batch(critics_.online[i], cache, 2.0 * inv_b * resid).grads;
    }
    if (!std::isfinite(loss)) throw NumericError("critic_update: non-finite loss, update rejected");
    for (std::size_t i = 0; i < critics_.size(); ++i) adam_step(critics_.online[i], critic_opt_[i], grads[i]);
    for (std::size_t i = 0; i < critics_.size(); ++i) soft_update(critics_.target[i], critics_.online[i], cfg_.tau);
    return loss / static_cast<double>(critics_.size());
  }

  /// Gradient ascent on the batch mean of the ensemble-mean value at
  /// (s, pi(s)); returns the loss, -mean Q, evaluated before the step.
  double actor_update(const Batch& b) {
    ForwardCache actor_cache;
    const Eigen::MatrixXd y = forward_batch(actor_, b.states, &actor_cache);
    const Eigen::MatrixXd a = bound_ * y;
    const Eigen::MatrixXd x = detail::stack_rows(b.states, a);
    const double n = static_cast<double>(critics_.size());
    const double scale = -1.0 / (n * static_cast<double>(b.size()));
    const Eigen::MatrixXd upstream = Eigen::MatrixXd::Constant(1, b.size(), scale);
    Eigen::MatrixXd grad_a = Eigen::MatrixXd::Zero(action_dim_, b.size());
    double loss = 0.0;
    for (const auto& c : critics_.online) {
      ForwardCache cache;
      const Eigen::MatrixXd q = forward_batch(c, x, &cache);
      loss += q.sum() * scale;
      grad_a += backward_batch(c, cache, upstream, false).input_grad.bottomRows(action_dim_);
    }
    if (!std::isfinite(loss)) throw NumericError("actor_update: non-finite loss, update rejected");
    auto g = backward_batch(actor_, actor_cache, bound_ * grad_a).grads;
    adam_step(actor_, actor_opt_, g);
    soft_update(actor_target_, actor_, cfg_.tau);
    return loss;
  }

  struct UpdateStats {
    double critic_loss = 0.0;
    std::optional<double> actor_loss;
  };

  /// Critic step every call; delayed actor step every policy_delay calls.
  UpdateStats update(const Batch& b, TargetMode mode, Rng& rng) {
    UpdateStats s;
    s.critic_loss = critic_update(b, mode, rng);
    ++updates_;
    if (updates_ % static_cast<std::uint64_t>(cfg_.policy_delay) == 0) s.actor_loss = actor_update(b);
    return s;
  }

 private:
  int state_dim_;
  int action_dim_;
  double bound_;
  Td3nConfig cfg_;
  MlpParams actor_;
  MlpParams actor_target_;
  CriticEnsemble critics_;
  AdamState actor_opt_;
  std::vector<AdamState> critic_opt_;
  std::uint64_t updates_ = 0;
};

// ---------------------------------------------------------------------------

class GaussianPolicy {
 public:
  GaussianPolicy(int state_dim, int action_dim, double action_bound, BcConfig cfg, std::uint64_t seed)
      : state_dim_(state_dim), action_dim_(action_dim), bound_(action_bound), cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = make_rng(seed, stream::kBcInit);
    trunk_ = make_mlp(detail::layer_sizes(state_dim, cfg_.hidden, 2 * action_dim), Activation::Relu,
                      Activation::Identity, rng);
    opt_ = AdamState::for_params(trunk_, AdamConfig{cfg_.lr});
  }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  double action_bound() const { return bound_; }
  const BcConfig& config() const { return cfg_; }
  const MlpParams& trunk() const { return trunk_; }
  MlpParams& mutable_trunk() { return trunk_; }
  void reset_optimizer() { opt_ = AdamState::for_params(trunk_, AdamConfig{cfg_.lr}); }

  struct Distribution {
    Eigen::MatrixXd mean;     // action_dim x batch
    Eigen::MatrixXd log_std;  // clamped
  };

  Distribution distribution(const Eigen::MatrixXd& states) const {
    const Eigen::MatrixXd out = forward_batch(trunk_, states);
    return {out.topRows(action_dim_), out.bottomRows(action_dim_).cwiseMax(cfg_.log_std_min).cwiseMin(cfg_.log_std_max)};
  }

  /// Mean over the batch of -log N(a | mu(s), sigma(s)^2), summed over action dims.
  double nll(const Batch& b) const {
    const auto d = distribution(b.states);
    return nll_terms(d, b.actions).sum() / static_cast<double>(b.size());
  }

  /// One Adam step on the batch NLL; returns the loss before the step.
  double train_step(const Batch& b) {
    if (b.size() == 0) throw ConfigError("bc train_step: empty batch");
    ForwardCache cache;
    const Eigen::MatrixXd out = forward_batch(trunk_, b.states, &cache);
    const Eigen::MatrixXd raw_log_std = out.bottomRows(action_dim_);
    const Distribution d{out.topRows(action_dim_), raw_log_std.cwiseMax(cfg_.log_std_min).cwiseMin(cfg_.log_std_max)};
    const double inv_b = 1.0 / static_cast<double>(b.size());
    const double loss = nll_terms(d, b.actions).sum() * inv_b;
    if (!std::isfinite(loss)) throw NumericError("bc train_step: non-finite loss, step rejected");

    const Eigen::ArrayXXd inv_var = (-2.0 * d.log_std.array()).exp();
    const Eigen::ArrayXXd diff = b.actions.array() - d.mean.array();
    Eigen::MatrixXd upstream(2 * action_dim_, b.size());
    upstream.topRows(action_dim_) = (-diff * inv_var * inv_b).matrix();
    Eigen::ArrayXXd g_log_std = (1.0 - diff.square() * inv_var) * inv_b;
    // The clamp has zero derivative outside its range.
    g_log_std = (raw_log_std.array() < cfg_.log_std_min || raw_log_std.array() > cfg_.log_std_max)
                    .select(0.0, g_log_std);
    upstream.bottomRows(action_dim_) = g_log_std.matrix();
    adam_step(trunk_, opt_, backward_batch(trunk_, cache, upstream).grads);
    return loss;
  }

  std::vector<double> act(std::span<const double> state, ActMode mode, Rng* rng = nullptr) const {
    const auto d = distribution(detail::as_column(state));
    std::vector<double> a(static_cast<std::size_t>(action_dim_));
    for (int i = 0; i < action_dim_; ++i) {
      double x = d.mean(i, 0);
      if (mode == ActMode::Explore) {
        if (!rng) throw ConfigError("bc act: sample mode needs an rng");
        x += std::exp(d.log_std(i, 0)) * standard_normal(*rng);
      }
      a[static_cast<std::size_t>(i)] = std::clamp(x, -bound_, bound_);
    }
    return a;
  }

 private:
  static Eigen::ArrayXXd nll_terms(const Distribution& d, const Eigen::MatrixXd& actions) {
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    const Eigen::ArrayXXd z = (actions.array() - d.mean.array()) * (-d.log_std.array()).exp();
    return 0.5 * z.square() + d.log_std.array() + half_log_2pi;
  }

  int state_dim_;
  int action_dim_;
  double bound_;
  BcConfig cfg_;
  MlpParams trunk_;
  AdamState opt_;
};

// ---------------------------------------------------------------------------

struct TrainLogRow {
  std::size_t step = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double bc_loss = 0.0;
};

struct TrainOptions {
  std::size_t n_steps = 50000;
  std::size_t log_every = 1000;
  bool train_rl = true;
  bool train_bc = true;
};

/// Offline training of both agents. Each draws minibatches from its own
/// random stream, so neither training run influences the other.
inline std::vector<TrainLogRow> train_offline(Td3nAgent& agent, GaussianPolicy& bc, const ReplayBuffer& buffer,
                                              const TrainOptions& opt, std::uint64_t seed) {
  if (buffer.size() == 0) throw ConfigError("train_offline: empty buffer");
  Rng rl_rng = make_rng(seed, stream::kSampling);
  Rng bc_rng = make_rng(seed, stream::kBcSampling);
  std::vector<TrainLogRow> log;
  TrainLogRow acc;
  std::size_t n_critic = 0, n_actor = 0, n_bc = 0;
  const auto rl_batch = static_cast<std::size_t>(agent.config().batch_size);
  const auto bc_batch = static_cast<std::size_t>(bc.config().batch_size);
  for (std::size_t step = 1; step <= opt.n_steps; ++step) {
    if (opt.train_rl) {
      const auto s = agent.update(buffer.sample(rl_batch, rl_rng), TargetMode::MinAll, rl_rng);
      acc.critic_loss += s.critic_loss;
      ++n_critic;
      if (s.actor_loss) {
        acc.actor_loss += *s.actor_loss;
        ++n_actor;
      }
    }
    if (opt.train_bc) {
      acc.bc_loss += bc.train_step(buffer.sample(bc_batch, bc_rng));
      ++n_bc;
    }
    if (opt.log_every > 0 && (step % opt.log_every == 0 || step == opt.n_steps)) {
      TrainLogRow row;
      row.step = step;
      row.critic_loss = n_critic ? acc.critic_loss / static_cast<double>(n_critic) : 0.0;
      row.actor_loss = n_actor ? acc.actor_loss / static_cast<double>(n_actor) : 0.0;
      row.bc_loss = n_bc ? acc.bc_loss / static_cast<double>(n_bc) : 0.0;
      log.push_back(row);
      acc = {};
      n_critic = n_actor = n_bc = 0;
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoint directory: actor.bin, actor_target.bin, critic_{i}.bin,
// critic_{i}_target.bin, bc.bin and hyper.json.

inline void save_checkpoint(const std::string& dir, const Td3nAgent& agent, const GaussianPolicy& bc) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path d(dir);
  save_mlp((d / "actor.bin").string(), agent.actor());
  save_mlp((d / "actor_target.bin").string(), agent.actor_target());
  for (std::size_t i = 0; i < agent.critics().size(); ++i) {
    save_mlp((d / ("critic_" + std::to_string(i) + ".bin")).string(), agent.critics().online[i]);
    save_mlp((d / ("critic_" + std::to_string(i) + "_target.bin")).string(), agent.critics().target[i]);
  }
  save_mlp((d / "bc.bin").string(), bc.trunk());
  const nlohmann::json hyper{{"state_dim", agent.state_dim()},
                             {"action_dim", agent.action_dim()},
                             {"action_bound", agent.action_bound()},
                             {"td3n", to_json(agent.config())},
                             {"bc", to_json(bc.config())}};
  std::ofstream os(d / "hyper.json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (d / "hyper.json").string());
  os << hyper.dump(2) << '\n';
}

struct LoadedAgents {
  Td3nAgent agent;
  GaussianPolicy bc;
};

inline LoadedAgents load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  const auto hyper_path = d / "hyper.json";
  std::ifstream is(hyper_path);
  if (!is) throw IoError("missing checkpoint file: " + hyper_path.string());
  const auto hyper = nlohmann::json::parse(is);
  const int sd = hyper.at("state_dim").get<int>();
  const int ad = hyper.at("action_dim").get<int>();
  const double bound = hyper.at("action_bound").get<double>();
  LoadedAgents out{Td3nAgent(sd, ad, bound, td3n_config_from_json(hyper.at("td3n")), 0),
                   GaussianPolicy(sd, ad, bound, bc_config_from_json(hyper.at("bc")), 0)};
  auto load = [&](const std::string& name) { return load_mlp((d / name).string()); };
  out.agent.mutable_actor() = load("actor.bin");
  out.agent.mutable_actor_target() = load("actor_target.bin");
  auto& critics = out.agent.mutable_critics();
  for (std::size_t i = 0; i < critics.size(); ++i) {
    critics.online[i] = load("critic_" + std::to_string(i) + ".bin");
    critics.target[i] = load("critic_" + std::to_string(i) + "_target.bin");
  }
  out.bc.mutable_trunk() = load("bc.bin");
  out.agent.reset_optimizers();
  out.bc.reset_optimizer();
  return out;
}

}  // namespace psw
