#pragma once

// Offline-to-online fine-tuning. Only the RL agent keeps learning; the BC
// policy is frozen and still takes part in every switching decision. New
// transitions overwrite the offline samples in FIFO order.

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "psw/agents.hpp"
#include "psw/data.hpp"
#include "psw/envs.hpp"
#include "psw/error.hpp"
#include "psw/switching.hpp"

namespace psw {

struct FinetuneConfig {
  std::size_t online_steps = 25000;
  std::size_t eval_every = 1000;
  std::size_t warmup_steps = 0;
  int updates_per_env_step = 1;
  int eval_episodes = 10;
  std::uint64_t seed = 0;

  // online_steps = 0 is allowed and yields only the initial evaluation.
  void validate() const {
    if (eval_every < 1) throw ConfigError("finetune: eval_every must be >= 1");
    if (online_steps > 0 && eval_every > online_steps) throw ConfigError("finetune: eval_every must be <= online_steps");
    if (updates_per_env_step < 1) throw ConfigError("finetune: updates_per_env_step must be >= 1");
    if (eval_episodes < 1) throw ConfigError("finetune: eval_episodes must be >= 1");
  }
};

inline nlohmann::json to_json(const FinetuneConfig& c) {
  return {{"online_steps", c.online_steps},     {"eval_every", c.eval_every},
          {"warmup_steps", c.warmup_steps},     {"updates_per_env_step", c.updates_per_env_step},
          {"eval_episodes", c.eval_episodes}};
}

inline FinetuneConfig finetune_config_from_json(const nlohmann::json& j, FinetuneConfig c = {}) {
  if (j.contains("online_steps")) c.online_steps = j.at("online_steps").get<std::size_t>();
  if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<std::size_t>();
  if (j.contains("warmup_steps")) c.warmup_steps = j.at("warmup_steps").get<std::size_t>();
  if (j.contains("updates_per_env_step")) c.updates_per_env_step = j.at("updates_per_env_step").get<int>();
  if (j.contains("eval_episodes")) c.eval_episodes = j.at("eval_episodes").get<int>();
  return c;
}

struct MetricsRecord {
  std::size_t env_step = 0;
  double eval_return_mean = 0.0;
  double eval_return_ci95 = 0.0;
  double normalized_score = 0.0;
  double bc_proportion = 0.0;
  double sigma_q_mean = 0.0;
  double critic_loss = std::numeric_limits<double>::quiet_NaN();  // mean since the previous row
  double actor_loss = std::numeric_limits<double>::quiet_NaN();
};

struct FinetuneLog {
  std::vector<MetricsRecord> records;
};

inline constexpr const char* kFinetuneCsvHeader =
    "env_step,eval_return_mean,eval_return_ci95,normalized_score,bc_proportion,sigma_q_mean,critic_loss,actor_loss";

inline MetricsRecord metrics_from_report(std::size_t env_step, const EvalReport& rep) {
  MetricsRecord m;
  m.env_step = env_step;
  const auto ret = rep.raw_return();
  m.eval_return_mean = ret.mean;
  m.eval_return_ci95 = ret.ci95;
  m.normalized_score = rep.normalized().mean;
  m.bc_proportion = rep.bc_proportion();
  m.sigma_q_mean = rep.sigma_q_mean();
  return m;
}

/// Called after every evaluation; lets callers report progress.
using FinetuneObserver = std::function<void(const MetricsRecord&)>;

/// Fine-tunes `agent` online. The buffer should come from buffer_from_dataset
/// so fresh experience replaces offline samples oldest-first.
inline FinetuneLog finetune_run(Td3nAgent& agent, const GaussianPolicy& bc, const PointMassEnv& env,
                                ReplayBuffer& buffer, const SwitchConfig& sw, const FinetuneConfig& cfg,
                                const FinetuneObserver& observer = {}) {
  cfg.validate();
  sw.validate();
  const auto& spec = env.spec();
  const std::uint64_t eval_seed = mix_seed(cfg.seed, stream::kEval);
  Rng update_rng = make_rng(cfg.seed, stream::kOnline);
  Rng noise_rng = make_rng(cfg.seed, stream::kNoise);
  const auto batch_size = static_cast<std::size_t>(agent.config().batch_size);

  FinetuneLog log;
  auto record = [&](std::size_t step, double critic, double actor) {
    MetricsRecord m = metrics_from_report(step, evaluate(env, agent, bc, sw, cfg.eval_episodes, eval_seed));
    m.critic_loss = critic;
    m.actor_loss = actor;
    log.records.push_back(m);
    if (observer) observer(m);
  };
  record(0, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN());

  std::uint64_t episode = 0;
  EnvState s = env.reset(mix_seed(cfg.seed, 0x0a1100000ULL + episode));
  double critic_sum = 0.0, actor_sum = 0.0;
  std::size_t critic_n = 0, actor_n = 0;
  for (std::size_t t = 1; t <= cfg.online_steps; ++t) {
    const auto obs = observe(s);
    const SwitchDecision d = select_action(agent, bc, obs, sw);
    std::vector<double> action = d.action;
    if (!d.used_bc) {
      const double noise_std = agent.config().exploration_noise_std;
      for (auto& x : action)
        x = std::clamp(x + noise_std * standard_normal(noise_rng), -spec.action_bound, spec.action_bound);
    }
    const StepResult r = env.step(s, action);
    Transition tx;
    tx.state = obs;
    tx.action = action;
    tx.reward = r.reward;
    tx.next_state = observe(r.state);
    tx.done = r.terminal;
    buffer.insert(tx, false);

    if (t > cfg.warmup_steps) {
      for (int u = 0; u < cfg.updates_per_env_step; ++u) {
        const auto st = agent.update(buffer.sample(batch_size, update_rng), TargetMode::MinRandom2, update_rng);
        critic_sum += st.critic_loss;
        ++critic_n;
        if (st.actor_loss) {
          actor_sum += *st.actor_loss;
          ++actor_n;
        }
      }
    }

    s = r.state;
    if (r.done) s = env.reset(mix_seed(cfg.seed, 0x0a1100000ULL + ++episode));

    if (t % cfg.eval_every == 0) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      record(t, critic_n ? critic_sum / static_cast<double>(critic_n) : nan,
             actor_n ? actor_sum / static_cast<double>(actor_n) : nan);
      critic_sum = actor_sum = 0.0;
      critic_n = actor_n = 0;
    }
  }
  return log;
}

// ---------------------------------------------------------------------------

struct AnnealingSummary {
  double bc_first = 0.0;
  double bc_last = 0.0;
  double sigma_q_first = 0.0;
  double sigma_q_last = 0.0;
  std::size_t window = 0;  // evaluations averaged at each end
};

/// Means of bc_proportion and sigma_q over the first and last tenth of the
/// evaluations (at least one each).
inline AnnealingSummary annealing_summary(const FinetuneLog& log) {
  const std::size_t n = log.records.size();
  if (n < 10) throw ConfigError("annealing_summary: need at least 10 evaluations, got " + std::to_string(n));
  AnnealingSummary a;
  a.window = n / 10;
  for (std::size_t i = 0; i < a.window; ++i) {
    const auto& f = log.records[i];
    const auto& l = log.records[n - a.window + i];
    a.bc_first += f.bc_proportion;
    a.bc_last += l.bc_proportion;
    a.sigma_q_first += f.sigma_q_mean;
    a.sigma_q_last += l.sigma_q_mean;
  }
  const double w = static_cast<double>(a.window);
  a.bc_first /= w;
  a.bc_last /= w;
  a.sigma_q_first /= w;
  a.sigma_q_last /= w;
  return a;
}

inline nlohmann::json to_json(const AnnealingSummary& a) {
  return {{"bc_first_decile_mean", a.bc_first},
          {"bc_last_decile_mean", a.bc_last},
          {"sigma_q_first_decile_mean", a.sigma_q_first},
          {"sigma_q_last_decile_mean", a.sigma_q_last},
          {"window", a.window}};
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {
inline std::string csv_number(double x) {
  if (std::isnan(x)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}
}  // namespace detail

inline std::string to_csv(const FinetuneLog& log) {
  std::string out = std::string(kFinetuneCsvHeader) + "\n";
  for (const auto& r : log.records) {
    out += std::to_string(r.env_step);
    for (double x : {r.eval_return_mean, r.eval_return_ci95, r.normalized_score, r.bc_proportion, r.sigma_q_mean,
                     r.critic_loss, r.actor_loss})
      out += "," + detail::csv_number(x);
    out += "\n";
  }
  return out;
}

inline void write_finetune_csv(const std::string& path, const FinetuneLog& log) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << to_csv(log);
  if (!f) throw IoError("write failed: " + path);
}

inline FinetuneLog read_finetune_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != kFinetuneCsvHeader) throw IoError(path + ": unexpected CSV header");
  FinetuneLog log;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw IoError(path + ":" + std::to_string(lineno) + ": expected 8 columns");
    auto num = [&](int i) {
      try {
        return cells[i] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[i]);
      } catch (const std::exception&) {
        throw IoError(path + ":" + std::to_string(lineno) + ": bad number '" + cells[i] + "'");
      }
    };
    MetricsRecord r;
    r.env_step = static_cast<std::size_t>(num(0));
    r.eval_return_mean = num(1);
    r.eval_return_ci95 = num(2);
    r.normalized_score = num(3);
    r.bc_proportion = num(4);
    r.sigma_q_mean = num(5);
    r.critic_loss = num(6);
    r.actor_loss = num(7);
    log.records.push_back(r);
  }
  return log;
}

}  // namespace psw
