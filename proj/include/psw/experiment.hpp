#pragma once

// Experiment orchestration behind the CLI: config parsing, run directories,
// training, re-evaluation, fine-tuning, alpha sweeps and reports.
//
// Run directory layout:
//   config.json            resolved config (switch settings include sigma_D)
//   sigma_d.json
//   seed_<k>/checkpoint/   agent checkpoints after offline training
//   seed_<k>/train_log.csv
//   seed_<k>/eval_{bc,rl,switched}.json
//   seed_<k>/timing.json   wallclock only; excluded from determinism checks
//   seed_<k>/finetune.csv, annealing.json, finetune_checkpoint/   after finetune

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "psw/agents.hpp"
#include "psw/data.hpp"
#include "psw/envs.hpp"
#include "psw/error.hpp"
#include "psw/finetune.hpp"
#include "psw/stats.hpp"
#include "psw/svg.hpp"
#include "psw/switching.hpp"

namespace psw {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootVar = "PSW_OUTPUT_ROOT";

/// Relative paths are placed under $PSW_OUTPUT_ROOT when it is set.
inline fs::path resolve_output(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootVar); root && *root) return fs::path(root) / p;
  }
  return p;
}

struct DatasetSource {
  std::string path;  // JSON-lines file; when empty the dataset is generated
  Tier tier = Tier::Expert;
  std::size_t n_transitions = 100000;
  std::uint64_t seed = 1;
};

struct SwitchSettings {
  double m = 4.0;
  std::optional<double> alpha;  // default depends on the measure
  std::optional<SigmaMeasure> measure;  // default depends on the reward kind
  std::optional<double> sigma_d;  // computed from the dataset when absent
  SwitchMode mode = SwitchMode::Adaptive;
};

struct TrainSettings {
  std::size_t n_steps = 50000;
  std::size_t log_every = 1000;
  int eval_episodes = 10;
};

struct ExperimentConfig {
  std::string env_id = std::string(kDenseEnvId);
  DatasetSource dataset;
  Td3nConfig td3n;
  BcConfig bc;
  SwitchSettings sw;
  TrainSettings train;
  FinetuneConfig finetune;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs/default";
};

namespace detail {

class ErrorList {
 public:
  void add(std::string msg) { errors_.push_back(std::move(msg)); }
  template <class F>
  void guard(const std::string& where, F&& f) {
    try {
      f();
    } catch (const nlohmann::json::exception& e) {
      add(where + ": " + e.what());
    } catch (const ConfigError& e) {
      add(where + ": " + e.what());
    }
  }
  void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) {
      add(where + ": expected an object");
      return;
    }
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
      if (!ok.count(k)) add(where + ": unknown key '" + k + "'");
  }
  void throw_if_any() const {
    if (errors_.empty()) return;
    std::string msg = std::to_string(errors_.size()) + " config error(s):";
    for (const auto& e : errors_) msg += "\n  - " + e;
    throw ConfigError(msg);
  }

 private:
  std::vector<std::string> errors_;
};

}  // namespace detail

/// Parses and validates a config, reporting every problem in one ConfigError.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::ErrorList err;
  ExperimentConfig c;
  err.check_keys(j, "config",
                 {"env", "dataset", "td3n", "bc", "switch", "train", "finetune", "seeds", "output_dir"});
  if (!j.is_object()) err.throw_if_any();

  err.guard("env", [&] {
    if (j.contains("env")) c.env_id = j.at("env").get<std::string>();
    env_spec(c.env_id);
  });
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    err.check_keys(d, "dataset", {"path", "tier", "n_transitions", "seed"});
    err.guard("dataset", [&] {
      if (d.contains("path")) c.dataset.path = d.at("path").get<std::string>();
      if (d.contains("tier")) c.dataset.tier = parse_tier(d.at("tier").get<std::string>());
      if (d.contains("n_transitions")) c.dataset.n_transitions = d.at("n_transitions").get<std::size_t>();
      if (d.contains("seed")) c.dataset.seed = d.at("seed").get<std::uint64_t>();
    });
    if (!c.dataset.path.empty() && !fs::exists(c.dataset.path))
      err.add("dataset.path: file not found: " + c.dataset.path);
  }
  err.guard("td3n", [&] {
    if (j.contains("td3n")) c.td3n = td3n_config_from_json(j.at("td3n"));
    c.td3n.validate();
  });
  err.guard("bc", [&] {
    if (j.contains("bc")) c.bc = bc_config_from_json(j.at("bc"));
    c.bc.validate();
  });
  if (j.contains("switch")) {
    const auto& s = j.at("switch");
    err.check_keys(s, "switch", {"m", "alpha", "measure", "sigma_d", "mode"});
    err.guard("switch", [&] {
      if (s.contains("m")) c.sw.m = s.at("m").get<double>();
      if (s.contains("alpha") && !s.at("alpha").is_null()) c.sw.alpha = s.at("alpha").get<double>();
      if (s.contains("measure") && !s.at("measure").is_null())
        c.sw.measure = parse_measure(s.at("measure").get<std::string>());
      if (s.contains("sigma_d") && !s.at("sigma_d").is_null()) c.sw.sigma_d = s.at("sigma_d").get<double>();
      if (s.contains("mode")) c.sw.mode = parse_switch_mode(s.at("mode").get<std::string>());
    });
    if (!(c.sw.m >= 0.0)) err.add("switch.m: must be >= 0");
    if (c.sw.alpha && !(*c.sw.alpha > 0.0)) err.add("switch.alpha: must be > 0");
    if (c.sw.sigma_d && !(*c.sw.sigma_d >= 0.0)) err.add("switch.sigma_d: must be >= 0");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    err.check_keys(t, "train", {"n_steps", "log_every", "eval_episodes"});
    err.guard("train", [&] {
      if (t.contains("n_steps")) c.train.n_steps = t.at("n_steps").get<std::size_t>();
      if (t.contains("log_every")) c.train.log_every = t.at("log_every").get<std::size_t>();
      if (t.contains("eval_episodes")) c.train.eval_episodes = t.at("eval_episodes").get<int>();
    });
    if (c.train.log_every < 1) err.add("train.log_every: must be >= 1");
    if (c.train.eval_episodes < 1) err.add("train.eval_episodes: must be >= 1");
  }
  if (j.contains("finetune")) {
    err.check_keys(j.at("finetune"), "finetune",
                   {"online_steps", "eval_every", "warmup_steps", "updates_per_env_step", "eval_episodes"});
    err.guard("finetune", [&] { c.finetune = finetune_config_from_json(j.at("finetune")); });
  }
  err.guard("finetune", [&] { c.finetune.validate(); });
  err.guard("seeds", [&] {
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  });
  if (c.seeds.empty()) err.add("seeds: must not be empty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    err.add("seeds: duplicates are not allowed");
  err.guard("output_dir", [&] {
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  });
  if (c.output_dir.empty()) err.add("output_dir: must not be empty");
  if (c.dataset.tier == Tier::Partial && c.dataset.path.empty() && c.env_id == kDenseEnvId)
    err.add("dataset.tier: 'partial' is only defined for " + std::string(kMazeEnvId));
  err.throw_if_any();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

/// The config as echoed into run directories. The output location is left
/// out so identical experiments produce identical files wherever they run.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json sw = {{"m", c.sw.m}, {"mode", to_string(c.sw.mode)}};
  sw["alpha"] = c.sw.alpha ? nlohmann::json(*c.sw.alpha) : nlohmann::json(nullptr);
  sw["measure"] = c.sw.measure ? nlohmann::json(to_string(*c.sw.measure)) : nlohmann::json(nullptr);
  sw["sigma_d"] = c.sw.sigma_d ? nlohmann::json(*c.sw.sigma_d) : nlohmann::json(nullptr);
  nlohmann::json ds = {{"tier", to_string(c.dataset.tier)},
                       {"n_transitions", c.dataset.n_transitions},
                       {"seed", c.dataset.seed}};
  if (!c.dataset.path.empty()) ds["path"] = c.dataset.path;
  return {{"env", c.env_id},
          {"dataset", ds},
          {"td3n", to_json(c.td3n)},
          {"bc", to_json(c.bc)},
          {"switch", sw},
          {"train",
           {{"n_steps", c.train.n_steps}, {"log_every", c.train.log_every}, {"eval_episodes", c.train.eval_episodes}}},
          {"finetune", to_json(c.finetune)},
          {"seeds", c.seeds}};
}

// ---------------------------------------------------------------------------
// Small IO helpers

namespace detail {

inline void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
  if (!f) throw IoError("write failed: " + p.string());
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("missing file: " + p.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

inline std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace detail

inline fs::path seed_dir(const fs::path& run, std::uint64_t seed) { return run / ("seed_" + std::to_string(seed)); }

inline std::uint64_t eval_seed_for(std::uint64_t seed) { return mix_seed(seed, stream::kEval); }

inline Dataset load_or_generate(const ExperimentConfig& c) {
  if (!c.dataset.path.empty()) {
    Dataset d = read_dataset(c.dataset.path);
    if (d.meta.env_id != c.env_id)
      throw ConfigError("dataset " + c.dataset.path + " was generated for '" + d.meta.env_id + "', config env is '" +
                        c.env_id + "'");
    return d;
  }
  return generate_dataset(c.env_id, c.dataset.tier, c.dataset.n_transitions, c.dataset.seed);
}

/// Fills in the measure, alpha and sigma_D left open in the settings.
inline SwitchConfig resolve_switch(const SwitchSettings& s, const EnvSpec& spec, const Dataset* data) {
  SwitchConfig c;
  c.m = s.m;
  c.mode = s.mode;
  c.measure = s.measure.value_or(spec.reward_kind == RewardKind::Dense ? SigmaMeasure::Returns : SigmaMeasure::Lengths);
  c.alpha = s.alpha.value_or(SwitchConfig::default_alpha(c.measure));
  if (s.sigma_d) {
    c.sigma_d = *s.sigma_d;
  } else {
    if (!data) throw ConfigError("resolve_switch: sigma_d unknown and no dataset given");
    c.sigma_d = sigma_d(*data, c.measure, spec.horizon);
  }
  c.validate();
  return c;
}

struct RunContext {
  fs::path dir;
  ExperimentConfig config;  // as echoed, switch fully resolved
  SwitchConfig sw;
};

inline RunContext open_run(const fs::path& dir) {
  const fs::path cfg = dir / "config.json";
  if (!fs::exists(cfg)) throw IoError("not a run directory (missing " + cfg.string() + ")");
  RunContext r;
  r.dir = dir;
  r.config = parse_experiment_config(detail::read_json(cfg));
  r.sw = resolve_switch(r.config.sw, env_spec(r.config.env_id), nullptr);
  return r;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataResult {
  Dataset dataset;
  double sigma_d_returns = 0.0;
  double sigma_d_lengths = 0.0;
};

inline GenDataResult cmd_gen_data(const std::string& env_id, Tier tier, std::size_t n, std::uint64_t seed,
                                  const std::string& out_path) {
  GenDataResult r;
  r.dataset = generate_dataset(env_id, tier, n, seed);
  r.sigma_d_returns = sigma_d_returns(r.dataset);
  r.sigma_d_lengths = sigma_d_lengths(r.dataset, env_spec(env_id).horizon);
  write_dataset(resolve_output(out_path).string(), r.dataset);
  return r;
}

// ---------------------------------------------------------------------------
// train

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::string out = "step,critic_loss,actor_loss,bc_loss\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + detail::csv_number(r.critic_loss) + "," + detail::csv_number(r.actor_loss) +
           "," + detail::csv_number(r.bc_loss) + "\n";
  return out;
}

inline const char* eval_file_name(Selector s) {
  switch (s) {
    case Selector::BcOnly: return "eval_bc.json";
    case Selector::RlOnly: return "eval_rl.json";
    case Selector::Switched: return "eval_switched.json";
  }
  return "eval.json";
}

/// Offline training for every seed; returns the run directory.
inline fs::path cmd_train(ExperimentConfig cfg, std::ostream* progress = nullptr) {
  const fs::path run = resolve_output(cfg.output_dir);
  const PointMassEnv env = make_env(cfg.env_id);
  const auto& spec = env.spec();
  const Dataset data = load_or_generate(cfg);
  const SwitchConfig sw = resolve_switch(cfg.sw, spec, &data);
  cfg.sw.alpha = sw.alpha;
  cfg.sw.measure = sw.measure;
  cfg.sw.sigma_d = sw.sigma_d;

  fs::create_directories(run);
  detail::write_json(run / "config.json", to_json(cfg));
  detail::write_json(run / "sigma_d.json", {{"returns", sigma_d_returns(data)},
                                            {"lengths", sigma_d_lengths(data, spec.horizon)},
                                            {"measure", to_string(sw.measure)},
                                            {"value", sw.sigma_d},
                                            {"penalty", f_penalty(sw)}});
  const ReplayBuffer buffer = buffer_from_dataset(data);
  for (const auto seed : cfg.seeds) {
    const fs::path sd = seed_dir(run, seed);
    fs::create_directories(sd);
    const auto t0 = std::chrono::steady_clock::now();
    Td3nAgent agent(spec.state_dim, spec.action_dim, spec.action_bound, cfg.td3n, seed);
    GaussianPolicy bc(spec.state_dim, spec.action_dim, spec.action_bound, cfg.bc, seed);
    TrainOptions opt;
    opt.n_steps = cfg.train.n_steps;
    opt.log_every = cfg.train.log_every;
    const auto log = train_offline(agent, bc, buffer, opt, seed);
    const auto t1 = std::chrono::steady_clock::now();
    save_checkpoint((sd / "checkpoint").string(), agent, bc);
    detail::write_text(sd / "train_log.csv", train_log_csv(log));
    nlohmann::json summary;
    for (const auto sel : {Selector::BcOnly, Selector::RlOnly, Selector::Switched}) {
      const auto rep = evaluate(env, agent, bc, sw, cfg.train.eval_episodes, eval_seed_for(seed), sel);
      detail::write_json(sd / eval_file_name(sel), to_json(rep));
      summary[to_string(sel)] = rep.normalized().mean;
    }
    const auto t2 = std::chrono::steady_clock::now();
    detail::write_json(sd / "timing.json", {{"train_seconds", std::chrono::duration<double>(t1 - t0).count()},
                                            {"eval_seconds", std::chrono::duration<double>(t2 - t1).count()}});
    if (progress)
      *progress << "seed " << seed << ": bc " << detail::fmt(summary["bc"]) << "  rl " << detail::fmt(summary["rl"])
                << "  switched " << detail::fmt(summary["switched"]) << "  ("
                << detail::fmt(std::chrono::duration<double>(t2 - t0).count(), 1) << " s)\n";
  }
  return run;
}

// ---------------------------------------------------------------------------
// eval / sweep

struct EvalOverrides {
  std::optional<double> m;
  std::optional<double> alpha;
  std::optional<SwitchMode> mode;
  std::optional<int> episodes;
};

inline SwitchConfig apply_overrides(SwitchConfig sw, const EvalOverrides& o) {
  if (o.m) sw.m = *o.m;
  if (o.alpha) sw.alpha = *o.alpha;
  if (o.mode) sw.mode = *o.mode;
  sw.validate();
  return sw;
}

/// Re-evaluates saved checkpoints; checkpoints are only read.
inline std::vector<EvalReport> evaluate_run(const RunContext& run, Selector sel, const EvalOverrides& o = {}) {
  const PointMassEnv env = make_env(run.config.env_id);
  const SwitchConfig sw = apply_overrides(run.sw, o);
  const int episodes = o.episodes.value_or(run.config.train.eval_episodes);
  std::vector<EvalReport> out;
  for (const auto seed : run.config.seeds) {
    const auto agents = load_checkpoint((seed_dir(run.dir, seed) / "checkpoint").string());
    out.push_back(evaluate(env, agents.agent, agents.bc, sw, episodes, eval_seed_for(seed), sel));
  }
  return out;
}

/// Mean and CI over per-seed means of the normalized score.
inline MeanCi across_seeds(const std::vector<EvalReport>& reps) {
  std::vector<double> means;
  for (const auto& r : reps) means.push_back(r.normalized().mean);
  return mean_ci(means);
}

inline std::string format_ci(const MeanCi& m) {
  return detail::fmt(m.mean) + " ± " + (m.n < 2 ? std::string("n/a") : detail::fmt(m.ci95));
}

struct SweepRow {
  double alpha = 0.0;
  double m = 0.0;
  double penalty = 0.0;
  MeanCi score;
  double bc_proportion = 0.0;
};

inline std::vector<SweepRow> cmd_sweep_alpha(const fs::path& run_dir, const std::vector<double>& alphas,
                                             std::optional<double> m = std::nullopt) {
  if (alphas.empty()) throw ConfigError("sweep-alpha: the alpha list is empty");
  const RunContext run = open_run(run_dir);
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    EvalOverrides o;
    o.alpha = a;
    o.m = m;
    const auto reps = evaluate_run(run, Selector::Switched, o);
    SweepRow r;
    r.alpha = a;
    r.m = reps.front().config.m;
    r.penalty = reps.front().penalty;
    r.score = across_seeds(reps);
    std::vector<double> bcp;
    for (const auto& rep : reps) bcp.push_back(rep.bc_proportion());
    r.bc_proportion = mean(bcp);
    rows.push_back(r);
  }
  std::string md = "| alpha | m | f(sigma_D) | normalized score | BC usage |\n|---|---|---|---|---|\n";
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    md += "| " + detail::fmt(r.alpha, 4) + " | " + detail::fmt(r.m, 3) + " | " + detail::fmt(r.penalty, 4) + " | " +
          format_ci(r.score) + " | " + detail::fmt(r.bc_proportion, 3) + " |\n";
    j.push_back({{"alpha", r.alpha},
                 {"m", r.m},
                 {"penalty", r.penalty},
                 {"normalized_mean", r.score.mean},
                 {"normalized_ci95", r.score.ci95},
                 {"bc_proportion", r.bc_proportion}});
  }
  detail::write_text(run_dir / "sweep_alpha.md", md);
  detail::write_json(run_dir / "sweep_alpha.json", j);
  return rows;
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneOverrides {
  std::optional<std::size_t> online_steps;
  std::optional<std::size_t> eval_every;
  std::optional<int> eval_episodes;
};

inline void cmd_finetune(const fs::path& run_dir, const FinetuneOverrides& o = {}, std::ostream* progress = nullptr) {
  const RunContext run = open_run(run_dir);
  FinetuneConfig fc = run.config.finetune;
  if (o.online_steps) fc.online_steps = *o.online_steps;
  if (o.eval_every) fc.eval_every = *o.eval_every;
  if (o.eval_episodes) fc.eval_episodes = *o.eval_episodes;
  fc.validate();
  // Checkpoints are checked up front so a missing file fails before any work.
  std::vector<LoadedAgents> loaded;
  for (const auto seed : run.config.seeds) loaded.push_back(load_checkpoint((seed_dir(run_dir, seed) / "checkpoint").string()));

  const PointMassEnv env = make_env(run.config.env_id);
  const Dataset data = load_or_generate(run.config);
  for (std::size_t k = 0; k < run.config.seeds.size(); ++k) {
    const auto seed = run.config.seeds[k];
    const fs::path sd = seed_dir(run_dir, seed);
    auto& [agent, bc] = loaded[k];
    ReplayBuffer buffer = buffer_from_dataset(data);
    fc.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    const auto log = finetune_run(agent, bc, env, buffer, run.sw, fc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_finetune_csv((sd / "finetune.csv").string(), log);
    nlohmann::json ann;
    if (log.records.size() >= 10) {
      ann = to_json(annealing_summary(log));
      ann["available"] = true;
    } else {
      ann = {{"available", false}, {"reason", "fewer than 10 evaluations"}};
    }
    ann["evaluations"] = log.records.size();
    detail::write_json(sd / "annealing.json", ann);
    save_checkpoint((sd / "finetune_checkpoint").string(), agent, bc);
    nlohmann::json timing = fs::exists(sd / "timing.json") ? detail::read_json(sd / "timing.json") : nlohmann::json::object();
    timing["finetune_seconds"] = secs;
    detail::write_json(sd / "timing.json", timing);
    if (progress)
      *progress << "seed " << seed << ": first " << detail::fmt(log.records.front().normalized_score) << "  final "
                << detail::fmt(log.records.back().normalized_score) << "  bc usage "
                << detail::fmt(log.records.front().bc_proportion, 3) << " -> "
                << detail::fmt(log.records.back().bc_proportion, 3) << "  (" << detail::fmt(secs, 1) << " s)\n";
  }
}

// ---------------------------------------------------------------------------
// report

inline std::string run_label(const RunContext& r) {
  std::string label = r.config.dataset.path.empty() ? to_string(r.config.dataset.tier)
                                                     : fs::path(r.config.dataset.path).stem().string();
  if (r.sw.mode == SwitchMode::FixedHalf) label += " (fixed m/2)";
  return label;
}

struct ReportRow {
  std::string label;
  std::string env_id;
  MeanCi bc, rl, switched;
  double bc_usage = 0.0;
  double sigma_d = 0.0;
  std::size_t seeds = 0;
};

inline std::vector<EvalReport> read_reports(const RunContext& run, Selector sel) {
  std::vector<EvalReport> reps;
  for (const auto seed : run.config.seeds)
    reps.push_back(eval_report_from_json(detail::read_json(seed_dir(run.dir, seed) / eval_file_name(sel))));
  return reps;
}

/// Writes report.md, report.json and SVG charts into out_dir.
inline std::vector<ReportRow> cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::vector<RunContext> runs;
  for (const auto& d : run_dirs) runs.push_back(open_run(d));
  for (const auto& r : runs)
    if (r.config.env_id != runs.front().config.env_id)
      throw ConfigError("report: mixed env ids in one table ('" + runs.front().config.env_id + "' and '" +
                        r.config.env_id + "')");

  std::vector<ReportRow> rows;
  for (const auto& r : runs) {
    ReportRow row;
    row.label = run_label(r);
    row.env_id = r.config.env_id;
    row.bc = across_seeds(read_reports(r, Selector::BcOnly));
    row.rl = across_seeds(read_reports(r, Selector::RlOnly));
    const auto sw = read_reports(r, Selector::Switched);
    row.switched = across_seeds(sw);
    std::vector<double> usage;
    for (const auto& rep : sw) usage.push_back(rep.bc_proportion());
    row.bc_usage = mean(usage);
    row.sigma_d = r.sw.sigma_d;
    row.seeds = r.config.seeds.size();
    rows.push_back(row);
  }

  std::string md = "# " + runs.front().config.env_id + "\n\nNormalized score, mean ± 95% CI over seeds.\n\n";
  md += "| dataset | BC | TD3-N | TD3-N+BC (PS) | BC usage | sigma_D | seeds |\n|---|---|---|---|---|---|---|\n";
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    md += "| " + r.label + " | " + format_ci(r.bc) + " | " + format_ci(r.rl) + " | " + format_ci(r.switched) + " | " +
          detail::fmt(r.bc_usage, 3) + " | " + detail::fmt(r.sigma_d, 4) + " | " + std::to_string(r.seeds) + " |\n";
    auto cell = [](const MeanCi& m) { return nlohmann::json{{"mean", m.mean}, {"ci95", m.ci95}, {"n", m.n}}; };
    j.push_back({{"label", r.label},
                 {"env_id", r.env_id},
                 {"bc", cell(r.bc)},
                 {"rl", cell(r.rl)},
                 {"switched", cell(r.switched)},
                 {"bc_usage", r.bc_usage},
                 {"sigma_d", r.sigma_d},
                 {"seeds", r.seeds}});
  }

  // Fine-tuning curves, averaged over the seeds that have a log.
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& run = runs[i];
    std::vector<FinetuneLog> logs;
    for (const auto seed : run.config.seeds) {
      const auto p = seed_dir(run.dir, seed) / "finetune.csv";
      if (fs::exists(p)) logs.push_back(read_finetune_csv(p.string()));
    }
    if (logs.empty()) continue;
    std::size_t n = logs.front().records.size();
    for (const auto& l : logs) n = std::min(n, l.records.size());
    svg::Series score{"normalized score", {}, {}, false};
    svg::Series sq{"mean sigma_Q", {}, {}, false};
    svg::Series bcp{"BC proportion", {}, {}, true};
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0, q = 0, b = 0;
      for (const auto& l : logs) {
        s += l.records[k].normalized_score;
        q += l.records[k].sigma_q_mean;
        b += l.records[k].bc_proportion;
      }
      const double x = static_cast<double>(logs.front().records[k].env_step);
      const double w = static_cast<double>(logs.size());
      score.x.push_back(x);
      score.y.push_back(s / w);
      sq.x.push_back(x);
      sq.y.push_back(q / w);
      bcp.x.push_back(x);
      bcp.y.push_back(b / w);
    }
    const std::string stem = "finetune_" + std::to_string(i);
    svg::Chart ret{run_label(run) + ": fine-tuning return", "environment steps", "normalized score", "", {score}};
    svg::Chart diag{run_label(run) + ": uncertainty and BC usage", "environment steps", "mean sigma_Q",
                    "BC proportion", {sq, bcp}};
    detail::write_text(out_dir / (stem + "_return.svg"), svg::render(ret));
    detail::write_text(out_dir / (stem + "_diagnostics.svg"), svg::render(diag));
    md += "\n![" + run_label(run) + "](" + stem + "_return.svg)\n![" + run_label(run) + "](" + stem +
          "_diagnostics.svg)\n";
  }

  detail::write_text(out_dir / "report.md", md);
  detail::write_json(out_dir / "report.json", j);
  return rows;
}

}  // namespace psw
