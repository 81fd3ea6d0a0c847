// psw: dataset generation, offline training, evaluation, fine-tuning, alpha
// sweeps and reports for the policy-switching toolkit.

#include <malloc.h>

#include <CLI11.hpp>
#include <iostream>

#include "psw/experiment.hpp"

using namespace psw;

namespace {

void print_reports(const std::vector<EvalReport>& reps, const std::vector<std::uint64_t>& seeds) {
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto n = reps[i].normalized();
    std::cout << "seed " << seeds[i] << ": normalized " << detail::fmt(n.mean) << " ± " << detail::fmt(n.ci95)
              << "  bc usage " << detail::fmt(reps[i].bc_proportion(), 3) << "  sigma_q "
              << detail::fmt(reps[i].sigma_q_mean(), 4) << "\n";
  }
  std::cout << "all seeds: " << format_ci(across_seeds(reps)) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  // Keep Eigen's per-batch temporaries out of mmap; the churn otherwise
  // dominates runtime for these small matrices.
  mallopt(M_MMAP_THRESHOLD, 1 << 28);
  mallopt(M_TRIM_THRESHOLD, 1 << 28);

  CLI::App app{"Offline RL policy switching between TD3-N and behavioural cloning"};
  app.require_subcommand(1);
  app.footer(std::string("Relative output paths are resolved under $") + kOutputRootVar + " when it is set.");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a dataset with a scripted controller");
  std::string gen_env = std::string(kDenseEnvId), gen_tier = "expert", gen_out;
  std::size_t gen_n = 100000;
  std::uint64_t gen_seed = 1;
  gen->add_option("--env", gen_env, "Environment id")->capture_default_str();
  gen->add_option("--tier", gen_tier, "random|medium|expert|medium-replay|partial")->capture_default_str();
  gen->add_option("--n", gen_n, "Minimum number of transitions")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output .jsonl path (default: data/<env>-<tier>-<seed>.jsonl)");

  // train
  auto* train = app.add_subcommand("train", "Train TD3-N and BC offline and evaluate three selectors");
  std::string train_cfg, train_out, train_mode, train_data;
  std::vector<std::uint64_t> train_seeds;
  train->add_option("--config", train_cfg, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Override output_dir");
  train->add_option("--dataset", train_data, "Train on this .jsonl dataset instead of generating one")
      ->check(CLI::ExistingFile);
  train->add_option("--seeds", train_seeds, "Override the seed list");
  train->add_option("--switch-mode", train_mode, "adaptive|fixed_half");

  // eval
  auto* ev = app.add_subcommand("eval", "Re-evaluate a trained run");
  std::string ev_run, ev_sel = "switched", ev_mode, ev_tag;
  std::optional<double> ev_m, ev_alpha;
  std::optional<int> ev_eps;
  ev->add_option("--run", ev_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--selector", ev_sel, "switched|rl|bc")->capture_default_str();
  ev->add_option("--switch-mode", ev_mode, "adaptive|fixed_half");
  ev->add_option("--m", ev_m, "Penalty cap override");
  ev->add_option("--alpha", ev_alpha, "Sensitivity override");
  ev->add_option("--episodes", ev_eps, "Episodes per seed");
  ev->add_option("--tag", ev_tag, "Write seed_<k>/eval_<tag>.json for each seed");

  // finetune
  auto* ft = app.add_subcommand("finetune", "Fine-tune the RL agent online with the frozen BC policy");
  std::string ft_run;
  FinetuneOverrides ft_o;
  ft->add_option("--run", ft_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  ft->add_option("--online-steps", ft_o.online_steps, "Environment steps");
  ft->add_option("--eval-every", ft_o.eval_every, "Evaluation period in environment steps");
  ft->add_option("--eval-episodes", ft_o.eval_episodes, "Episodes per evaluation");

  // sweep-alpha
  auto* sw = app.add_subcommand("sweep-alpha", "Re-evaluate the switched selector over a list of alpha values");
  std::string sw_run;
  std::vector<double> sw_alphas;
  std::optional<double> sw_m;
  sw->add_option("--run", sw_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  sw->add_option("--alphas", sw_alphas, "Alpha values")->required()->delimiter(',');
  sw->add_option("--m", sw_m, "Penalty cap override");

  // report
  auto* rep = app.add_subcommand("report", "Summary table and SVG charts for one environment");
  std::vector<std::string> rep_runs;
  std::string rep_out = "report";
  rep->add_option("--runs", rep_runs, "Run directories")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--out", rep_out, "Output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const Tier tier = parse_tier(gen_tier);
      if (gen_out.empty()) gen_out = "data/" + gen_env + "-" + gen_tier + "-" + std::to_string(gen_seed) + ".jsonl";
      const auto r = cmd_gen_data(gen_env, tier, gen_n, gen_seed, gen_out);
      std::cout << "wrote " << resolve_output(gen_out).string() << " (" << r.dataset.trajectories.size()
                << " trajectories, " << r.dataset.transition_count() << " transitions)\n"
                << "sigma_D returns " << detail::fmt(r.sigma_d_returns, 6) << "\n"
                << "sigma_D lengths " << detail::fmt(r.sigma_d_lengths, 6) << "\n";
    } else if (*train) {
      auto cfg = load_experiment_config(train_cfg);
      if (!train_out.empty()) cfg.output_dir = train_out;
      if (!train_data.empty()) cfg.dataset.path = train_data;
      if (!train_seeds.empty()) cfg.seeds = train_seeds;
      if (!train_mode.empty()) cfg.sw.mode = parse_switch_mode(train_mode);
      const auto run = cmd_train(cfg, &std::cerr);
      std::cout << run.string() << "\n";
    } else if (*ev) {
      const auto run = open_run(ev_run);
      EvalOverrides o;
      o.m = ev_m;
      o.alpha = ev_alpha;
      o.episodes = ev_eps;
      if (!ev_mode.empty()) o.mode = parse_switch_mode(ev_mode);
      const auto reps = evaluate_run(run, parse_selector(ev_sel), o);
      print_reports(reps, run.config.seeds);
      if (!ev_tag.empty())
        for (std::size_t i = 0; i < reps.size(); ++i)
          detail::write_json(seed_dir(run.dir, run.config.seeds[i]) / ("eval_" + ev_tag + ".json"), to_json(reps[i]));
    } else if (*ft) {
      cmd_finetune(ft_run, ft_o, &std::cerr);
    } else if (*sw) {
      const auto rows = cmd_sweep_alpha(sw_run, sw_alphas, sw_m);
      std::cout << "alpha      f       score\n";
      for (const auto& r : rows)
        std::cout << detail::fmt(r.alpha, 4) << "  " << detail::fmt(r.penalty, 4) << "  " << format_ci(r.score) << "\n";
    } else if (*rep) {
      std::vector<fs::path> dirs(rep_runs.begin(), rep_runs.end());
      const auto out = resolve_output(rep_out);
      const auto rows = cmd_report(dirs, out);
      std::cout << "wrote " << (out / "report.md").string() << " (" << rows.size() << " rows)\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
