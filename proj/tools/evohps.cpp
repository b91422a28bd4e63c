#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evohps/commands.hpp"

namespace {

void add_common(CLI::App* cmd, evohps::CommonFlags& flags) {
  cmd->add_option("--set", flags.sets, "Override a config key (KEY=VALUE), repeatable");
  cmd->add_option("--seed", flags.seed, "Master seed");
  cmd->add_option("--out", flags.out_root, "Output root (default $EVOHPS_OUT or .)");
  cmd->add_option("--method", flags.method, "ga, bo or random");
  cmd->add_option("--budget", flags.budget, "Evaluation budget for bo or random");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolutionary and Bayesian hyperparameter search for small RL agents"};
  app.require_subcommand(1);

  evohps::CommonFlags search_flags;
  std::string search_config;
  auto* search = app.add_subcommand("search", "Run a hyperparameter search");
  search->add_option("--config", search_config, "Experiment file")->required();
  add_common(search, search_flags);
  search->add_option("--workers", search_flags.workers, "Worker threads");

  evohps::EvaluateOptions eval_opts;
  auto* evaluate = app.add_subcommand("evaluate", "Replay a saved model");
  evaluate->add_option("model", eval_opts.model_path, "Model file")->required();
  evaluate->add_option("--env", eval_opts.env, "Environment id (default: from the run directory)");
  evaluate->add_option("--episodes", eval_opts.episodes, "Evaluation episodes");
  evaluate->add_option("--seed", eval_opts.seed, "Evaluation seed");
  evaluate->add_option("--step-cap", eval_opts.step_cap, "Steps per episode");
  evaluate->add_option("--trace", eval_opts.trace_path, "Write (state, action, reward) lines here");

  std::vector<std::string> compare_dirs;
  std::string compare_out = "compare.csv";
  auto* compare = app.add_subcommand("compare", "Compare runs by training episodes to best fitness");
  compare->add_option("runs", compare_dirs, "Run directories")->required();
  compare->add_option("--out", compare_out, "Merged curve file");

  evohps::CommonFlags bench_flags;
  std::string bench_config;
  std::vector<int> bench_workers{1};
  auto* bench = app.add_subcommand("bench", "Time one search at several worker counts");
  bench->add_option("--config", bench_config, "Experiment file")->required();
  add_common(bench, bench_flags);
  bench->add_option("--workers", bench_workers, "Worker counts, e.g. 1,2,4")->delimiter(',');

  std::string resume_dir;
  std::optional<int> resume_workers;
  auto* resume = app.add_subcommand("resume", "Finish an interrupted run");
  resume->add_option("run_dir", resume_dir, "Run directory")->required();
  resume->add_option("--workers", resume_workers, "Worker threads");

  CLI11_PARSE(app, argc, argv);

  if (*search) return evohps::cmd_search(search_config, search_flags, std::cout, std::cerr);
  if (*evaluate) return evohps::cmd_evaluate(eval_opts, std::cout, std::cerr);
  if (*compare) return evohps::cmd_compare(compare_dirs, compare_out, std::cout, std::cerr);
  if (*bench) return evohps::cmd_bench(bench_config, bench_workers, bench_flags, std::cout, std::cerr);
  if (*resume) return evohps::cmd_resume(resume_dir, resume_workers, std::cout, std::cerr);
  return 1;
}
