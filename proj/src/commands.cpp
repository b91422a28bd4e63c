#include "evohps/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "evohps/envs.hpp"
#include "evohps/net.hpp"
#include "evohps/orchestrator.hpp"
#include "evohps/rlalgos.hpp"

namespace evohps {

namespace fs = std::filesystem;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string resolve_out_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("EVOHPS_OUT"); env && *env) return env;
  return ".";
}

std::vector<std::string> apply_flags(ExperimentConfig& config, const CommonFlags& flags) {
  std::vector<std::pair<std::string, std::string>> settings;
  for (const auto& s : flags.sets) settings.push_back(split_assignment(s));
  if (flags.method) settings.emplace_back("method", *flags.method);
  if (flags.seed) settings.emplace_back("seed", std::to_string(*flags.seed));
  if (flags.workers) settings.emplace_back("workers", std::to_string(*flags.workers));

  std::vector<std::string> lines;
  for (const auto& [k, v] : settings) {
    apply_setting(config, k, v);
    lines.push_back(k + " = " + v);
  }
  // The budget flag names whichever budget the final method uses.
  if (flags.budget) {
    std::string key;
    switch (config.method) {
      case SearchMethod::BO: key = "bo.budget"; break;
      case SearchMethod::Random: key = "random.budget"; break;
      case SearchMethod::GA:
        throw ConfigError("budget", "--budget applies to bo and random; set ga.population_size and ga.generations");
    }
    apply_setting(config, key, std::to_string(*flags.budget));
    lines.push_back(key + " = " + std::to_string(*flags.budget));
  }
  return lines;
}

int cmd_search(const std::string& config_path, const CommonFlags& flags, std::ostream& out, std::ostream& err) {
  std::string text;
  ExperimentConfig config;
  try {
    text = read_text(config_path);
    config = parse_config(text);
    const auto lines = apply_flags(config, flags);
    if (!lines.empty()) {
      if (!text.empty() && text.back() != '\n') text += '\n';
      text += "# command-line overrides\n";
      for (const auto& l : lines) text += l + '\n';
    }
    validate_config(config);
  } catch (const std::exception& e) {
    err << "invalid config: " << e.what() << '\n';
    return 2;
  }
  try {
    RunOptions opt;
    opt.out_root = resolve_out_root(flags.out_root);
    opt.progress = &err;
    const RunSummary s = run_search(config, text, opt);
    out << "run directory: " << s.run_dir << '\n';
    if (!s.state.best) {
      out << "no individual evaluated successfully\n";
      return 1;
    }
    const GeneSchema schema = make_search_schema(config);
    const auto& best = *s.state.best;
    out << "best individual: generation " << best.generation << ", index " << best.individual << '\n'
        << "best gene: " << describe(best.gene, schema) << '\n'
        << std::setprecision(10) << "best fitness: " << best.record->fitness << " (n " << best.record->n
        << ", reward_sum " << best.record->reward_sum << ", loss_sum " << best.record->loss_sum << ")\n";
    if (!best.model_ref.empty()) out << "best model: " << (fs::path(s.run_dir) / best.model_ref).string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "search failed: " << e.what() << '\n';
    return 1;
  }
}

int cmd_evaluate(const EvaluateOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const MLPModel model = load_model_file(options.model_path);

    // A model saved by a search run sits in <run>/models/; its log entry
    // supplies the environment, the evaluation seed and the training loss.
    std::optional<ResultMsg> logged;
    std::optional<ExperimentConfig> run_config;
    const fs::path model_path = fs::absolute(options.model_path);
    const fs::path run_dir = model_path.parent_path().parent_path();
    if (model_path.parent_path().filename() == "models" && fs::exists(run_dir / "config")) {
      try {
        run_config = parse_config(read_text((run_dir / "config").string()));
        const auto replay = replay_log((run_dir / "results.log").string(), make_search_schema(*run_config));
        const std::string ref = (fs::path("models") / model_path.filename()).generic_string();
        for (const auto& r : replay.results) {
          if (r.model_ref == ref) logged = r;
        }
      } catch (const std::exception& e) {
        err << "note: ignoring run directory metadata: " << e.what() << '\n';
      }
    }

    std::string env_id = options.env;
    if (env_id.empty() && run_config) env_id = run_config->env;
    if (env_id.empty()) throw std::invalid_argument("no environment given (use --env)");
    auto env = make_environment(env_id);

    const int episodes = options.episodes.value_or(logged && logged->record ? logged->record->n : 10);
    const std::uint64_t seed = options.seed.value_or(logged ? evaluation_seed(logged->seed) : 0);
    const int cap = options.step_cap.value_or(run_config ? run_config->eval_step_cap : 100);

    std::ofstream trace;
    if (!options.trace_path.empty()) {
      trace.open(options.trace_path);
      if (!trace) throw std::runtime_error("cannot write trace '" + options.trace_path + "'");
    }
    const EvalResult ev = evaluate_policy(model, *env, episodes, cap, seed, nullptr,
                                          options.trace_path.empty() ? nullptr : &trace);
    out << std::setprecision(10);
    for (std::size_t k = 0; k < ev.episode_rewards.size(); ++k) {
      out << "episode " << k << " reward " << ev.episode_rewards[k] << '\n';
    }
    out << "reward_sum " << ev.reward_sum << '\n';
    double loss = std::numeric_limits<double>::infinity();
    if (logged && logged->record) {
      loss = logged->record->loss_sum;
    } else {
      out << "note: no training loss on record; loss_sum taken as inf\n";
    }
    const FitnessRecord rec = make_fitness_record(episodes, ev.reward_sum, loss);
    out << "loss_sum " << rec.loss_sum << '\n' << "fitness " << rec.fitness << '\n';
    return 0;
  } catch (const ModelParseError& e) {
    err << "cannot load model: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "evaluate failed: " << e.what() << '\n';
    return 2;
  }
}

RunCurve load_run_curve(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "config")) throw std::runtime_error("'" + run_dir + "' has no config file");
  if (!fs::exists(dir / "results.log")) throw std::runtime_error("'" + run_dir + "' has no results.log");
  const ExperimentConfig config = parse_config(read_text((dir / "config").string()));
  const auto replay = replay_log((dir / "results.log").string(), make_search_schema(config));
  if (replay.results.empty()) throw std::runtime_error("'" + run_dir + "' has no results");

  RunCurve c;
  c.run_id = config.run_id;
  c.method = std::string(to_string(config.method));
  c.algorithm = config.algorithm;
  c.env = config.env;
  long episodes = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : replay.results) {
    episodes += r.training_episodes;
    if (r.record && r.record->fitness > best) {
      best = r.record->fitness;
      c.episodes_to_best = episodes;
    }
    c.cumulative_episodes.push_back(episodes);
    c.best_so_far.push_back(best);
  }
  c.best = best;
  return c;
}

int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& merged_path, std::ostream& out,
                std::ostream& err) {
  try {
    if (run_dirs.size() < 2) throw std::invalid_argument("compare needs at least two run directories");
    for (const auto& d : run_dirs) {
      if (!fs::is_directory(d)) throw std::invalid_argument("'" + d + "' is not a directory");
    }
    std::vector<RunCurve> curves;
    for (const auto& d : run_dirs) curves.push_back(load_run_curve(d));
    for (const auto& c : curves) {
      if (c.algorithm != curves.front().algorithm || c.env != curves.front().env) {
        throw std::invalid_argument("runs differ in (algorithm, env): " + curves.front().algorithm + "/" +
                                    curves.front().env + " vs " + c.algorithm + "/" + c.env);
      }
    }

    std::ofstream merged(merged_path);
    if (!merged) throw std::runtime_error("cannot write '" + merged_path + "'");
    merged << "method,run_id,cumulative_episodes,best_so_far\n" << std::setprecision(17);
    for (const auto& c : curves) {
      for (std::size_t k = 0; k < c.best_so_far.size(); ++k) {
        merged << c.method << ',' << c.run_id << ',' << c.cumulative_episodes[k] << ',' << c.best_so_far[k] << '\n';
      }
    }

    const double reference = static_cast<double>(curves.front().episodes_to_best);
    std::vector<std::size_t> order(curves.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return curves[a].episodes_to_best < curves[b].episodes_to_best; });
    out << "method,run_id,best_fitness,episodes_to_best,ratio_to_first\n" << std::setprecision(10);
    for (std::size_t k : order) {
      const auto& c = curves[k];
      const double ratio = reference > 0 ? c.episodes_to_best / reference
                                         : (c.episodes_to_best == 0 ? 1.0 : std::numeric_limits<double>::infinity());
      out << c.method << ',' << c.run_id << ',' << c.best << ',' << c.episodes_to_best << ',' << ratio << '\n';
    }
    return 0;
  } catch (const std::exception& e) {
    err << "compare failed: " << e.what() << '\n';
    return 2;
  }
}

int cmd_bench(const std::string& config_path, const std::vector<int>& worker_counts, const CommonFlags& flags,
              std::ostream& out, std::ostream& err) {
  std::string text;
  ExperimentConfig config;
  try {
    text = read_text(config_path);
    config = parse_config(text);
    const auto lines = apply_flags(config, flags);
    if (!lines.empty()) {
      if (!text.empty() && text.back() != '\n') text += '\n';
      text += "# command-line overrides\n";
      for (const auto& l : lines) text += l + '\n';
    }
    validate_config(config);
  } catch (const std::exception& e) {
    err << "invalid config: " << e.what() << '\n';
    return 2;
  }
  try {
    RunOptions opt;
    opt.out_root = resolve_out_root(flags.out_root);
    opt.progress = &err;
    const auto rows = benchmark_timing(config, text, worker_counts, opt);
    out << "workers,total_seconds,fitness_fingerprint\n" << std::setprecision(6);
    for (const auto& r : rows) out << r.workers << ',' << r.total_seconds << ',' << r.fitness_fingerprint << '\n';
    const bool same = std::all_of(rows.begin(), rows.end(),
                                  [&](const BenchRow& r) { return r.fitness_fingerprint == rows.front().fitness_fingerprint; });
    out << "bench.csv: " << (fs::path(opt.out_root) / (config.run_id + "_bench") / "bench.csv").string() << '\n';
    if (!same) {
      err << "fitness histories differ across worker counts\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    err << "bench failed: " << e.what() << '\n';
    return 1;
  }
}

int cmd_resume(const std::string& run_dir, std::optional<int> workers, std::ostream& out, std::ostream& err) {
  try {
    RunOptions opt;
    opt.workers = workers;
    opt.progress = &err;
    const RunSummary s = resume_run(run_dir, opt);
    if (s.corrupt_line) out << "truncated results.log at corrupt line " << *s.corrupt_line << '\n';
    out << "resumed at generation " << s.next_generation << ", executed " << s.jobs_executed << " jobs\n";
    if (!s.state.best) {
      out << "no individual evaluated successfully\n";
      return 1;
    }
    out << std::setprecision(10) << "best fitness: " << s.state.best->record->fitness << " (job "
        << s.state.best->job_id << ")\n";
    return 0;
  } catch (const std::exception& e) {
    err << "resume failed: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace evohps
