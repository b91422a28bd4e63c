#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "evohps/config.hpp"

namespace evohps {

/// Command-line flags shared by search, bench and resume.
struct CommonFlags {
  std::vector<std::string> sets;  // KEY=VALUE
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> method;
  std::optional<int> budget;
  std::string out_root;           // empty: $EVOHPS_OUT, then "."
};

/// Applies --set and the dedicated flags to a parsed config and returns the
/// lines appended to the copied config file.
std::vector<std::string> apply_flags(ExperimentConfig& config, const CommonFlags& flags);

std::string resolve_out_root(const std::string& flag);

/// Each returns the process exit status; diagnostics go to `err`.
int cmd_search(const std::string& config_path, const CommonFlags& flags, std::ostream& out, std::ostream& err);

struct EvaluateOptions {
  std::string model_path;
  std::string env;                  // empty: taken from the run directory's config
  std::optional<int> episodes;      // default: logged n, else 10
  std::optional<std::uint64_t> seed;  // default: the logged evaluation seed, else 0
  std::optional<int> step_cap;      // default: the run's eval_step_cap, else 100
  std::string trace_path;
};
int cmd_evaluate(const EvaluateOptions& options, std::ostream& out, std::ostream& err);

/// Writes the merged curve file to `merged_path` and prints the summary table.
int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& merged_path, std::ostream& out,
                std::ostream& err);

int cmd_bench(const std::string& config_path, const std::vector<int>& worker_counts, const CommonFlags& flags,
              std::ostream& out, std::ostream& err);

int cmd_resume(const std::string& run_dir, std::optional<int> workers, std::ostream& out, std::ostream& err);

/// Best-so-far trace of one run in evaluation order.
struct RunCurve {
  std::string run_id;
  std::string method;
  std::string algorithm;
  std::string env;
  std::vector<long> cumulative_episodes;
  std::vector<double> best_so_far;
  double best = 0.0;
  long episodes_to_best = 0;
};

/// Reads <dir>/config and <dir>/results.log; throws when either is missing.
RunCurve load_run_curve(const std::string& run_dir);

}  // namespace evohps
