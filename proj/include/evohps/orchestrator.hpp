#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "evohps/config.hpp"
#include "evohps/evo.hpp"
#include "evohps/hyperspace.hpp"

namespace evohps {

/// One train+evaluate unit handed to a worker.
struct Job {
  std::string job_id;
  std::string run_id;
  int generation = 0;
  int individual = 0;
  Gene gene;
  std::string algorithm;
  std::string env;
  std::uint64_t seed = 0;
  int eval_episodes = 1;
};

/// "g<generation>_i<individual>", unique within a run.
std::string make_job_id(int generation, int individual);

enum class JobStatus { Ok, Failed };

struct ResultMsg {
  std::string job_id;
  int generation = 0;
  int individual = 0;
  Gene gene;
  std::uint64_t seed = 0;
  std::optional<FitnessRecord> record;  // present iff status is Ok
  std::string model_ref;                // relative to the run directory; may be empty
  int training_episodes = 0;
  double seconds = 0.0;
  int worker_id = 0;
  JobStatus status = JobStatus::Ok;
  std::string reason;

  friend bool operator==(const ResultMsg&, const ResultMsg&) = default;
};

/// What a worker produces for a job. Throwing counts as a worker crash.
struct JobOutput {
  FitnessRecord record;
  std::string model_ref;
  int training_episodes = 0;
};

using JobExecutor = std::function<JobOutput(const Job& job, int worker_id)>;

/// Runs every job on a pool of `worker_count` threads pulling from a shared
/// queue and returns once all have replied (generation barrier). Replies are
/// in job order. A job whose executor throws is retried once, on a different
/// worker when there is one, then reported as failed.
std::vector<ResultMsg> submit_generation(const std::vector<Job>& jobs, int worker_count,
                                         const JobExecutor& executor);

struct ParameterServerState {
  std::map<int, std::vector<ResultMsg>> table;  // by generation, in record order
  std::optional<ResultMsg> best;
  std::set<std::string> completed;

  const ResultMsg* find(const std::string& job_id) const;
  friend bool operator==(const ParameterServerState&, const ParameterServerState&) = default;
};

/// Identifies the run in every log line.
struct LogContext {
  std::string run_id;
  std::string method;
};

std::string encode_result(const ResultMsg& msg, const LogContext& context, const GeneSchema& schema);
/// Throws std::runtime_error on malformed lines.
ResultMsg decode_result(const std::string& line, const GeneSchema& schema);

/// Append-only JSON-lines writer that flushes after every record.
class ResultLog {
 public:
  ResultLog(std::string path, LogContext context, GeneSchema schema);
  void append(const ResultMsg& msg);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  LogContext context_;
  GeneSchema schema_;
};

/// Adds a result; persists it first when a log is given. A job id that was
/// already recorded is ignored with a warning on `warn` and false is returned.
bool record_result(ParameterServerState& state, const ResultMsg& msg, ResultLog* log = nullptr,
                   std::ostream* warn = nullptr);

struct LogReplay {
  ParameterServerState state;
  std::vector<ResultMsg> results;    // valid records in file order
  std::optional<int> corrupt_line;   // 1-based line of the first bad record
  std::size_t valid_bytes = 0;       // length of the valid prefix
};

LogReplay replay_log(const std::string& path, const GeneSchema& schema);

/// Per-generation summary written to curves.csv.
struct CurveRow {
  int generation = 0;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  double best_reward_sum = 0.0;
  long cumulative_training_episodes = 0;
};

std::vector<CurveRow> compute_curves(const ParameterServerState& state);
void write_curves(const std::string& path, const std::vector<CurveRow>& rows);

/// Trains the agent described by the job, saves its networks under
/// `models_dir` when non-empty and evaluates it.
JobOutput execute_rl_job(const Job& job, const GeneSchema& schema, LossSource loss_source,
                         int eval_step_cap, const std::string& models_dir);

/// Analytic stand-in: n = 1, reward_sum = -(gamma - 0.5)^2, loss_sum = +inf.
JobOutput execute_toy_job(const Job& job, const GeneSchema& schema);

/// Seed used to evaluate a trained individual, derived from its training seed.
std::uint64_t evaluation_seed(std::uint64_t training_seed);

struct RunOptions {
  std::string out_root = ".";
  std::optional<int> workers;      // overrides the config
  JobExecutor executor;            // replaces the built-in executor when set
  std::ostream* progress = nullptr;
};

struct RunSummary {
  std::string run_dir;
  SearchHistory history;
  ParameterServerState state;
  int jobs_executed = 0;                  // jobs actually run by workers this call
  std::vector<double> generation_seconds;
  double total_seconds = 0.0;
  std::optional<int> corrupt_line;        // set by resume when the log was truncated
  int next_generation = 0;                // first generation not fully logged before the call
};

/// Creates <out_root>/<run_id>, copies `config_text` there as `config`, runs
/// the search and writes results.log, models/ and curves.csv. Refuses to
/// overwrite a directory that already has results.
RunSummary run_search(const ExperimentConfig& config, const std::string& config_text,
                      const RunOptions& options);

/// Rebuilds the parameter server from results.log, truncates a corrupt tail
/// and finishes the run; completed jobs are not executed again.
RunSummary resume_run(const std::string& run_dir, const RunOptions& options = {});

struct BenchRow {
  int workers = 0;
  double total_seconds = 0.0;
  std::vector<double> generation_seconds;
  std::string fitness_fingerprint;
};

/// Runs the same search once per worker count under <out_root>/<run_id>_bench
/// and writes bench.csv there.
std::vector<BenchRow> benchmark_timing(const ExperimentConfig& config, const std::string& config_text,
                                       const std::vector<int>& worker_counts, const RunOptions& options);

/// Hex digest of the fitness values in history order.
std::string fitness_fingerprint(const SearchHistory& history);

}  // namespace evohps
