#include "evohps/orchestrator.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "evohps/bayesopt.hpp"
#include "evohps/envs.hpp"
#include "evohps/net.hpp"
#include "evohps/rlalgos.hpp"

namespace evohps {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

std::string make_job_id(int generation, int individual) {
  return "g" + std::to_string(generation) + "_i" + std::to_string(individual);
}

std::uint64_t evaluation_seed(std::uint64_t training_seed) {
  return splitmix64(training_seed ^ 0xe7a1u);
}

// ---------------------------------------------------------------------------
// Worker pool

std::vector<ResultMsg> submit_generation(const std::vector<Job>& jobs, int worker_count,
                                         const JobExecutor& executor) {
  if (worker_count < 1) throw std::invalid_argument("submit_generation: worker_count must be >= 1");
  if (jobs.empty()) throw std::invalid_argument("submit_generation: no jobs");

  struct Pending {
    std::size_t index;
    int attempt;
    int excluded;  // worker that already failed this job, or -1
    std::string first_error;
  };
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Pending> queue;
  for (std::size_t i = 0; i < jobs.size(); ++i) queue.push_back({i, 0, -1, {}});
  std::size_t remaining = jobs.size();
  std::vector<ResultMsg> results(jobs.size());
  const int workers = std::min<int>(worker_count, static_cast<int>(jobs.size()));

  auto base_msg = [&](const Job& job, int worker) {
    ResultMsg m;
    m.job_id = job.job_id;
    m.generation = job.generation;
    m.individual = job.individual;
    m.gene = job.gene;
    m.seed = job.seed;
    m.worker_id = worker;
    return m;
  };

  auto work = [&](int me) {
    std::unique_lock lock(mu);
    while (true) {
      auto eligible = queue.end();
      cv.wait(lock, [&] {
        if (remaining == 0) return true;
        eligible = std::find_if(queue.begin(), queue.end(),
                                [&](const Pending& p) { return p.excluded != me || workers == 1; });
        return eligible != queue.end();
      });
      if (remaining == 0) return;
      Pending task = *eligible;
      queue.erase(eligible);
      lock.unlock();

      const Job& job = jobs[task.index];
      ResultMsg msg = base_msg(job, me);
      std::string error;
      const auto start = Clock::now();
      try {
        JobOutput out = executor(job, me);
        if (!std::isfinite(out.record.fitness)) {
          throw std::runtime_error("non-finite fitness");
        }
        msg.record = out.record;
        msg.model_ref = std::move(out.model_ref);
        msg.training_episodes = out.training_episodes;
      } catch (const std::exception& e) {
        error = e.what();
      } catch (...) {
        error = "unknown error";
      }
      msg.seconds = std::chrono::duration<double>(Clock::now() - start).count();

      lock.lock();
      if (error.empty()) {
        results[task.index] = std::move(msg);
        --remaining;
      } else if (task.attempt == 0) {
        queue.push_back({task.index, 1, me, error});
      } else {
        msg.status = JobStatus::Failed;
        msg.reason = "failed twice: " + task.first_error + (error == task.first_error ? "" : "; then " + error);
        results[task.index] = std::move(msg);
        --remaining;
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
  for (auto& t : pool) t.join();
  return results;
}

// ---------------------------------------------------------------------------
// Parameter server and log

const ResultMsg* ParameterServerState::find(const std::string& job_id) const {
  if (!completed.count(job_id)) return nullptr;
  for (const auto& [gen, rows] : table) {
    for (const auto& r : rows) {
      if (r.job_id == job_id) return &r;
    }
  }
  return nullptr;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_inf(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace

std::string encode_result(const ResultMsg& msg, const LogContext& context, const GeneSchema& schema) {
  json j;
  j["run_id"] = context.run_id;
  j["method"] = context.method;
  j["job_id"] = msg.job_id;
  j["generation"] = msg.generation;
  j["individual"] = msg.individual;
  json gene = json::object();
  for (std::size_t k = 0; k < schema.size() && k < msg.gene.values.size(); ++k) {
    const auto& v = msg.gene.values[k];
    if (const auto* d = std::get_if<double>(&v)) {
      gene[schema.params[k].name()] = *d;
    } else {
      gene[schema.params[k].name()] = std::get<std::string>(v);
    }
  }
  j["gene"] = gene;
  j["seed"] = msg.seed;
  if (msg.record) {
    j["n"] = msg.record->n;
    j["reward_sum"] = number_or_null(msg.record->reward_sum);
    j["loss_sum"] = number_or_null(msg.record->loss_sum);
    j["fitness"] = number_or_null(msg.record->fitness);
  } else {
    j["n"] = nullptr;
    j["reward_sum"] = nullptr;
    j["loss_sum"] = nullptr;
    j["fitness"] = nullptr;
  }
  j["training_episodes"] = msg.training_episodes;
  j["model"] = msg.model_ref;
  j["seconds"] = msg.seconds;
  j["worker"] = msg.worker_id;
  j["status"] = msg.status == JobStatus::Ok ? "ok" : "failed";
  j["reason"] = msg.reason;
  return j.dump();
}

ResultMsg decode_result(const std::string& line, const GeneSchema& schema) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed record: ") + e.what());
  }
  try {
    ResultMsg m;
    m.job_id = j.at("job_id").get<std::string>();
    m.generation = j.at("generation").get<int>();
    m.individual = j.at("individual").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& gene = j.at("gene");
    m.gene.schema_id = schema.id;
    for (const auto& spec : schema.params) {
      const auto& v = gene.at(spec.name());
      if (v.is_string()) {
        m.gene.values.emplace_back(v.get<std::string>());
      } else {
        m.gene.values.emplace_back(v.get<double>());
      }
    }
    if (!validate(m.gene, schema)) throw std::runtime_error("gene does not match the search space");
    const std::string status = j.at("status").get<std::string>();
    if (status == "ok") {
      m.status = JobStatus::Ok;
      FitnessRecord r;
      r.n = j.at("n").get<int>();
      r.reward_sum = number_or_inf(j.at("reward_sum"));
      r.loss_sum = number_or_inf(j.at("loss_sum"));
      r.fitness = j.at("fitness").get<double>();
      m.record = r;
    } else if (status == "failed") {
      m.status = JobStatus::Failed;
    } else {
      throw std::runtime_error("unknown status '" + status + "'");
    }
    m.training_episodes = j.at("training_episodes").get<int>();
    m.model_ref = j.at("model").get<std::string>();
    m.seconds = j.at("seconds").get<double>();
    m.worker_id = j.at("worker").get<int>();
    m.reason = j.at("reason").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("bad record field: ") + e.what());
  }
}

ResultLog::ResultLog(std::string path, LogContext context, GeneSchema schema)
    : path_(std::move(path)), context_(std::move(context)), schema_(std::move(schema)) {}

void ResultLog::append(const ResultMsg& msg) {
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot append to " + path_);
  out << encode_result(msg, context_, schema_) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("write failed on " + path_);
}

bool record_result(ParameterServerState& state, const ResultMsg& msg, ResultLog* log, std::ostream* warn) {
  if (state.completed.count(msg.job_id)) {
    if (warn) *warn << "warning: duplicate result for job " << msg.job_id << " ignored\n";
    return false;
  }
  if (log) log->append(msg);
  state.completed.insert(msg.job_id);
  state.table[msg.generation].push_back(msg);
  if (msg.status == JobStatus::Ok && msg.record &&
      (!state.best || msg.record->fitness > state.best->record->fitness)) {
    state.best = msg;
  }
  return true;
}

LogReplay replay_log(const std::string& path, const GeneSchema& schema) {
  LogReplay out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  int line_no = 0;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const bool had_newline = !in.eof();
    const std::size_t next = offset + line.size() + (had_newline ? 1 : 0);
    if (line.empty() || line == "\r") {
      offset = next;
      out.valid_bytes = next;
      continue;
    }
    try {
      ResultMsg msg = decode_result(line, schema);
      record_result(out.state, msg);
      out.results.push_back(std::move(msg));
    } catch (const std::exception&) {
      out.corrupt_line = line_no;
      break;
    }
    offset = next;
    out.valid_bytes = next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curves

std::vector<CurveRow> compute_curves(const ParameterServerState& state) {
  std::vector<CurveRow> rows;
  long episodes = 0;
  for (const auto& [gen, results] : state.table) {
    CurveRow row;
    row.generation = gen;
    double best = -std::numeric_limits<double>::infinity(), sum = 0.0;
    int ok = 0;
    for (const auto& r : results) {
      episodes += r.training_episodes;
      if (!r.record) continue;
      ++ok;
      sum += r.record->fitness;
      if (r.record->fitness > best) {
        best = r.record->fitness;
        row.best_reward_sum = r.record->reward_sum;
      }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.best_fitness = ok ? best : nan;
    row.mean_fitness = ok ? sum / ok : nan;
    if (!ok) row.best_reward_sum = nan;
    row.cumulative_training_episodes = episodes;
    rows.push_back(row);
  }
  return rows;
}

void write_curves(const std::string& path, const std::vector<CurveRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "generation,best_fitness,mean_fitness,best_reward_sum,cumulative_training_episodes\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.generation << ',' << r.best_fitness << ',' << r.mean_fitness << ',' << r.best_reward_sum << ','
        << r.cumulative_training_episodes << '\n';
  }
}

// ---------------------------------------------------------------------------
// Executors

JobOutput execute_rl_job(const Job& job, const GeneSchema& schema, LossSource loss_source,
                         int eval_step_cap, const std::string& models_dir) {
  const AgentSpec spec = make_agent_spec(job.gene, schema);
  auto env = make_environment(job.env);
  TrainedAgent agent = train_agent(*env, spec, job.seed);

  JobOutput out;
  out.training_episodes = agent.report.episodes;
  if (!models_dir.empty()) {
    fs::create_directories(models_dir);
    const std::string base = job.run_id + "_g" + std::to_string(job.generation) + "_i" +
                             std::to_string(job.individual);
    const std::string policy = base + (spec.algorithm == Algorithm::DQN ? ".q.mlp" : ".actor.mlp");
    save_model_file(agent.policy, (fs::path(models_dir) / policy).string());
    if (agent.critic) save_model_file(*agent.critic, (fs::path(models_dir) / (base + ".critic.mlp")).string());
    out.model_ref = (fs::path("models") / policy).generic_string();
  }

  const int e = job.eval_episodes;
  std::optional<TdProbe> probe;
  if (loss_source == LossSource::EvalTdError) {
    probe = make_td_probe(agent, spec.algorithm, env->spec().action, spec.gamma);
  }
  const EvalResult ev = evaluate_policy(agent.policy, *env, e, eval_step_cap, evaluation_seed(job.seed),
                                        probe ? &*probe : nullptr);
  double loss_sum = 0.0;
  if (loss_source == LossSource::FinalTraining) {
    const auto& losses = agent.report.episode_losses;
    if (losses.empty()) {
      loss_sum = std::numeric_limits<double>::infinity();
    } else {
      const std::size_t take = std::min(losses.size(), static_cast<std::size_t>(e));
      for (std::size_t k = losses.size() - take; k < losses.size(); ++k) loss_sum += losses[k];
    }
  } else {
    for (double v : ev.episode_td_errors) loss_sum += v;
  }
  out.record = make_fitness_record(e, ev.reward_sum, loss_sum);
  return out;
}

JobOutput execute_toy_job(const Job& job, const GeneSchema& schema) {
  const double gamma = number_at(job.gene, schema, "gamma");
  JobOutput out;
  out.record = make_fitness_record(1, -(gamma - 0.5) * (gamma - 0.5), std::numeric_limits<double>::infinity());
  if (schema.position("episodes")) {
    out.training_episodes = static_cast<int>(std::lround(number_at(job.gene, schema, "episodes")));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Search driver

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int expected_in_generation(const ExperimentConfig& c, int generation) {
  switch (c.method) {
    case SearchMethod::GA: return c.ga.population_size;
    case SearchMethod::BO: return generation == 0 ? c.bo.n_init : 1;
    case SearchMethod::Random: return c.random_budget;
  }
  return 0;
}

int total_generations(const ExperimentConfig& c) {
  switch (c.method) {
    case SearchMethod::GA: return c.ga.generations;
    case SearchMethod::BO: return 1 + c.bo.budget - c.bo.n_init;
    case SearchMethod::Random: return 1;
  }
  return 0;
}

RunSummary drive(const ExperimentConfig& config, const GeneSchema& schema, const fs::path& run_dir,
                 ParameterServerState state, const RunOptions& options) {
  RunSummary summary;
  summary.run_dir = run_dir.string();
  const fs::path models = run_dir / "models";
  fs::create_directories(models);
  ResultLog log((run_dir / "results.log").string(), {config.run_id, std::string(to_string(config.method))},
                schema);

  summary.next_generation = total_generations(config);
  for (int g = 0; g < total_generations(config); ++g) {
    auto it = state.table.find(g);
    if (it == state.table.end() || static_cast<int>(it->second.size()) < expected_in_generation(config, g)) {
      summary.next_generation = g;
      break;
    }
  }

  JobExecutor executor = options.executor;
  if (!executor) {
    if (config.env == kToyEnv) {
      executor = [&schema](const Job& job, int) { return execute_toy_job(job, schema); };
    } else {
      const std::string models_dir = models.string();
      executor = [&schema, &config, models_dir](const Job& job, int) {
        return execute_rl_job(job, schema, config.loss_source, config.eval_step_cap, models_dir);
      };
    }
  }
  const int workers = options.workers.value_or(config.workers);
  const SeedPlan seeds{config.seed, config.run_id};
  const auto run_start = Clock::now();

  const BatchEvaluator evaluator = [&](std::span<const EvalRequest> requests) {
    const auto start = Clock::now();
    std::vector<EvalOutcome> outcomes(requests.size());
    std::vector<Job> jobs;
    std::vector<std::size_t> slots;
    for (std::size_t k = 0; k < requests.size(); ++k) {
      const auto& r = requests[k];
      const std::string id = make_job_id(r.generation, r.index);
      if (state.completed.count(id)) continue;
      jobs.push_back({id, config.run_id, r.generation, r.index, r.gene, config.algorithm, config.env, r.seed,
                      r.eval_episodes});
      slots.push_back(k);
    }
    if (!jobs.empty()) {
      const auto results = submit_generation(jobs, workers, executor);
      summary.jobs_executed += static_cast<int>(results.size());
      for (const auto& msg : results) record_result(state, msg, &log, options.progress);
    }
    for (std::size_t k = 0; k < requests.size(); ++k) {
      const ResultMsg* msg = state.find(make_job_id(requests[k].generation, requests[k].index));
      if (!msg) throw std::logic_error("missing result for " + make_job_id(requests[k].generation, requests[k].index));
      if (msg->status == JobStatus::Ok) {
        outcomes[k].record = msg->record;
      } else {
        outcomes[k].error = msg->reason.empty() ? "failed" : msg->reason;
      }
    }
    summary.generation_seconds.push_back(std::chrono::duration<double>(Clock::now() - start).count());
    if (options.progress && !requests.empty()) {
      const int g = requests.front().generation;
      int ok = 0;
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& o : outcomes) {
        if (!o.record) continue;
        ++ok;
        best = std::max(best, o.record->fitness);
      }
      *options.progress << "generation " << g << ": " << ok << "/" << outcomes.size() << " ok, best fitness "
                        << best << '\n';
    }
    return outcomes;
  };

  switch (config.method) {
    case SearchMethod::GA:
      summary.history = run_ga(config.ga, schema, evaluator, seeds);
      break;
    case SearchMethod::BO:
      summary.history = run_bo(config.bo, schema, evaluator, seeds);
      break;
    case SearchMethod::Random:
      summary.history = run_random(config.random_budget, config.random_eval_episodes, schema, evaluator, seeds);
      break;
  }
  summary.total_seconds = std::chrono::duration<double>(Clock::now() - run_start).count();
  write_curves((run_dir / "curves.csv").string(), compute_curves(state));
  summary.state = std::move(state);
  return summary;
}

}  // namespace

RunSummary run_search(const ExperimentConfig& config, const std::string& config_text, const RunOptions& options) {
  validate_config(config);
  const GeneSchema schema = make_search_schema(config);
  const fs::path run_dir = fs::path(options.out_root) / config.run_id;
  const fs::path log_path = run_dir / "results.log";
  if (fs::exists(log_path) && fs::file_size(log_path) > 0) {
    throw std::runtime_error(run_dir.string() + " already holds results; use resume or pick another run_id");
  }
  fs::create_directories(run_dir);
  {
    std::ofstream out(run_dir / "config", std::ios::binary);
    out << config_text;
    if (!out) throw std::runtime_error("cannot write " + (run_dir / "config").string());
  }
  std::ofstream(log_path, std::ios::trunc).close();
  return drive(config, schema, run_dir, {}, options);
}

RunSummary resume_run(const std::string& run_dir, const RunOptions& options) {
  const fs::path dir(run_dir);
  const fs::path config_path = dir / "config";
  if (!fs::exists(config_path)) {
    throw std::runtime_error("cannot resume: missing config file " + config_path.string());
  }
  const std::string text = read_file(config_path);
  const ExperimentConfig config = parse_config(text);
  validate_config(config);
  const GeneSchema schema = make_search_schema(config);
  const fs::path log_path = dir / "results.log";

  LogReplay replay = replay_log(log_path.string(), schema);
  if (fs::exists(log_path)) {
    if (replay.corrupt_line) {
      if (options.progress) {
        *options.progress << "results.log line " << *replay.corrupt_line
                          << " is corrupt; discarding it and everything after\n";
      }
      fs::resize_file(log_path, replay.valid_bytes);
    }
    const std::string kept = read_file(log_path);
    if (!kept.empty() && kept.back() != '\n') std::ofstream(log_path, std::ios::app) << '\n';
  }
  RunSummary summary = drive(config, schema, dir, std::move(replay.state), options);
  summary.corrupt_line = replay.corrupt_line;
  return summary;
}

// ---------------------------------------------------------------------------
// Benchmark

std::string fitness_fingerprint(const SearchHistory& history) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& ind : history.individuals) {
    const double f = ind.record ? ind.record->fitness : std::numeric_limits<double>::quiet_NaN();
    const auto bits = std::bit_cast<std::uint64_t>(f);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<BenchRow> benchmark_timing(const ExperimentConfig& config, const std::string& config_text,
                                       const std::vector<int>& worker_counts, const RunOptions& options) {
  if (worker_counts.empty()) throw std::invalid_argument("benchmark_timing: no worker counts");
  const fs::path bench_dir = fs::path(options.out_root) / (config.run_id + "_bench");
  fs::create_directories(bench_dir);
  std::vector<BenchRow> rows;
  for (int w : worker_counts) {
    if (w < 1) throw std::invalid_argument("benchmark_timing: worker counts must be >= 1");
    RunOptions opt = options;
    opt.workers = w;
    opt.out_root = (bench_dir / ("w" + std::to_string(w))).string();
    const fs::path old_log = fs::path(opt.out_root) / config.run_id / "results.log";
    if (fs::exists(old_log)) fs::remove(old_log);
    const RunSummary s = run_search(config, config_text, opt);
    rows.push_back({w, s.total_seconds, s.generation_seconds, fitness_fingerprint(s.history)});
  }
  std::ofstream out(bench_dir / "bench.csv");
  out << "workers,total_seconds,generation_seconds,fitness_fingerprint\n";
  for (const auto& r : rows) {
    out << r.workers << ',' << r.total_seconds << ',';
    for (std::size_t k = 0; k < r.generation_seconds.size(); ++k) out << (k ? ";" : "") << r.generation_seconds[k];
    out << ',' << r.fitness_fingerprint << '\n';
  }
  if (!out) throw std::runtime_error("cannot write " + (bench_dir / "bench.csv").string());
  return rows;
}

}  // namespace evohps
