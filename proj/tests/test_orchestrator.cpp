#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "evohps/orchestrator.hpp"

using namespace evohps;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("evohps_orch_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(f, line);) out.push_back(line);
  return out;
}

// Fitness fields of every log record, in file order.
std::vector<std::string> fitness_fields(const fs::path& log) {
  std::vector<std::string> out;
  for (const auto& line : read_lines(log)) {
    const auto j = nlohmann::json::parse(line);
    out.push_back(j.at("job_id").dump() + j.at("fitness").dump() + j.at("reward_sum").dump() +
                  j.at("loss_sum").dump() + j.at("n").dump());
  }
  return out;
}

std::vector<Job> toy_jobs(const GeneSchema& schema, int count) {
  std::vector<Job> jobs;
  Rng rng(5);
  for (int i = 0; i < count; ++i) {
    Job j;
    j.job_id = make_job_id(0, i);
    j.run_id = "t";
    j.individual = i;
    j.gene = sample_gene(schema, rng);
    j.algorithm = "dqn";
    j.env = "toy";
    j.seed = 100 + i;
    jobs.push_back(j);
  }
  return jobs;
}

ExperimentConfig toy_config(const std::string& run_id) {
  ExperimentConfig c;
  c.run_id = run_id;
  c.env = std::string(kToyEnv);
  c.seed = 3;
  c.ga.population_size = 8;
  c.ga.generations = 3;
  validate_config(c);
  return c;
}

}  // namespace

TEST_CASE("job ids") {
  CHECK(make_job_id(0, 0) == "g0_i0");
  CHECK(make_job_id(12, 7) == "g12_i7");
}

TEST_CASE("pool returns results in job order for any worker count") {
  const auto schema = build_schema(Algorithm::DQN);
  const auto jobs = toy_jobs(schema, 12);
  const JobExecutor exec = [&](const Job& job, int) {
    // Finish out of order.
    std::this_thread::sleep_for(std::chrono::milliseconds(12 - job.individual));
    return execute_toy_job(job, schema);
  };
  const auto one = submit_generation(jobs, 1, exec);
  const auto four = submit_generation(jobs, 4, exec);
  REQUIRE(one.size() == jobs.size());
  REQUIRE(four.size() == jobs.size());
  std::set<int> workers;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    CHECK(one[i].job_id == jobs[i].job_id);
    CHECK(four[i].job_id == jobs[i].job_id);
    CHECK(one[i].record == four[i].record);
    CHECK(one[i].status == JobStatus::Ok);
    CHECK(one[i].worker_id == 0);
    workers.insert(four[i].worker_id);
  }
  CHECK(workers.size() > 1);
  CHECK_THROWS_AS(submit_generation(jobs, 0, exec), std::invalid_argument);
}

TEST_CASE("a crashing job is retried once on another worker, then failed") {
  const auto schema = build_schema(Algorithm::DQN);
  const auto jobs = toy_jobs(schema, 6);
  std::mutex mu;
  std::vector<int> attempts_on;
  std::atomic<int> flaky_calls{0};
  const JobExecutor exec = [&](const Job& job, int worker) -> JobOutput {
    if (job.individual == 2) {
      std::lock_guard lock(mu);
      attempts_on.push_back(worker);
      throw std::runtime_error("boom");
    }
    if (job.individual == 4 && flaky_calls++ == 0) throw std::runtime_error("transient");
    return execute_toy_job(job, schema);
  };
  const auto res = submit_generation(jobs, 3, exec);
  CHECK(res[2].status == JobStatus::Failed);
  CHECK_FALSE(res[2].record.has_value());
  CHECK(res[2].reason.find("boom") != std::string::npos);
  REQUIRE(attempts_on.size() == 2);
  CHECK(attempts_on[0] != attempts_on[1]);
  CHECK(res[4].status == JobStatus::Ok);
  for (int i : {0, 1, 3, 5}) CHECK(res[i].status == JobStatus::Ok);

  // Non-finite fitness counts as a crash too.
  const JobExecutor nan_exec = [&](const Job& job, int) {
    JobOutput out = execute_toy_job(job, schema);
    out.record.fitness = std::numeric_limits<double>::quiet_NaN();
    return out;
  };
  const auto bad = submit_generation(toy_jobs(schema, 1), 2, nan_exec);
  CHECK(bad[0].status == JobStatus::Failed);
}

TEST_CASE("parameter server bookkeeping") {
  const auto schema = build_schema(Algorithm::DQN);
  const JobExecutor exec = [&](const Job& job, int) { return execute_toy_job(job, schema); };
  const auto res = submit_generation(toy_jobs(schema, 4), 2, exec);
  ParameterServerState state;
  CHECK(record_result(state, res[0]));
  REQUIRE(state.best);
  CHECK(state.best->job_id == res[0].job_id);
  for (std::size_t i = 1; i < res.size(); ++i) record_result(state, res[i]);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : res) best = std::max(best, r.record->fitness);
  CHECK(state.best->record->fitness == best);

  std::ostringstream warn;
  const auto before = state;
  CHECK_FALSE(record_result(state, res[1], nullptr, &warn));
  CHECK(state == before);
  CHECK(warn.str().find(res[1].job_id) != std::string::npos);

  ResultMsg worse = res[0];
  worse.job_id = "g1_i0";
  worse.generation = 1;
  worse.record = make_fitness_record(1, -100.0, std::numeric_limits<double>::infinity());
  record_result(state, worse);
  CHECK(state.best->record->fitness == best);
  CHECK(state.find("g1_i0") != nullptr);
  CHECK(state.find("g9_i9") == nullptr);
  CHECK(state.table.at(1).size() == 1);
}

TEST_CASE("log records round trip") {
  const auto schema = build_schema(Algorithm::DQN);
  const JobExecutor exec = [&](const Job& job, int) {
    if (job.individual == 1) throw std::runtime_error("no");
    return execute_toy_job(job, schema);
  };
  const auto res = submit_generation(toy_jobs(schema, 3), 1, exec);
  const LogContext ctx{"t", "ga"};
  for (const auto& r : res) {
    const auto line = encode_result(r, ctx, schema);
    CHECK(line.find('\n') == std::string::npos);
    const auto back = decode_result(line, schema);
    CHECK(back.job_id == r.job_id);
    CHECK(back.gene == r.gene);
    CHECK(back.status == r.status);
    CHECK(back.seed == r.seed);
    if (r.record) {
      // The loss is infinite and travels as null.
      CHECK(back.record->fitness == r.record->fitness);
      CHECK(back.record->reward_sum == r.record->reward_sum);
      CHECK(std::isinf(back.record->loss_sum));
    }
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("run_id") == "t");
    CHECK(j.at("gene").is_object());
  }
  CHECK_THROWS_AS(decode_result("{not json", schema), std::runtime_error);
  CHECK_THROWS_AS(decode_result("{\"job_id\": 3}", schema), std::runtime_error);
}

TEST_CASE("log replay reconstructs the parameter server") {
  const auto dir = fresh_dir("replay");
  const auto schema = build_schema(Algorithm::DQN);
  const JobExecutor exec = [&](const Job& job, int) { return execute_toy_job(job, schema); };
  const auto path = (dir / "results.log").string();
  ParameterServerState live;
  {
    ResultLog log(path, {"t", "ga"}, schema);
    for (const auto& r : submit_generation(toy_jobs(schema, 5), 2, exec)) record_result(live, r, &log);
  }
  const auto replay = replay_log(path, schema);
  CHECK_FALSE(replay.corrupt_line);
  CHECK(replay.results.size() == 5);
  CHECK(replay.valid_bytes == fs::file_size(path));
  CHECK(replay.state == live);

  // A torn final line is reported and excluded.
  const auto good = fs::file_size(path);
  {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f << "{\"job_id\": \"g0_i9\", \"fitn";
  }
  const auto torn = replay_log(path, schema);
  REQUIRE(torn.corrupt_line);
  CHECK(*torn.corrupt_line == 6);
  CHECK(torn.valid_bytes == good);
  CHECK(torn.state == live);
  CHECK(replay_log((dir / "absent.log").string(), schema).results.empty());
}

TEST_CASE("toy job") {
  const auto schema = build_schema(Algorithm::DQN);
  Job job = toy_jobs(schema, 1)[0];
  const auto out = execute_toy_job(job, schema);
  const double g = number_at(job.gene, schema, "gamma");
  CHECK(out.record.n == 1);
  CHECK(out.record.reward_sum == -(g - 0.5) * (g - 0.5));
  CHECK(std::isinf(out.record.loss_sum));
  CHECK(out.training_episodes == static_cast<int>(number_at(job.gene, schema, "episodes")));
  CHECK(evaluation_seed(1) != 1);
  CHECK(evaluation_seed(1) == evaluation_seed(1));
}

TEST_CASE("rl job saves models and evaluates") {
  const auto dir = fresh_dir("rljob");
  const auto schema = override_spec(build_schema(Algorithm::DQN), "episodes", {"3"});
  Rng rng(1);
  Job job;
  job.job_id = make_job_id(0, 1);
  job.run_id = "r";
  job.individual = 1;
  job.gene = sample_gene(schema, rng);
  job.algorithm = "dqn";
  job.env = "cartpole";
  job.seed = 11;
  job.eval_episodes = 2;
  const auto a = execute_rl_job(job, schema, LossSource::FinalTraining, 100, (dir / "models").string());
  const auto b = execute_rl_job(job, schema, LossSource::FinalTraining, 100, (dir / "models").string());
  CHECK(a.record == b.record);
  CHECK(a.record.n == 2);
  CHECK(a.training_episodes == 3);
  CHECK(a.model_ref == "models/r_g0_i1.q.mlp");
  CHECK(fs::exists(dir / a.model_ref));
  CHECK(a.record.reward_sum >= 2.0);
  CHECK(a.record.reward_sum <= 200.0);
  const auto td = execute_rl_job(job, schema, LossSource::EvalTdError, 100, "");
  CHECK(td.model_ref.empty());
  CHECK(std::isfinite(td.record.loss_sum));
}

TEST_CASE("run and resume on the toy evaluator") {
  const auto root = fresh_dir("run");
  const auto cfg = toy_config("toyrun");
  RunOptions opt;
  opt.out_root = root.string();
  const auto full = run_search(cfg, cfg.canonical(), opt);
  const fs::path run_dir = root / "toyrun";
  CHECK(full.run_dir == run_dir.string());
  CHECK(full.jobs_executed == 24);
  CHECK(read_lines(run_dir / "results.log").size() == 24);
  CHECK(read_file(run_dir / "config") == cfg.canonical());
  const auto curve = read_lines(run_dir / "curves.csv");
  REQUIRE(curve.size() == 4);
  CHECK(curve[0] == "generation,best_fitness,mean_fitness,best_reward_sum,cumulative_training_episodes");
  CHECK_THROWS_AS(run_search(cfg, cfg.canonical(), opt), std::runtime_error);

  // Nothing left to do.
  const auto again = resume_run(run_dir.string());
  CHECK(again.jobs_executed == 0);
  REQUIRE(again.history.best);
  CHECK(again.history.best->record == full.history.best->record);

  // Keep 3 of the 8 generation-0 records.
  const auto lines = read_lines(run_dir / "results.log");
  {
    std::ofstream f(run_dir / "results.log", std::ios::trunc | std::ios::binary);
    for (int i = 0; i < 3; ++i) f << lines[i] << '\n';
  }
  std::atomic<int> calls{0};
  RunOptions counting;
  counting.executor = [&](const Job& job, int) {
    ++calls;
    return execute_toy_job(job, make_search_schema(cfg));
  };
  const auto resumed = resume_run(run_dir.string(), counting);
  CHECK(resumed.jobs_executed == 21);
  CHECK(calls == 21);
  CHECK(resumed.next_generation == 0);
  CHECK(fitness_fields(run_dir / "results.log").size() == 24);
  CHECK(fitness_fingerprint(resumed.history) == fitness_fingerprint(full.history));
  REQUIRE(resumed.state.best);
  CHECK(resumed.state.best->record == full.state.best->record);
}

TEST_CASE("resume of generation zero with 3 of 8 done submits exactly 5 jobs") {
  const auto root = fresh_dir("resume5");
  auto cfg = toy_config("five");
  cfg.ga.generations = 1;
  RunOptions opt;
  opt.out_root = root.string();
  run_search(cfg, cfg.canonical(), opt);
  const fs::path run_dir = root / "five";
  const auto lines = read_lines(run_dir / "results.log");
  REQUIRE(lines.size() == 8);
  {
    std::ofstream f(run_dir / "results.log", std::ios::trunc | std::ios::binary);
    for (int i = 0; i < 3; ++i) f << lines[i] << '\n';
    f << "{\"job_id\": \"g0_i3\", \"broken";  // torn write
  }
  std::ostringstream progress;
  RunOptions ro;
  ro.progress = &progress;
  const auto resumed = resume_run(run_dir.string(), ro);
  REQUIRE(resumed.corrupt_line);
  CHECK(*resumed.corrupt_line == 4);
  CHECK(progress.str().find("line 4") != std::string::npos);
  CHECK(resumed.jobs_executed == 5);
  CHECK(read_lines(run_dir / "results.log").size() == 8);
  CHECK(read_lines(run_dir / "results.log")[2] == lines[2]);
}

TEST_CASE("resume errors") {
  const auto dir = fresh_dir("empty");
  try {
    resume_run(dir.string());
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("config") != std::string::npos);
  }
}

TEST_CASE("worker count does not change results") {
  const auto root = fresh_dir("workers");
  ExperimentConfig cfg;
  cfg.run_id = "w";
  cfg.seed = 4;
  cfg.ga.population_size = 4;
  cfg.ga.generations = 2;
  cfg.ga.eval_episodes = 2;
  cfg.space.push_back({"episodes", {"4"}});
  cfg.space.push_back({"neurons", {"8", "16"}});
  validate_config(cfg);
  RunOptions opt;
  opt.out_root = (root / "one").string();
  opt.workers = 1;
  const auto a = run_search(cfg, cfg.canonical(), opt);
  opt.out_root = (root / "four").string();
  opt.workers = 4;
  const auto b = run_search(cfg, cfg.canonical(), opt);
  CHECK(fitness_fields(root / "one" / "w" / "results.log") == fitness_fields(root / "four" / "w" / "results.log"));
  CHECK(fitness_fingerprint(a.history) == fitness_fingerprint(b.history));
  const auto replay = replay_log((root / "four" / "w" / "results.log").string(), make_search_schema(cfg));
  CHECK(replay.state == b.state);
}

TEST_CASE("benchmark rows") {
  const auto root = fresh_dir("bench");
  const auto cfg = toy_config("b");
  RunOptions opt;
  opt.out_root = root.string();
  const auto one = benchmark_timing(cfg, cfg.canonical(), {1}, opt);
  CHECK(one.size() == 1);
  const auto rows = benchmark_timing(cfg, cfg.canonical(), {1, 2, 3}, opt);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.fitness_fingerprint == rows[0].fitness_fingerprint);
    CHECK(r.generation_seconds.size() == 3);
    CHECK(r.total_seconds >= 0.0);
  }
  const auto csv = read_lines(root / "b_bench" / "bench.csv");
  REQUIRE(csv.size() == 4);
  CHECK(csv[0] == "workers,total_seconds,generation_seconds,fitness_fingerprint");
  CHECK(csv[2].rfind("2,", 0) == 0);
  CHECK_THROWS_AS(benchmark_timing(cfg, cfg.canonical(), {}, opt), std::invalid_argument);
}

TEST_CASE("curves") {
  ParameterServerState state;
  auto msg = [](int g, int i, double reward, int episodes) {
    ResultMsg m;
    m.job_id = make_job_id(g, i);
    m.generation = g;
    m.individual = i;
    m.record = make_fitness_record(1, reward, std::numeric_limits<double>::infinity());
    m.training_episodes = episodes;
    return m;
  };
  record_result(state, msg(0, 0, 1.0, 10));
  record_result(state, msg(0, 1, 3.0, 20));
  record_result(state, msg(1, 0, 2.0, 30));
  ResultMsg failed = msg(1, 1, 0.0, 40);
  failed.status = JobStatus::Failed;
  failed.record.reset();
  record_result(state, failed);
  const auto rows = compute_curves(state);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].best_fitness == doctest::Approx(4.0));
  CHECK(rows[0].mean_fitness == doctest::Approx(3.0));
  CHECK(rows[0].best_reward_sum == 3.0);
  CHECK(rows[0].cumulative_training_episodes == 30);
  CHECK(rows[1].best_fitness == doctest::Approx(3.0));
  CHECK(rows[1].mean_fitness == doctest::Approx(3.0));
  CHECK(rows[1].cumulative_training_episodes == 100);
}
