#include "evohps/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "evohps/envs.hpp"
#include "evohps/rlalgos.hpp"

namespace evohps {

std::string_view to_string(SearchMethod method) {
  switch (method) {
    case SearchMethod::GA: return "ga";
    case SearchMethod::BO: return "bo";
    case SearchMethod::Random: return "random";
  }
  return "?";
}

SearchMethod parse_method(std::string_view text) {
  if (text == "ga") return SearchMethod::GA;
  if (text == "bo") return SearchMethod::BO;
  if (text == "random") return SearchMethod::Random;
  throw std::invalid_argument("unknown method '" + std::string(text) + "' (expected ga, bo or random)");
}

std::string_view to_string(LossSource source) {
  return source == LossSource::FinalTraining ? "final_training" : "eval_td_error";
}

LossSource parse_loss_source(std::string_view text) {
  if (text == "final_training") return LossSource::FinalTraining;
  if (text == "eval_td_error") return LossSource::EvalTdError;
  throw std::invalid_argument("unknown loss source '" + std::string(text) +
                              "' (expected final_training or eval_td_error)");
}

int ExperimentConfig::eval_episodes() const {
  switch (method) {
    case SearchMethod::GA: return ga.eval_episodes;
    case SearchMethod::BO: return bo.eval_episodes;
    case SearchMethod::Random: return random_eval_episodes;
  }
  return 1;
}

ConfigError::ConfigError(const std::string& key, const std::string& message, int line)
    : std::runtime_error((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) +
                         (key.empty() ? message : key + ": " + message)),
      key_(key), message_(message), line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(std::string(key), "expected a number, got '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto piece = trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
    if (!piece.empty()) out.emplace_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::string num(double v) { return format_value(v); }

}  // namespace

void apply_setting(ExperimentConfig& c, std::string_view key, std::string_view value) {
  const std::string k(key);
  value = trim(value);
  auto as_int = [&] { return parse_number<int>(key, value); };
  auto as_double = [&] { return parse_number<double>(key, value); };
  auto wrap = [&](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(k, e.what());
    }
  };

  if (k == "run_id") {
    if (value.empty() || value.find_first_of("/\\ ") != std::string_view::npos) {
      throw ConfigError(k, "must be non-empty without spaces or slashes");
    }
    c.run_id = value;
  } else if (k == "method") {
    wrap([&] { c.method = parse_method(value); });
  } else if (k == "algorithm") {
    c.algorithm = value;
  } else if (k == "env") {
    c.env = value;
  } else if (k == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (k == "workers") {
    c.workers = as_int();
  } else if (k == "loss_source") {
    wrap([&] { c.loss_source = parse_loss_source(value); });
  } else if (k == "eval_step_cap") {
    c.eval_step_cap = as_int();
  } else if (k == "ga.population_size") {
    c.ga.population_size = as_int();
  } else if (k == "ga.crossover_rate") {
    c.ga.crossover_rate = as_double();
  } else if (k == "ga.mutation_rate") {
    c.ga.mutation_rate = as_double();
  } else if (k == "ga.eval_episodes") {
    c.ga.eval_episodes = as_int();
  } else if (k == "ga.generations") {
    c.ga.generations = as_int();
  } else if (k == "ga.elitism_count") {
    c.ga.elitism_count = as_int();
  } else if (k == "bo.budget") {
    c.bo.budget = as_int();
  } else if (k == "bo.n_init") {
    c.bo.n_init = as_int();
  } else if (k == "bo.eval_episodes") {
    c.bo.eval_episodes = as_int();
  } else if (k == "bo.acquisition") {
    wrap([&] { c.bo.acquisition = parse_acquisition(value, c.bo.acquisition.kappa); });
  } else if (k == "bo.kappa") {
    c.bo.acquisition.kappa = as_double();
  } else if (k == "bo.length_scale") {
    c.bo.kernel.lengthscale = as_double();
  } else if (k == "random.budget") {
    c.random_budget = as_int();
  } else if (k == "random.eval_episodes") {
    c.random_eval_episodes = as_int();
  } else if (k.rfind("space.", 0) == 0 && k.size() > 6) {
    const std::string name = k.substr(6);
    auto values = split_list(value);
    if (values.empty()) throw ConfigError(k, "empty value list");
    auto it = std::find_if(c.space.begin(), c.space.end(), [&](const auto& p) { return p.first == name; });
    if (it != c.space.end()) {
      it->second = std::move(values);
    } else {
      c.space.emplace_back(name, std::move(values));
    }
  } else {
    throw ConfigError(k, "unknown key");
  }
}

std::pair<std::string, std::string> split_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(std::string(text), "expected KEY=VALUE");
  }
  return {std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1)))};
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("", "expected 'key = value', got '" + std::string(line) + "'", line_no);
    }
    const auto key = trim(line.substr(0, eq));
    try {
      apply_setting(c, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(e.key(), e.message(), line_no);
    }
  }
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

Algorithm config_algorithm(const ExperimentConfig& config) {
  try {
    return parse_algorithm(config.algorithm);
  } catch (const std::exception& e) {
    throw ConfigError("algorithm", e.what());
  }
}

GeneSchema make_search_schema(const ExperimentConfig& config) {
  GeneSchema schema = build_schema(config_algorithm(config));
  for (const auto& [name, values] : config.space) {
    try {
      schema = override_spec(schema, name, values);
    } catch (const std::exception& e) {
      throw ConfigError("space." + name, e.what());
    }
  }
  return schema;
}

void validate_config(const ExperimentConfig& c) {
  const Algorithm algo = config_algorithm(c);
  if (c.env != kToyEnv) {
    if (!is_known_environment(c.env)) {
      throw ConfigError("env", "unknown environment '" + c.env + "' (expected cartpole, lander, laser or toy)");
    }
    try {
      check_algorithm_env(algo, make_environment(c.env)->spec());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("env", std::string(e.what()) + "; '" + c.env + "' cannot be paired with " + c.algorithm);
    }
  }
  if (c.workers < 1) throw ConfigError("workers", "must be >= 1");
  if (c.eval_step_cap < 1) throw ConfigError("eval_step_cap", "must be >= 1");
  switch (c.method) {
    case SearchMethod::GA:
      try {
        validate(c.ga);
      } catch (const std::exception& e) {
        throw ConfigError("ga", e.what());
      }
      break;
    case SearchMethod::BO:
      if (c.bo.budget < 1) throw ConfigError("bo.budget", "must be >= 1");
      if (c.bo.n_init < 1 || c.bo.n_init > c.bo.budget) throw ConfigError("bo.n_init", "must be in [1, bo.budget]");
      if (c.bo.eval_episodes < 1) throw ConfigError("bo.eval_episodes", "must be >= 1");
      if (!(c.bo.kernel.lengthscale > 0)) throw ConfigError("bo.length_scale", "must be positive");
      break;
    case SearchMethod::Random:
      if (c.random_budget < 1) throw ConfigError("random.budget", "must be >= 1");
      if (c.random_eval_episodes < 1) throw ConfigError("random.eval_episodes", "must be >= 1");
      break;
  }
  make_search_schema(c);
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream o;
  o << "run_id = " << run_id << '\n'
    << "method = " << to_string(method) << '\n'
    << "algorithm = " << algorithm << '\n'
    << "env = " << env << '\n'
    << "seed = " << seed << '\n'
    << "workers = " << workers << '\n'
    << "loss_source = " << to_string(loss_source) << '\n'
    << "eval_step_cap = " << eval_step_cap << '\n'
    << "ga.population_size = " << ga.population_size << '\n'
    << "ga.crossover_rate = " << num(ga.crossover_rate) << '\n'
    << "ga.mutation_rate = " << num(ga.mutation_rate) << '\n'
    << "ga.eval_episodes = " << ga.eval_episodes << '\n'
    << "ga.generations = " << ga.generations << '\n'
    << "ga.elitism_count = " << ga.elitism_count << '\n'
    << "bo.budget = " << bo.budget << '\n'
    << "bo.n_init = " << bo.n_init << '\n'
    << "bo.eval_episodes = " << bo.eval_episodes << '\n'
    << "bo.acquisition = " << to_string(bo.acquisition.type) << '\n'
    << "bo.kappa = " << num(bo.acquisition.kappa) << '\n'
    << "bo.length_scale = " << num(bo.kernel.lengthscale) << '\n'
    << "random.budget = " << random_budget << '\n'
    << "random.eval_episodes = " << random_eval_episodes << '\n';
  for (const auto& [name, values] : space) o << "space." << name << " = " << join(values) << '\n';
  return o.str();
}

}  // namespace evohps
