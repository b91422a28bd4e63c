#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evohps/bayesopt.hpp"
#include "evohps/evo.hpp"
#include "evohps/hyperspace.hpp"

namespace evohps {

enum class SearchMethod { GA, BO, Random };
std::string_view to_string(SearchMethod method);
SearchMethod parse_method(std::string_view text);

/// Which loss trace feeds the fitness: the last e training-episode losses, or
/// the mean squared TD error observed while evaluating.
enum class LossSource { FinalTraining, EvalTdError };
std::string_view to_string(LossSource source);
LossSource parse_loss_source(std::string_view text);

/// Environment id of the analytic evaluator: fitness peaks at gamma = 0.5 and
/// no agent is trained.
inline constexpr std::string_view kToyEnv = "toy";

struct ExperimentConfig {
  std::string run_id = "run";
  SearchMethod method = SearchMethod::GA;
  std::string algorithm = "dqn";
  std::string env = "cartpole";
  std::uint64_t seed = 0;
  int workers = 1;
  LossSource loss_source = LossSource::FinalTraining;
  int eval_step_cap = 100;

  GAConfig ga;
  BOConfig bo;
  int random_budget = 30;
  int random_eval_episodes = 10;

  /// Search-space overrides in file order: parameter name, value list.
  std::vector<std::pair<std::string, std::vector<std::string>>> space;

  int eval_episodes() const;
  /// Every key in a fixed order; two configs are equal iff these agree.
  std::string canonical() const;
  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return a.canonical() == b.canonical();
  }
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& message, int line = 0);
  const std::string& key() const { return key_; }
  const std::string& message() const { return message_; }
  int line() const { return line_; }

 private:
  std::string key_;
  std::string message_;
  int line_;
};

/// Parses `key = value` lines; '#' starts a comment. Later keys override
/// earlier ones. Throws ConfigError naming the offending key and line.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config_file(const std::string& path);

/// Sets one key as if it appeared in the file.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Splits "key=value" as given to --set.
std::pair<std::string, std::string> split_assignment(std::string_view text);

/// Cross-field checks: known ids, compatible algorithm/env pair, method
/// settings in range, space overrides valid. Throws ConfigError.
void validate_config(const ExperimentConfig& config);

Algorithm config_algorithm(const ExperimentConfig& config);

/// The algorithm's default space with the config's overrides applied.
GeneSchema make_search_schema(const ExperimentConfig& config);

}  // namespace evohps
