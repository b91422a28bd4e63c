#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evohps/hyperspace.hpp"
#include "evohps/random.hpp"

namespace evohps {

/// Guards the inverse-loss term of the fitness against a zero loss.
inline constexpr double kFitnessEpsilon = 1e-8;

/// f = 1/n + reward_sum + 1/(loss_sum + eps).
/// Throws std::invalid_argument for n < 1 or a negative loss.
double compute_fitness(int n, double reward_sum, double loss_sum);

struct FitnessRecord {
  int n = 1;
  double reward_sum = 0.0;
  double loss_sum = 0.0;
  double fitness = 0.0;

  friend bool operator==(const FitnessRecord&, const FitnessRecord&) = default;
};

FitnessRecord make_fitness_record(int n, double reward_sum, double loss_sum);

/// Record given to an individual whose evaluation failed: zero reward and an
/// infinite loss.
FitnessRecord sentinel_record(int n);

struct Individual {
  Gene gene;
  std::uint64_t seed = 0;
  std::optional<FitnessRecord> record;
  int generation = 0;
  int index = 0;
  std::string error;  // empty unless evaluation failed

  friend bool operator==(const Individual&, const Individual&) = default;
};

struct GAConfig {
  int population_size = 8;
  double crossover_rate = 0.7;
  double mutation_rate = 0.2;
  int eval_episodes = 10;
  int generations = 10;
  int elitism_count = 1;
};

void validate(const GAConfig& config);

/// Selection probabilities used by roulette_select. Fitness values are shifted
/// by -min + 1e-6 when any of them is <= 0.
std::vector<double> selection_probabilities(std::span<const double> fitnesses);

std::size_t roulette_select(std::span<const double> fitnesses, Rng& rng);

/// Single-point crossover at cut k in [1, L-1]: child1 = p1[0,k) ++ p2[k,L).
std::pair<Gene, Gene> crossover_at(const Gene& parent1, const Gene& parent2, std::size_t cut);
std::pair<Gene, Gene> crossover(const Gene& parent1, const Gene& parent2, Rng& rng);

/// Replaces one position with the given value, which must be allowed and
/// differ from the current one.
Gene mutate_at(const Gene& gene, const GeneSchema& schema, std::size_t position,
               const ParamValue& value);
Gene mutate(const Gene& gene, const GeneSchema& schema, double mutation_rate, Rng& rng);

std::vector<Gene> next_generation(const std::vector<Individual>& evaluated,
                                  const GeneSchema& schema, const GAConfig& config, Rng& rng);

/// What the search loop asks an evaluator to score.
struct EvalRequest {
  int generation = 0;
  int index = 0;
  Gene gene;
  std::uint64_t seed = 0;
  int eval_episodes = 1;
};

/// An evaluator reply; a missing record marks a failure described by `error`.
struct EvalOutcome {
  std::optional<FitnessRecord> record;
  std::string error;
};

/// Scores a whole batch (one generation). Implementations may run the batch in
/// parallel; replies must be in request order.
using BatchEvaluator = std::function<std::vector<EvalOutcome>(std::span<const EvalRequest>)>;

/// Adapts a per-request function into a sequential batch evaluator. Exceptions
/// become failed outcomes.
BatchEvaluator sequential_evaluator(std::function<FitnessRecord(const EvalRequest&)> fn);

/// Identifies the random streams of one run.
struct SeedPlan {
  std::uint64_t master_seed = 0;
  std::string run_id = "run";

  std::uint64_t individual_seed(int generation, int index) const;
  Rng init_stream() const;
  Rng breeding_stream(int generation) const;
  Rng proposal_stream(int step) const;
};

struct SearchHistory {
  std::string method;
  std::vector<Individual> individuals;  // in evaluation order
  std::optional<Individual> best;
  std::vector<double> best_so_far;      // one entry per individual

  /// Highest fitness within each generation, indexed by generation.
  std::vector<double> generation_best() const;
  int generation_count() const;
};

SearchHistory run_ga(const GAConfig& config, const GeneSchema& schema,
                     const BatchEvaluator& evaluator, const SeedPlan& seeds);

/// Pure random sampling baseline; draws from the same stream as the initial
/// design of run_bo.
SearchHistory run_random(int budget, int eval_episodes, const GeneSchema& schema,
                         const BatchEvaluator& evaluator, const SeedPlan& seeds);

/// Applies an outcome to an individual, substituting the sentinel record on
/// failure.
void apply_outcome(Individual& individual, const EvalOutcome& outcome, int eval_episodes);

/// Scores one generation of genes; individual seeds come from the seed plan.
std::vector<Individual> evaluate_generation(const std::vector<Gene>& genes, int generation,
                                            int eval_episodes, const BatchEvaluator& evaluator,
                                            const SeedPlan& seeds);

void append_to_history(SearchHistory& history, const Individual& individual);

}  // namespace evohps
