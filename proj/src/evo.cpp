#include "evohps/evo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace evohps {

namespace {

constexpr double kShiftDelta = 1e-6;

// Stream tags for SeedPlan; kept far away from generation indices.
constexpr std::uint64_t kInitTag = 0xA11CE0000001ULL;
constexpr std::uint64_t kBreedTag = 0xA11CE0000002ULL;
constexpr std::uint64_t kProposeTag = 0xA11CE0000003ULL;

double fitness_of(const Individual& ind) {
  if (!ind.record) {
    throw std::invalid_argument("individual " + std::to_string(ind.index) + " of generation " +
                                std::to_string(ind.generation) + " has not been evaluated");
  }
  return ind.record->fitness;
}

}  // namespace

double compute_fitness(int n, double reward_sum, double loss_sum) {
  if (n < 1) throw std::invalid_argument("compute_fitness: episode count must be >= 1");
  if (loss_sum < 0.0) throw std::invalid_argument("compute_fitness: loss_sum must be >= 0");
  return 1.0 / static_cast<double>(n) + reward_sum + 1.0 / (loss_sum + kFitnessEpsilon);
}

FitnessRecord make_fitness_record(int n, double reward_sum, double loss_sum) {
  return FitnessRecord{n, reward_sum, loss_sum, compute_fitness(n, reward_sum, loss_sum)};
}

FitnessRecord sentinel_record(int n) {
  return make_fitness_record(std::max(n, 1), 0.0, std::numeric_limits<double>::infinity());
}

void validate(const GAConfig& config) {
  if (config.population_size < 2) throw std::invalid_argument("ga.population_size must be >= 2");
  if (!(config.crossover_rate >= 0.0 && config.crossover_rate <= 1.0)) {
    throw std::invalid_argument("ga.crossover_rate must lie in [0,1]");
  }
  if (!(config.mutation_rate >= 0.0 && config.mutation_rate <= 1.0)) {
    throw std::invalid_argument("ga.mutation_rate must lie in [0,1]");
  }
  if (config.eval_episodes < 1) throw std::invalid_argument("ga.eval_episodes must be >= 1");
  if (config.generations < 1) throw std::invalid_argument("ga.generations must be >= 1");
  if (config.elitism_count < 0 || config.elitism_count >= config.population_size) {
    throw std::invalid_argument("ga.elitism_count must satisfy 0 <= elitism < population_size");
  }
}

std::vector<double> selection_probabilities(std::span<const double> fitnesses) {
  if (fitnesses.empty()) throw std::invalid_argument("roulette_select: empty fitness sequence");
  for (double f : fitnesses) {
    if (!std::isfinite(f)) throw std::invalid_argument("roulette_select: non-finite fitness");
  }
  std::vector<double> w(fitnesses.begin(), fitnesses.end());
  const double lowest = *std::min_element(w.begin(), w.end());
  if (lowest <= 0.0) {
    for (double& x : w) x = x - lowest + kShiftDelta;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

std::size_t roulette_select(std::span<const double> fitnesses, Rng& rng) {
  const std::vector<double> p = selection_probabilities(fitnesses);
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  // Rounding can leave acc a hair below 1; fall back to the last positive weight.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return i;
  }
  return p.size() - 1;
}

std::pair<Gene, Gene> crossover_at(const Gene& parent1, const Gene& parent2, std::size_t cut) {
  if (parent1.schema_id != parent2.schema_id || parent1.values.size() != parent2.values.size()) {
    throw std::invalid_argument("crossover: parents use different schemas ('" + parent1.schema_id +
                                "' vs '" + parent2.schema_id + "')");
  }
  const std::size_t len = parent1.values.size();
  if (len >= 2 && (cut < 1 || cut > len - 1)) {
    throw std::invalid_argument("crossover: cut point out of range");
  }
  Gene c1 = parent1;
  Gene c2 = parent2;
  for (std::size_t i = cut; i < len; ++i) {
    c1.values[i] = parent2.values[i];
    c2.values[i] = parent1.values[i];
  }
  return {std::move(c1), std::move(c2)};
}

std::pair<Gene, Gene> crossover(const Gene& parent1, const Gene& parent2, Rng& rng) {
  const std::size_t len = parent1.values.size();
  if (len < 2) return crossover_at(parent1, parent2, len);
  const std::size_t cut = 1 + uniform_index(rng, len - 1);
  return crossover_at(parent1, parent2, cut);
}

Gene mutate_at(const Gene& gene, const GeneSchema& schema, std::size_t position,
               const ParamValue& value) {
  if (!validate(gene, schema)) throw std::invalid_argument("mutate: gene does not satisfy schema");
  if (position >= gene.values.size()) throw std::out_of_range("mutate: position out of range");
  if (!schema.params[position].admits(value)) {
    throw std::invalid_argument("mutate: value " + format_value(value) + " not allowed for '" +
                                schema.params[position].name() + "'");
  }
  if (gene.values[position] == value) {
    throw std::invalid_argument("mutate: replacement equals the current value");
  }
  Gene out = gene;
  out.values[position] = value;
  return out;
}

Gene mutate(const Gene& gene, const GeneSchema& schema, double mutation_rate, Rng& rng) {
  if (!validate(gene, schema)) throw std::invalid_argument("mutate: gene does not satisfy schema");
  if (gene.values.empty() || uniform01(rng) >= mutation_rate) return gene;
  const std::size_t pos = uniform_index(rng, gene.values.size());
  const HyperparamSpec& spec = schema.params[pos];
  Gene out = gene;
  if (spec.is_discrete()) {
    const std::size_t m = spec.allowed().size();
    if (m < 2) return out;
    // Draw among the m-1 values that differ from the current one.
    const std::size_t current = *spec.index_of(gene.values[pos]);
    std::size_t pick = uniform_index(rng, m - 1);
    if (pick >= current) ++pick;
    out.values[pos] = spec.allowed()[pick];
  } else if (spec.kind() == SpecKind::ContinuousRange) {
    double v = std::get<double>(gene.values[pos]);
    while (v == std::get<double>(gene.values[pos])) {
      v = spec.lo() + uniform01(rng) * (spec.hi() - spec.lo());
    }
    out.values[pos] = v;
  } else {
    const auto count = static_cast<std::size_t>(spec.hi() - spec.lo()) + 1;
    if (count < 2) return out;
    const auto current = static_cast<std::size_t>(std::get<double>(gene.values[pos]) - spec.lo());
    std::size_t pick = uniform_index(rng, count - 1);
    if (pick >= current) ++pick;
    out.values[pos] = spec.lo() + static_cast<double>(pick);
  }
  return out;
}

std::vector<Gene> next_generation(const std::vector<Individual>& evaluated,
                                  const GeneSchema& schema, const GAConfig& config, Rng& rng) {
  validate(config);
  if (evaluated.size() != static_cast<std::size_t>(config.population_size)) {
    throw std::invalid_argument("next_generation: expected " +
                                std::to_string(config.population_size) + " individuals, got " +
                                std::to_string(evaluated.size()));
  }
  std::vector<double> fitness;
  fitness.reserve(evaluated.size());
  for (const auto& ind : evaluated) fitness.push_back(fitness_of(ind));

  std::vector<std::size_t> order(evaluated.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fitness[a] > fitness[b]; });

  const auto p = static_cast<std::size_t>(config.population_size);
  std::vector<Gene> out;
  out.reserve(p);
  for (int e = 0; e < config.elitism_count; ++e) out.push_back(evaluated[order[e]].gene);

  while (out.size() < p) {
    const Gene& a = evaluated[roulette_select(fitness, rng)].gene;
    const Gene& b = evaluated[roulette_select(fitness, rng)].gene;
    auto children = uniform01(rng) < config.crossover_rate ? crossover(a, b, rng)
                                                           : std::pair<Gene, Gene>{a, b};
    out.push_back(mutate(children.first, schema, config.mutation_rate, rng));
    if (out.size() < p) out.push_back(mutate(children.second, schema, config.mutation_rate, rng));
  }
  return out;
}

BatchEvaluator sequential_evaluator(std::function<FitnessRecord(const EvalRequest&)> fn) {
  return [fn = std::move(fn)](std::span<const EvalRequest> requests) {
    std::vector<EvalOutcome> out;
    out.reserve(requests.size());
    for (const auto& req : requests) {
      try {
        out.push_back(EvalOutcome{fn(req), {}});
      } catch (const std::exception& ex) {
        out.push_back(EvalOutcome{std::nullopt, ex.what()});
      }
    }
    return out;
  };
}

std::uint64_t SeedPlan::individual_seed(int generation, int index) const {
  return derive_seed(master_seed, run_id, static_cast<std::uint64_t>(generation),
                     static_cast<std::uint64_t>(index));
}

Rng SeedPlan::init_stream() const { return Rng(derive_seed(master_seed, run_id, kInitTag, 0)); }

Rng SeedPlan::breeding_stream(int generation) const {
  return Rng(derive_seed(master_seed, run_id, kBreedTag, static_cast<std::uint64_t>(generation)));
}

Rng SeedPlan::proposal_stream(int step) const {
  return Rng(derive_seed(master_seed, run_id, kProposeTag, static_cast<std::uint64_t>(step)));
}

std::vector<double> SearchHistory::generation_best() const {
  std::vector<double> best(static_cast<std::size_t>(generation_count()),
                           -std::numeric_limits<double>::infinity());
  for (const auto& ind : individuals) {
    if (ind.record) {
      auto& slot = best[static_cast<std::size_t>(ind.generation)];
      slot = std::max(slot, ind.record->fitness);
    }
  }
  return best;
}

int SearchHistory::generation_count() const {
  int g = 0;
  for (const auto& ind : individuals) g = std::max(g, ind.generation + 1);
  return g;
}

void apply_outcome(Individual& individual, const EvalOutcome& outcome, int eval_episodes) {
  if (outcome.record && std::isfinite(outcome.record->fitness)) {
    individual.record = outcome.record;
    individual.error.clear();
  } else {
    individual.record = sentinel_record(eval_episodes);
    individual.error = outcome.error.empty() ? "evaluation failed" : outcome.error;
  }
}

void append_to_history(SearchHistory& history, const Individual& individual) {
  history.individuals.push_back(individual);
  const double f = individual.record->fitness;
  if (!history.best || f > history.best->record->fitness) history.best = individual;
  history.best_so_far.push_back(history.best->record->fitness);
}

std::vector<Individual> evaluate_generation(const std::vector<Gene>& genes, int generation,
                                       int eval_episodes, const BatchEvaluator& evaluator,
                                       const SeedPlan& seeds) {
  std::vector<EvalRequest> requests;
  std::vector<Individual> individuals;
  for (std::size_t i = 0; i < genes.size(); ++i) {
    const int idx = static_cast<int>(i);
    const std::uint64_t seed = seeds.individual_seed(generation, idx);
    requests.push_back(EvalRequest{generation, idx, genes[i], seed, eval_episodes});
    individuals.push_back(Individual{genes[i], seed, std::nullopt, generation, idx, {}});
  }
  const std::vector<EvalOutcome> outcomes = evaluator(requests);
  if (outcomes.size() != requests.size()) {
    throw std::runtime_error("evaluator returned " + std::to_string(outcomes.size()) +
                             " outcomes for " + std::to_string(requests.size()) + " requests");
  }
  for (std::size_t i = 0; i < individuals.size(); ++i) {
    apply_outcome(individuals[i], outcomes[i], eval_episodes);
  }
  return individuals;
}

SearchHistory run_ga(const GAConfig& config, const GeneSchema& schema,
                     const BatchEvaluator& evaluator, const SeedPlan& seeds) {
  validate(config);
  SearchHistory history;
  history.method = "ga";

  Rng init = seeds.init_stream();
  std::vector<Gene> genes;
  for (int i = 0; i < config.population_size; ++i) genes.push_back(sample_gene(schema, init));

  for (int g = 0; g < config.generations; ++g) {
    const auto individuals = evaluate_generation(genes, g, config.eval_episodes, evaluator, seeds);
    for (const auto& ind : individuals) append_to_history(history, ind);
    if (g + 1 < config.generations) {
      Rng breed = seeds.breeding_stream(g);
      genes = next_generation(individuals, schema, config, breed);
    }
  }
  return history;
}

SearchHistory run_random(int budget, int eval_episodes, const GeneSchema& schema,
                         const BatchEvaluator& evaluator, const SeedPlan& seeds) {
  if (budget < 1) throw std::invalid_argument("random search budget must be >= 1");
  if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be >= 1");
  SearchHistory history;
  history.method = "random";
  Rng init = seeds.init_stream();
  std::vector<Gene> genes;
  for (int i = 0; i < budget; ++i) genes.push_back(sample_gene(schema, init));
  for (const auto& ind : evaluate_generation(genes, 0, eval_episodes, evaluator, seeds)) {
    append_to_history(history, ind);
  }
  return history;
}

}  // namespace evohps
