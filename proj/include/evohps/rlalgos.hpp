#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "evohps/envs.hpp"
#include "evohps/hyperspace.hpp"
#include "evohps/net.hpp"
#include "evohps/optim.hpp"
#include "evohps/random.hpp"

namespace evohps {

/// r + gamma * next_q, or r at a terminal transition.
double td_target(double reward, double next_q, bool done, double gamma);

struct Transition {
  std::vector<double> state;
  Action action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
};

/// Fixed-capacity ring buffer with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th stored transition, oldest first.
  const Transition& at(std::size_t i) const;
  /// Uniform indices with replacement; throws std::logic_error when fewer than
  /// `batch` transitions are stored.
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const;
  /// Raw slot access for sampled indices.
  const Transition& slot(std::size_t index) const { return data_[index]; }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

struct TrainReport {
  std::vector<double> episode_rewards;
  std::vector<double> episode_losses;
  int episodes = 0;
  double seconds = 0.0;
  std::vector<std::string> notes;

  /// Equality of everything except wall-clock time.
  bool same_trace(const TrainReport& other) const;
};

/// Training settings derived from a gene plus the fixed constants the search
/// space does not cover.
struct AgentSpec {
  Algorithm algorithm = Algorithm::DQN;
  int episodes = 50;
  double gamma = 0.99;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int neurons = 64;
  int layers = 2;
  OptimizerKind optimizer = OptimizerKind::Adam;
  Activation activation = Activation::Relu;
  // A2C
  int trajectory_size = 20;
  double kl_coeff = 0.0;
  // DQN
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.5;  // of the training episodes
  int target_sync_steps = 100;
  std::size_t replay_capacity = 50000;
  // DDPG
  double noise_scale = 0.1;  // exploration stddev as a fraction of the action range
  double tau = 0.005;
  // CG, L-BFGS and LM run at most this many iterations per update
  int inner_iterations = 5;

  std::vector<int> hidden_dims() const { return std::vector<int>(static_cast<std::size_t>(layers), neurons); }
};

/// Reads gene positions by name. Throws if the schema lacks an
/// algorithm or a required position.
AgentSpec make_agent_spec(const Gene& gene, const GeneSchema& schema);

struct TrainedAgent {
  MLPModel policy;               // Q-network (DQN) or actor
  std::optional<MLPModel> critic;
  TrainReport report;
};

TrainedAgent dqn_train(Environment& env, const AgentSpec& spec, std::uint64_t seed);
TrainedAgent ddpg_train(Environment& env, const AgentSpec& spec, std::uint64_t seed);
TrainedAgent a2c_train(Environment& env, const AgentSpec& spec, std::uint64_t seed);
TrainedAgent train_agent(Environment& env, const AgentSpec& spec, std::uint64_t seed);

/// Throws std::invalid_argument when the algorithm cannot drive the action space.
void check_algorithm_env(Algorithm algorithm, const EnvSpec& env);

/// Throws std::invalid_argument naming the expected dims when the model cannot
/// act in the environment.
void check_model_env(const MLPModel& policy, const EnvSpec& env);

/// Deterministic action: argmax for linear/softmax heads, rescaled tanh output
/// for continuous spaces.
Action greedy_action(const MLPModel& policy, const ActionSpace& space, std::span<const double> obs);

/// Copies tau * online + (1 - tau) * target into target.
void soft_update(MLPModel& target, const MLPModel& online, double tau);

/// Discrete KL(p || q) with a 1e-12 floor inside the logarithms.
double categorical_kl(std::span<const double> p, std::span<const double> q);

/// Squared TD error of one evaluation transition.
using TdProbe = std::function<double(const std::vector<double>& state, const Action& action,
                                     double reward, const std::vector<double>& next_state, bool done)>;

TdProbe make_td_probe(const TrainedAgent& agent, Algorithm algorithm, const ActionSpace& space,
                      double gamma);

struct EvalResult {
  int n = 0;
  double reward_sum = 0.0;
  std::vector<double> episode_rewards;
  std::vector<double> episode_td_errors;  // mean squared TD error per episode, if probed
};

/// Plays `episodes` deterministic episodes capped at `step_cap` steps. No
/// learning happens. Optional trace receives one line per step.
EvalResult evaluate_policy(const MLPModel& policy, Environment& env, int episodes, int step_cap,
                           std::uint64_t seed, const TdProbe* probe = nullptr,
                           std::ostream* trace = nullptr);

}  // namespace evohps
