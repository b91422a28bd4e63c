#include "evohps/rlalgos.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace evohps {

double td_target(double reward, double next_q, bool done, double gamma) {
  return done ? reward : reward + gamma * next_q;
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw std::out_of_range("ReplayBuffer::at: index out of range");
  // Once full, next_ points at the oldest slot.
  const std::size_t start = data_.size() < capacity_ ? 0 : next_;
  return data_[(start + i) % data_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, Rng& rng) const {
  if (data_.size() < batch || batch == 0) {
    throw std::logic_error("ReplayBuffer: cannot sample " + std::to_string(batch) + " from " +
                           std::to_string(data_.size()) + " transitions");
  }
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = uniform_index(rng, data_.size());
  return idx;
}

bool TrainReport::same_trace(const TrainReport& other) const {
  return episodes == other.episodes && episode_rewards == other.episode_rewards &&
         episode_losses == other.episode_losses && notes == other.notes;
}

// ---------------------------------------------------------------------------
// Gene -> settings

AgentSpec make_agent_spec(const Gene& gene, const GeneSchema& schema) {
  if (!schema.algorithm) {
    throw std::invalid_argument("make_agent_spec: schema '" + schema.id + "' has no algorithm");
  }
  if (!validate(gene, schema)) {
    throw std::invalid_argument("make_agent_spec: gene does not match schema '" + schema.id + "'");
  }
  AgentSpec s;
  s.algorithm = *schema.algorithm;
  auto integer = [&](std::string_view name) {
    return static_cast<int>(std::lround(number_at(gene, schema, name)));
  };
  s.episodes = integer("episodes");
  s.gamma = number_at(gene, schema, "gamma");
  s.learning_rate = number_at(gene, schema, "learning_rate");
  s.batch_size = integer("batch_size");
  s.neurons = integer("neurons");
  s.layers = integer("layers");
  s.optimizer = parse_optimizer(text_at(gene, schema, "optimizer"));
  s.activation = parse_activation(text_at(gene, schema, "activation"));
  if (s.algorithm == Algorithm::A2C) {
    s.trajectory_size = integer("trajectory_size");
    s.kl_coeff = number_at(gene, schema, "kl_value");
  }
  if (s.episodes < 0 || s.batch_size < 1 || s.neurons < 1 || s.layers < 0 || s.trajectory_size < 1) {
    throw std::invalid_argument("make_agent_spec: non-positive size in gene " + describe(gene, schema));
  }
  if (s.gamma < 0.0 || s.gamma > 1.0) throw std::invalid_argument("make_agent_spec: gamma outside [0,1]");
  return s;
}

void check_algorithm_env(Algorithm algorithm, const EnvSpec& env) {
  const bool discrete = env.action.is_discrete();
  if (algorithm == Algorithm::DQN && !discrete) {
    throw std::invalid_argument("DQN requires a discrete action space");
  }
  if (algorithm == Algorithm::DDPG && discrete) {
    throw std::invalid_argument("DDPG requires a continuous action space");
  }
}

void check_model_env(const MLPModel& policy, const EnvSpec& env) {
  const auto& space = env.action;
  const int want_out = space.is_discrete() ? space.discrete_count : space.dim();
  const bool head_ok = space.is_discrete() ? policy.head() != Head::TanhBounded
                                           : policy.head() == Head::TanhBounded;
  if (policy.layer_dims().empty() || policy.input_dim() != env.observation_dim ||
      policy.output_dim() != want_out || !head_ok) {
    std::string msg = "model incompatible with environment: expected input " +
                      std::to_string(env.observation_dim) + ", output " + std::to_string(want_out) +
                      (space.is_discrete() ? " (linear or softmax head)" : " (tanh head)");
    if (!policy.layer_dims().empty()) {
      msg += "; model has input " + std::to_string(policy.input_dim()) + ", output " +
             std::to_string(policy.output_dim()) + ", head " + std::string(to_string(policy.head()));
    }
    throw std::invalid_argument(msg);
  }
}

namespace {

using Clock = std::chrono::steady_clock;

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

Eigen::Map<const Eigen::VectorXd> as_vec(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}


// Maps a tanh output in [-1,1] to the box [lo,hi].
std::vector<double> to_env_action(const ActionSpace& space, std::span<const double> u) {
  std::vector<double> a(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double mid = 0.5 * (space.lo[k] + space.hi[k]);
    const double half = 0.5 * (space.hi[k] - space.lo[k]);
    a[k] = mid + half * std::clamp(u[k], -1.0, 1.0);
  }
  return a;
}

std::vector<double> to_unit_action(const ActionSpace& space, const std::vector<double>& a) {
  std::vector<double> u(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double mid = 0.5 * (space.lo[k] + space.hi[k]);
    const double half = 0.5 * (space.hi[k] - space.lo[k]);
    u[k] = half > 0 ? (a[k] - mid) / half : 0.0;
  }
  return u;
}

std::vector<int> with_ends(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

void require_finite(double loss, const char* algo, int episode) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error(std::string(algo) + ": non-finite loss at episode " +
                             std::to_string(episode) + "; try a smaller learning rate");
  }
}

// Episodes that saw no update inherit the previous update's loss; leading
// ones take the first. With no update at all the trace is +inf, which drives
// the loss term of the fitness to zero.
void fill_loss_gaps(std::vector<double>& losses) {
  auto first = std::find_if(losses.begin(), losses.end(), [](double v) { return !std::isnan(v); });
  if (first == losses.end()) {
    std::fill(losses.begin(), losses.end(), std::numeric_limits<double>::infinity());
    return;
  }
  double carry = *first;
  for (auto& v : losses) {
    if (std::isnan(v)) {
      v = carry;
    } else {
      carry = v;
    }
  }
}

ForwardCache column_cache(const ForwardCache& cache, Eigen::Index i) {
  ForwardCache c;
  c.layers.reserve(cache.layers.size());
  for (const auto& m : cache.layers) c.layers.emplace_back(m.col(i));
  return c;
}

// Least-squares fit of selected outputs: residual_i = out(row_i, i) - target_i.
struct Regression {
  Eigen::MatrixXd inputs;
  std::vector<int> rows;
  Eigen::VectorXd targets;
};

Objective regression_objective(MLPModel& scratch, const Regression& r) {
  return [&scratch, &r](std::span<const double> x, std::span<double> grad) {
    scratch.set_parameters(x);
    ForwardCache cache;
    const Eigen::MatrixXd out = forward_batch(scratch, r.inputs, grad.empty() ? nullptr : &cache);
    const auto b = out.cols();
    Eigen::MatrixXd og = Eigen::MatrixXd::Zero(out.rows(), b);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
      const double d = out(r.rows[static_cast<std::size_t>(i)], i) - r.targets(i);
      loss += d * d;
      og(r.rows[static_cast<std::size_t>(i)], i) = 2.0 * d / static_cast<double>(b);
    }
    if (!grad.empty()) {
      const auto g = backward_batch(scratch, cache, og);
      std::copy(g.params.begin(), g.params.end(), grad.begin());
    }
    return loss / static_cast<double>(b);
  };
}

ResidualFn regression_residuals(MLPModel& scratch, const Regression& r) {
  return [&scratch, &r](std::span<const double> x, Eigen::VectorXd& res, Eigen::MatrixXd* jac) {
    scratch.set_parameters(x);
    ForwardCache cache;
    const Eigen::MatrixXd out = forward_batch(scratch, r.inputs, jac ? &cache : nullptr);
    const auto b = out.cols();
    res.resize(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      res(i) = out(r.rows[static_cast<std::size_t>(i)], i) - r.targets(i);
    }
    if (!jac) return;
    jac->resize(b, static_cast<Eigen::Index>(scratch.parameter_count()));
    std::vector<double> og(static_cast<std::size_t>(out.rows()), 0.0);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto row = static_cast<std::size_t>(r.rows[static_cast<std::size_t>(i)]);
      og[row] = 1.0;
      const auto g = backward(scratch, column_cache(cache, i), og);
      og[row] = 0.0;
      jac->row(i) = Eigen::Map<const Eigen::RowVectorXd>(g.params.data(),
                                                         static_cast<Eigen::Index>(g.params.size()));
    }
  };
}

// Applies one training update with the gene's optimizer. Adam and SGD take a
// single step; CG and L-BFGS run a short inner minimization of the batch loss;
// LM runs a few damped Gauss-Newton iterations on the batch residuals.
class ParamUpdater {
 public:
  ParamUpdater(OptimizerKind kind, double learning_rate, int inner_iterations)
      : kind_(kind), lr_(learning_rate), inner_(std::max(1, inner_iterations)),
        lambda_(1.0 / std::max(learning_rate, 1e-12)) {}

  OptimizerKind kind() const { return kind_; }

  /// Returns the batch loss before the update.
  double update(MLPModel& model, const Objective& objective, const ResidualFn* residuals = nullptr) {
    auto params = model.parameters();
    grad_.assign(params.size(), 0.0);
    const double loss = objective(params, grad_);
    if (!std::isfinite(loss)) return loss;
    switch (kind_) {
      case OptimizerKind::SGD: {
        for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr_ * grad_[k];
        break;
      }
      case OptimizerKind::Adam: {
        AdamOptions opt;
        opt.learning_rate = lr_;
        adam_step(adam_, params, grad_, opt);
        break;
      }
      case OptimizerKind::CG:
      case OptimizerKind::LBFGS: {
        MinimizeOptions opt;
        opt.max_iters = inner_;
        opt.tol = 1e-12;
        opt.initial_step = lr_;
        std::vector<double> x0(params.begin(), params.end());
        const auto r = kind_ == OptimizerKind::CG ? cg_minimize(objective, std::move(x0), opt)
                                                  : lbfgs_minimize(objective, std::move(x0), 10, opt);
        model.set_parameters(r.x);
        break;
      }
      case OptimizerKind::LM: {
        if (!residuals) throw std::logic_error("LM update needs a residual function");
        std::vector<double> x(params.begin(), params.end());
        for (int it = 0; it < inner_; ++it) {
          try {
            auto step = lm_step(*residuals, x, lambda_, 1e-6);
            lambda_ = step.lambda;
            x = std::move(step.x);
          } catch (const std::runtime_error&) {
            lambda_ = std::min(lambda_ * 10.0, 1e12);
          }
        }
        model.set_parameters(x);
        break;
      }
    }
    return loss;
  }

 private:
  OptimizerKind kind_;
  double lr_;
  int inner_;
  double lambda_;
  AdamState adam_;
  std::vector<double> grad_;
};

// Policy-gradient style losses have no residual form, so LM falls back to Adam.
OptimizerKind policy_optimizer(OptimizerKind kind, std::vector<std::string>& notes) {
  if (kind != OptimizerKind::LM) return kind;
  notes.emplace_back("lm has no residual form for the policy loss; policy trained with adam");
  return OptimizerKind::Adam;
}

struct Batch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd next_states;
  Eigen::MatrixXd actions;  // continuous only
  std::vector<int> discrete;
  Eigen::VectorXd rewards;
  std::vector<bool> done;
};

Batch gather(const ReplayBuffer& buffer, const std::vector<std::size_t>& idx) {
  const auto& first = buffer.slot(idx.front());
  const auto n = static_cast<Eigen::Index>(idx.size());
  const auto obs = static_cast<Eigen::Index>(first.state.size());
  Batch b;
  b.states.resize(obs, n);
  b.next_states.resize(obs, n);
  b.rewards.resize(n);
  b.done.resize(idx.size());
  const bool continuous = std::holds_alternative<std::vector<double>>(first.action);
  if (continuous) {
    b.actions.resize(static_cast<Eigen::Index>(std::get<std::vector<double>>(first.action).size()), n);
  } else {
    b.discrete.resize(idx.size());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = buffer.slot(idx[static_cast<std::size_t>(i)]);
    b.states.col(i) = as_vec(t.state);
    b.next_states.col(i) = as_vec(t.next_state);
    b.rewards(i) = t.reward;
    b.done[static_cast<std::size_t>(i)] = t.done;
    if (continuous) {
      b.actions.col(i) = as_vec(std::get<std::vector<double>>(t.action));
    } else {
      b.discrete[static_cast<std::size_t>(i)] = std::get<int>(t.action);
    }
  }
  return b;
}

double mean_or_nan(double sum, int count) {
  return count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

Action greedy_action(const MLPModel& policy, const ActionSpace& space, std::span<const double> obs) {
  const auto out = forward(policy, obs).output;
  if (space.is_discrete()) return argmax(out);
  return to_env_action(space, out);
}

void soft_update(MLPModel& target, const MLPModel& online, double tau) {
  auto t = target.parameters();
  const auto o = online.parameters();
  if (t.size() != o.size()) throw std::invalid_argument("soft_update: parameter counts differ");
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = tau * o[k] + (1.0 - tau) * t[k];
}

double categorical_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("categorical_kl: length mismatch");
  constexpr double floor = 1e-12;
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    kl += p[k] * (std::log(std::max(p[k], floor)) - std::log(std::max(q[k], floor)));
  }
  return std::max(kl, 0.0);
}

// ---------------------------------------------------------------------------
// DQN

TrainedAgent dqn_train(Environment& env, const AgentSpec& spec, std::uint64_t seed) {
  check_algorithm_env(Algorithm::DQN, env.spec());
  const auto start = Clock::now();
  const auto& es = env.spec();
  const int n_actions = es.action.discrete_count;
  Rng rng(seed);

  TrainedAgent agent{init_model(with_ends(es.observation_dim, spec.hidden_dims(), n_actions),
                                spec.activation, Head::Linear, rng),
                     std::nullopt, {}};
  MLPModel& q = agent.policy;
  MLPModel target = q;
  MLPModel scratch = q;
  ReplayBuffer buffer(spec.replay_capacity);
  ParamUpdater updater(spec.optimizer, spec.learning_rate, spec.inner_iterations);
  const auto batch = static_cast<std::size_t>(spec.batch_size);
  const double decay = std::max(1.0, spec.epsilon_decay_fraction * spec.episodes);
  long total_steps = 0;
  Regression reg;

  for (int ep = 0; ep < spec.episodes; ++ep) {
    const double frac = std::min(1.0, ep / decay);
    const double eps = spec.epsilon_start + (spec.epsilon_end - spec.epsilon_start) * frac;
    std::vector<double> obs = env.reset(rng());
    double reward_sum = 0.0, loss_sum = 0.0;
    int updates = 0;
    while (!env.done()) {
      int a;
      if (uniform01(rng) < eps) {
        a = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_actions)));
      } else {
        a = argmax(forward(q, obs).output);
      }
      auto sr = env.step(a);
      reward_sum += sr.reward;
      buffer.push({obs, a, sr.reward, sr.observation, sr.done});
      obs = std::move(sr.observation);

      if (buffer.size() >= batch) {
        const Batch b = gather(buffer, buffer.sample_indices(batch, rng));
        const Eigen::MatrixXd next_q = forward_batch(target, b.next_states);
        reg.inputs = b.states;
        reg.rows = b.discrete;
        reg.targets.resize(next_q.cols());
        for (Eigen::Index i = 0; i < next_q.cols(); ++i) {
          reg.targets(i) = td_target(b.rewards(i), next_q.col(i).maxCoeff(),
                                     b.done[static_cast<std::size_t>(i)], spec.gamma);
        }
        const auto objective = regression_objective(scratch, reg);
        const auto residuals = regression_residuals(scratch, reg);
        const double loss = updater.update(q, objective, &residuals);
        require_finite(loss, "DQN", ep);
        loss_sum += loss;
        ++updates;
      }
      if (++total_steps % spec.target_sync_steps == 0) target.set_parameters(q.parameters());
    }
    agent.report.episode_rewards.push_back(reward_sum);
    agent.report.episode_losses.push_back(mean_or_nan(loss_sum, updates));
  }
  fill_loss_gaps(agent.report.episode_losses);
  agent.report.episodes = spec.episodes;
  agent.report.seconds = elapsed(start);
  return agent;
}

// ---------------------------------------------------------------------------
// DDPG

TrainedAgent ddpg_train(Environment& env, const AgentSpec& spec, std::uint64_t seed) {
  check_algorithm_env(Algorithm::DDPG, env.spec());
  const auto start = Clock::now();
  const auto& es = env.spec();
  const int obs_dim = es.observation_dim;
  const int act_dim = es.action.dim();
  Rng rng(seed);

  TrainedAgent agent{
      init_model(with_ends(obs_dim, spec.hidden_dims(), act_dim), spec.activation, Head::TanhBounded, rng),
      init_model(with_ends(obs_dim + act_dim, spec.hidden_dims(), 1), spec.activation, Head::Linear, rng),
      {}};
  MLPModel& actor = agent.policy;
  MLPModel& critic = *agent.critic;
  MLPModel actor_target = actor, critic_target = critic;
  MLPModel actor_scratch = actor, critic_scratch = critic;
  ParamUpdater critic_updater(spec.optimizer, spec.learning_rate, spec.inner_iterations);
  ParamUpdater actor_updater(policy_optimizer(spec.optimizer, agent.report.notes), spec.learning_rate,
                             spec.inner_iterations);
  ReplayBuffer buffer(spec.replay_capacity);
  const auto batch = static_cast<std::size_t>(spec.batch_size);
  // Exploration noise in unit-action coordinates: noise_scale * range / half-range.
  const double sigma = 2.0 * spec.noise_scale;
  Regression reg;

  for (int ep = 0; ep < spec.episodes; ++ep) {
    std::vector<double> obs = env.reset(rng());
    double reward_sum = 0.0, loss_sum = 0.0;
    int updates = 0;
    while (!env.done()) {
      std::vector<double> u = forward(actor, obs).output;
      for (auto& v : u) v = std::clamp(v + sigma * standard_normal(rng), -1.0, 1.0);
      auto sr = env.step(to_env_action(es.action, u));
      reward_sum += sr.reward;
      buffer.push({obs, u, sr.reward, sr.observation, sr.done});
      obs = std::move(sr.observation);

      if (buffer.size() < batch) continue;
      const Batch b = gather(buffer, buffer.sample_indices(batch, rng));
      const auto n = b.states.cols();

      // Critic toward r + gamma Q'(s', mu'(s')).
      Eigen::MatrixXd next_in(obs_dim + act_dim, n);
      next_in.topRows(obs_dim) = b.next_states;
      next_in.bottomRows(act_dim) = forward_batch(actor_target, b.next_states);
      const Eigen::MatrixXd next_q = forward_batch(critic_target, next_in);
      reg.inputs.resize(obs_dim + act_dim, n);
      reg.inputs.topRows(obs_dim) = b.states;
      reg.inputs.bottomRows(act_dim) = b.actions;
      reg.rows.assign(static_cast<std::size_t>(n), 0);
      reg.targets.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        reg.targets(i) = td_target(b.rewards(i), next_q(0, i), b.done[static_cast<std::size_t>(i)], spec.gamma);
      }
      const auto objective = regression_objective(critic_scratch, reg);
      const auto residuals = regression_residuals(critic_scratch, reg);
      const double loss = critic_updater.update(critic, objective, &residuals);
      require_finite(loss, "DDPG", ep);
      loss_sum += loss;
      ++updates;

      // Actor ascends Q(s, mu(s)).
      const Objective actor_objective = [&](std::span<const double> x, std::span<double> grad) {
        actor_scratch.set_parameters(x);
        ForwardCache ac, cc;
        const bool need = !grad.empty();
        Eigen::MatrixXd in(obs_dim + act_dim, n);
        in.topRows(obs_dim) = b.states;
        in.bottomRows(act_dim) = forward_batch(actor_scratch, b.states, need ? &ac : nullptr);
        const Eigen::MatrixXd qv = forward_batch(critic, in, need ? &cc : nullptr);
        if (need) {
          const Eigen::MatrixXd og = Eigen::MatrixXd::Constant(1, n, -1.0 / static_cast<double>(n));
          const auto gc = backward_batch(critic, cc, og);
          const auto ga = backward_batch(actor_scratch, ac, gc.input.bottomRows(act_dim));
          std::copy(ga.params.begin(), ga.params.end(), grad.begin());
        }
        return -qv.mean();
      };
      actor_updater.update(actor, actor_objective);

      soft_update(actor_target, actor, spec.tau);
      soft_update(critic_target, critic, spec.tau);
    }
    agent.report.episode_rewards.push_back(reward_sum);
    agent.report.episode_losses.push_back(mean_or_nan(loss_sum, updates));
  }
  fill_loss_gaps(agent.report.episode_losses);
  agent.report.episodes = spec.episodes;
  agent.report.seconds = elapsed(start);
  return agent;
}

// ---------------------------------------------------------------------------
// A2C

namespace {

struct Rollout {
  std::vector<std::vector<double>> states;
  std::vector<Action> actions;
  std::vector<double> rewards;
  std::vector<bool> done;
  std::vector<double> last_state;  // bootstrap state after the final step
};

// Gaussian policy stddev in unit-action coordinates for continuous spaces.
constexpr double kPolicySigma = 0.2;
constexpr double kProbFloor = 1e-12;

}  // namespace

TrainedAgent a2c_train(Environment& env, const AgentSpec& spec, std::uint64_t seed) {
  check_algorithm_env(Algorithm::A2C, env.spec());
  const auto start = Clock::now();
  const auto& es = env.spec();
  const bool discrete = es.action.is_discrete();
  const int obs_dim = es.observation_dim;
  const int out_dim = discrete ? es.action.discrete_count : es.action.dim();
  Rng rng(seed);

  TrainedAgent agent{init_model(with_ends(obs_dim, spec.hidden_dims(), out_dim), spec.activation,
                                discrete ? Head::Softmax : Head::TanhBounded, rng),
                     init_model(with_ends(obs_dim, spec.hidden_dims(), 1), spec.activation, Head::Linear, rng),
                     {}};
  MLPModel& actor = agent.policy;
  MLPModel& critic = *agent.critic;
  MLPModel actor_scratch = actor, critic_scratch = critic;
  ParamUpdater actor_updater(policy_optimizer(spec.optimizer, agent.report.notes), spec.learning_rate,
                             spec.inner_iterations);
  ParamUpdater critic_updater(spec.optimizer, spec.learning_rate, spec.inner_iterations);
  const double var = kPolicySigma * kPolicySigma;

  int episode = 0;
  double reward_sum = 0.0, loss_sum = 0.0;
  int updates = 0;
  std::vector<double> obs;
  bool need_reset = true;
  Regression reg;

  while (episode < spec.episodes) {
    Rollout ro;
    while (static_cast<int>(ro.states.size()) < spec.trajectory_size) {
      if (need_reset) {
        obs = env.reset(rng());
        need_reset = false;
      }
      const auto out = forward(actor, obs).output;
      Action a;
      std::vector<double> env_u;
      if (discrete) {
        double u = uniform01(rng), acc = 0.0;
        int pick = out_dim - 1;
        for (int k = 0; k < out_dim; ++k) {
          acc += out[static_cast<std::size_t>(k)];
          if (u < acc) {
            pick = k;
            break;
          }
        }
        a = pick;
      } else {
        std::vector<double> u(out.size());
        for (std::size_t k = 0; k < u.size(); ++k) u[k] = out[k] + kPolicySigma * standard_normal(rng);
        a = u;
        env_u = u;
      }
      auto sr = discrete ? env.step(a) : env.step(to_env_action(es.action, env_u));
      ro.states.push_back(obs);
      ro.actions.push_back(a);
      ro.rewards.push_back(sr.reward);
      ro.done.push_back(sr.done);
      reward_sum += sr.reward;
      obs = std::move(sr.observation);
      if (sr.done) {
        agent.report.episode_rewards.push_back(reward_sum);
        agent.report.episode_losses.push_back(mean_or_nan(loss_sum, updates));
        reward_sum = loss_sum = 0.0;
        updates = 0;
        need_reset = true;
        if (++episode >= spec.episodes) break;
      }
    }
    if (ro.states.empty()) break;

    const auto n = static_cast<Eigen::Index>(ro.states.size());
    Eigen::MatrixXd states(obs_dim, n);
    for (Eigen::Index i = 0; i < n; ++i) states.col(i) = as_vec(ro.states[static_cast<std::size_t>(i)]);

    // n-step returns bootstrapped from the critic unless the rollout ended an episode.
    double ret = ro.done.back() ? 0.0 : forward(critic, obs).output[0];
    Eigen::VectorXd returns(n);
    for (Eigen::Index i = n - 1; i >= 0; --i) {
      const auto si = static_cast<std::size_t>(i);
      if (ro.done[si]) ret = 0.0;
      ret = ro.rewards[si] + spec.gamma * ret;
      returns(i) = ret;
    }
    const Eigen::MatrixXd values = forward_batch(critic, states);
    const Eigen::VectorXd adv = returns - values.row(0).transpose();
    const Eigen::MatrixXd old_out = forward_batch(actor, states);
    const double inv_n = 1.0 / static_cast<double>(n);

    // Returns the policy-gradient term; the KL penalty is added to the value.
    const Objective actor_objective = [&](std::span<const double> x, std::span<double> grad) {
      actor_scratch.set_parameters(x);
      ForwardCache cache;
      const Eigen::MatrixXd out = forward_batch(actor_scratch, states, grad.empty() ? nullptr : &cache);
      Eigen::MatrixXd og = Eigen::MatrixXd::Zero(out.rows(), n);
      double pg = 0.0, kl = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& act = ro.actions[static_cast<std::size_t>(i)];
        if (discrete) {
          const int k = std::get<int>(act);
          const double p = std::max(out(k, i), kProbFloor);
          pg -= std::log(p) * adv(i);
          og(k, i) -= adv(i) / p * inv_n;
          for (Eigen::Index j = 0; j < out.rows(); ++j) {
            const double po = old_out(j, i);
            if (po <= 0.0) continue;
            const double pn = std::max(out(j, i), kProbFloor);
            kl += po * (std::log(std::max(po, kProbFloor)) - std::log(pn));
            og(j, i) -= spec.kl_coeff * po / pn * inv_n;
          }
        } else {
          const auto& u = std::get<std::vector<double>>(act);
          for (Eigen::Index j = 0; j < out.rows(); ++j) {
            const double d = u[static_cast<std::size_t>(j)] - out(j, i);
            pg += 0.5 * d * d / var * adv(i);  // -log pi up to a constant
            og(j, i) -= d / var * adv(i) * inv_n;
            const double m = out(j, i) - old_out(j, i);
            kl += 0.5 * m * m / var;
            og(j, i) += spec.kl_coeff * m / var * inv_n;
          }
        }
      }
      if (!grad.empty()) {
        const auto g = backward_batch(actor_scratch, cache, og);
        std::copy(g.params.begin(), g.params.end(), grad.begin());
      }
      return (pg + spec.kl_coeff * kl) * inv_n;
    };
    const double actor_loss = actor_updater.update(actor, actor_objective);

    // KL between the pre- and post-update policies on this batch.
    const Eigen::MatrixXd new_out = forward_batch(actor, states);
    double kl_after = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (discrete) {
        kl_after += categorical_kl(std::span<const double>(old_out.col(i).data(), static_cast<std::size_t>(out_dim)),
                                   std::span<const double>(new_out.col(i).data(), static_cast<std::size_t>(out_dim)));
      } else {
        kl_after += 0.5 * (new_out.col(i) - old_out.col(i)).squaredNorm() / var;
      }
    }
    kl_after *= inv_n;

    reg.inputs = states;
    reg.rows.assign(static_cast<std::size_t>(n), 0);
    reg.targets = returns;
    const auto objective = regression_objective(critic_scratch, reg);
    const auto residuals = regression_residuals(critic_scratch, reg);
    const double critic_loss = critic_updater.update(critic, objective, &residuals);

    const double loss = actor_loss + spec.kl_coeff * kl_after + critic_loss;
    require_finite(loss, "A2C", episode);
    // An update spanning an episode boundary is charged to the episode in progress.
    loss_sum += loss;
    ++updates;
    if (need_reset && !agent.report.episode_losses.empty() && std::isnan(agent.report.episode_losses.back())) {
      agent.report.episode_losses.back() = loss;
    }
  }
  fill_loss_gaps(agent.report.episode_losses);
  agent.report.episodes = static_cast<int>(agent.report.episode_rewards.size());
  agent.report.seconds = elapsed(start);
  return agent;
}

TrainedAgent train_agent(Environment& env, const AgentSpec& spec, std::uint64_t seed) {
  switch (spec.algorithm) {
    case Algorithm::DQN: return dqn_train(env, spec, seed);
    case Algorithm::DDPG: return ddpg_train(env, spec, seed);
    case Algorithm::A2C: return a2c_train(env, spec, seed);
  }
  throw std::invalid_argument("train_agent: unknown algorithm");
}

// ---------------------------------------------------------------------------
// Evaluation

TdProbe make_td_probe(const TrainedAgent& agent, Algorithm algorithm, const ActionSpace& space,
                      double gamma) {
  if (algorithm == Algorithm::DQN) {
    const MLPModel q = agent.policy;
    return [q, gamma](const std::vector<double>& s, const Action& a, double r,
                      const std::vector<double>& s2, bool done) {
      const auto qs = forward(q, s).output;
      const auto q2 = forward(q, s2).output;
      const double y = td_target(r, *std::max_element(q2.begin(), q2.end()), done, gamma);
      const double d = qs[static_cast<std::size_t>(std::get<int>(a))] - y;
      return d * d;
    };
  }
  if (!agent.critic) throw std::invalid_argument("make_td_probe: agent has no critic");
  const MLPModel critic = *agent.critic;
  if (algorithm == Algorithm::DDPG) {
    const MLPModel actor = agent.policy;
    return [critic, actor, space, gamma](const std::vector<double>& s, const Action& a, double r,
                                         const std::vector<double>& s2, bool done) {
      auto in = s;
      const auto u = to_unit_action(space, std::get<std::vector<double>>(a));
      in.insert(in.end(), u.begin(), u.end());
      auto in2 = s2;
      const auto u2 = forward(actor, s2).output;
      in2.insert(in2.end(), u2.begin(), u2.end());
      const double d = forward(critic, in).output[0] -
                       td_target(r, forward(critic, in2).output[0], done, gamma);
      return d * d;
    };
  }
  return [critic, gamma](const std::vector<double>& s, const Action&, double r,
                         const std::vector<double>& s2, bool done) {
    const double d = forward(critic, s).output[0] - td_target(r, forward(critic, s2).output[0], done, gamma);
    return d * d;
  };
}

EvalResult evaluate_policy(const MLPModel& policy, Environment& env, int episodes, int step_cap,
                           std::uint64_t seed, const TdProbe* probe, std::ostream* trace) {
  check_model_env(policy, env.spec());
  if (episodes < 1) throw std::invalid_argument("evaluate_policy: episodes must be >= 1");
  if (step_cap < 1) throw std::invalid_argument("evaluate_policy: step cap must be >= 1");
  const int saved_cap = env.step_cap();
  env.set_max_episode_steps(step_cap);
  Rng rng(seed);
  EvalResult res;
  res.n = episodes;
  try {
    for (int ep = 0; ep < episodes; ++ep) {
      std::vector<double> obs = env.reset(rng());
      double total = 0.0, td = 0.0;
      int steps = 0;
      while (!env.done()) {
        const Action a = greedy_action(policy, env.spec().action, obs);
        auto sr = env.step(a);
        if (trace) *trace << format_trace_line(obs, a, sr.reward) << '\n';
        if (probe) td += (*probe)(obs, a, sr.reward, sr.observation, sr.done);
        total += sr.reward;
        ++steps;
        obs = std::move(sr.observation);
      }
      res.episode_rewards.push_back(total);
      if (probe) res.episode_td_errors.push_back(steps > 0 ? td / steps : 0.0);
      res.reward_sum += total;
    }
  } catch (...) {
    env.set_max_episode_steps(saved_cap);
    throw;
  }
  env.set_max_episode_steps(saved_cap);
  return res;
}

}  // namespace evohps
