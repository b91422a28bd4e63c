#include "evohps/bayesopt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace evohps {

namespace {

constexpr double kZeroStddev = 1e-12;
const double kInvPhi = (std::sqrt(5.0) - 1.0) / 2.0;

}  // namespace

double se_kernel(std::span<const double> x, std::span<const double> x2, double lengthscale,
                 double signal_variance) {
  if (x.size() != x2.size()) {
    throw std::invalid_argument("se_kernel: dimension mismatch (" + std::to_string(x.size()) +
                                " vs " + std::to_string(x2.size()) + ")");
  }
  if (!(lengthscale > 0.0)) throw std::invalid_argument("se_kernel: lengthscale must be > 0");
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - x2[i];
    d2 += d * d;
  }
  return signal_variance * std::exp(-d2 / (2.0 * lengthscale * lengthscale));
}

GPModel gp_fit(std::vector<Observation> observations, const KernelParams& kernel) {
  if (observations.empty()) throw std::invalid_argument("gp_fit: need at least one observation");
  if (!(kernel.lengthscale > 0.0) || !(kernel.signal_variance > 0.0) ||
      !(kernel.noise_variance >= 0.0)) {
    throw std::invalid_argument("gp_fit: kernel hyperparameters must be positive");
  }
  const auto n = static_cast<Eigen::Index>(observations.size());
  const std::size_t dim = observations.front().x.size();
  Eigen::MatrixXd gram(n, n);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& oi = observations[static_cast<std::size_t>(i)];
    if (oi.x.size() != dim) throw std::invalid_argument("gp_fit: observations differ in dimension");
    if (!std::isfinite(oi.y)) throw std::invalid_argument("gp_fit: non-finite observation");
    y(i) = oi.y;
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double k = se_kernel(oi.x, observations[static_cast<std::size_t>(j)].x,
                                 kernel.lengthscale, kernel.signal_variance);
      gram(i, j) = k;
      gram(j, i) = k;
    }
    gram(i, i) += kernel.noise_variance;
  }

  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  bool ok = llt.info() == Eigen::Success;
  Eigen::MatrixXd chol;
  if (ok) {
    chol = llt.matrixL();
    const double floor = 1e-12 * kernel.signal_variance;
    for (Eigen::Index i = 0; i < n; ++i) ok = ok && chol(i, i) * chol(i, i) > floor;
  }
  if (!ok) {
    throw std::runtime_error(
        "gp_fit: covariance matrix is not positive definite (duplicate inputs?); increase "
        "noise_variance to add jitter");
  }
  GPModel model;
  model.kernel = kernel;
  model.observations = std::move(observations);
  model.alpha = llt.solve(y);
  model.chol = std::move(chol);
  return model;
}

Prediction gp_predict(const GPModel& model, std::span<const double> x) {
  const auto n = static_cast<Eigen::Index>(model.observations.size());
  Eigen::VectorXd kstar(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    kstar(i) = se_kernel(x, model.observations[static_cast<std::size_t>(i)].x,
                         model.kernel.lengthscale, model.kernel.signal_variance);
  }
  const double mean = kstar.dot(model.alpha);
  const Eigen::VectorXd v = model.chol.triangularView<Eigen::Lower>().solve(kstar);
  const double var = std::max(0.0, model.kernel.signal_variance - v.squaredNorm());
  return {mean, std::sqrt(var)};
}

AcquisitionKind AcquisitionKind::ucb(double kappa) {
  if (!std::isfinite(kappa) || kappa < 0.0) {
    throw std::invalid_argument("ucb: kappa must be finite and non-negative");
  }
  return {Type::UpperConfidenceBound, kappa};
}

AcquisitionKind parse_acquisition(std::string_view name, double kappa) {
  if (name == "ei" || name == "expected_improvement") return AcquisitionKind::expected_improvement();
  if (name == "pi" || name == "probability_of_improvement") {
    return AcquisitionKind::probability_of_improvement();
  }
  if (name == "ucb") return AcquisitionKind::ucb(kappa);
  throw std::invalid_argument("unknown acquisition kind '" + std::string(name) + "'");
}

std::string_view to_string(AcquisitionKind::Type type) {
  switch (type) {
    case AcquisitionKind::Type::ExpectedImprovement: return "ei";
    case AcquisitionKind::Type::ProbabilityOfImprovement: return "pi";
    case AcquisitionKind::Type::UpperConfidenceBound: return "ucb";
  }
  return "?";
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double acquisition(const GPModel& model, std::span<const double> x, const AcquisitionKind& kind,
                   double best_y) {
  const Prediction p = gp_predict(model, x);
  const double gain = p.mean - best_y;
  switch (kind.type) {
    case AcquisitionKind::Type::ExpectedImprovement: {
      if (p.stddev < kZeroStddev) return std::max(gain, 0.0);
      const double z = gain / p.stddev;
      return std::max(0.0, gain * normal_cdf(z) + p.stddev * normal_pdf(z));
    }
    case AcquisitionKind::Type::ProbabilityOfImprovement:
      if (p.stddev < kZeroStddev) return gain > 0.0 ? 1.0 : 0.0;
      return normal_cdf(gain / p.stddev);
    case AcquisitionKind::Type::UpperConfidenceBound:
      return p.mean + kind.kappa * p.stddev;
  }
  throw std::invalid_argument("acquisition: unknown kind");
}

namespace {

// Golden-section maximization of f over [0,1]; returns the best point seen.
template <typename F>
std::pair<double, double> golden_max(F&& f, double tol = 1e-4) {
  double a = 0.0;
  double b = 1.0;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = f(d);
    }
  }
  return fc >= fd ? std::pair{c, fc} : std::pair{d, fd};
}

}  // namespace

std::vector<double> maximize_acquisition(const GPModel& model, std::size_t dim,
                                         const AcquisitionKind& kind, double best_y, Rng& rng,
                                         const AcquisitionSearch& search, const CubeSnap& snap) {
  if (dim == 0) throw std::invalid_argument("maximize_acquisition: zero dimension");
  struct Candidate {
    std::vector<double> x;
    double value;
  };
  auto score = [&](const std::vector<double>& x) {
    return snap ? acquisition(model, snap(x), kind, best_y) : acquisition(model, x, kind, best_y);
  };
  std::vector<Candidate> pool;
  pool.reserve(static_cast<std::size_t>(search.random_candidates));
  for (int i = 0; i < search.random_candidates; ++i) {
    std::vector<double> x(dim);
    for (double& xi : x) xi = uniform01(rng);
    const double v = score(x);
    pool.push_back({std::move(x), v});
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Candidate& a, const Candidate& b) { return a.value > b.value; });
  const std::size_t starts = std::min(pool.size(), static_cast<std::size_t>(search.refined_starts));

  Candidate best = pool.front();
  for (std::size_t s = 0; s < starts; ++s) {
    Candidate cur = pool[s];
    std::size_t stale = 0;
    for (int step = 0; step < search.refinement_steps && stale < dim; ++step) {
      const std::size_t coord = static_cast<std::size_t>(step) % dim;
      std::vector<double> probe = cur.x;
      auto along = [&](double t) {
        probe[coord] = t;
        return score(probe);
      };
      const auto [t, v] = golden_max(along);
      if (v > cur.value + 1e-15) {
        cur.x[coord] = t;
        cur.value = v;
        stale = 0;
      } else {
        ++stale;
      }
    }
    if (cur.value > best.value) best = std::move(cur);
  }
  return snap ? snap(best.x) : best.x;
}

Gene propose_next(const GPModel& model, const GeneSchema& schema, const AcquisitionKind& kind,
                  double best_y, Rng& rng, const AcquisitionSearch& search) {
  const CubeSnap snap = [&schema](const std::vector<double>& x) {
    return encode_unit_cube(decode_unit_cube(x, schema), schema);
  };
  const std::vector<double> x = maximize_acquisition(model, schema.size(), kind, best_y, rng, search, snap);
  return decode_unit_cube(x, schema);
}

SearchHistory run_bo(const BOConfig& config, const GeneSchema& schema,
                     const BatchEvaluator& evaluator, const SeedPlan& seeds) {
  if (config.n_init < 1) throw std::invalid_argument("bo.n_init must be >= 1");
  if (config.budget < config.n_init) throw std::invalid_argument("bo.budget must be >= bo.n_init");
  if (config.eval_episodes < 1) throw std::invalid_argument("bo.eval_episodes must be >= 1");

  SearchHistory history;
  history.method = "bo";
  Rng init = seeds.init_stream();
  std::vector<Gene> genes;
  for (int i = 0; i < config.n_init; ++i) genes.push_back(sample_gene(schema, init));

  std::vector<Observation> raw;
  auto absorb = [&](const std::vector<Individual>& individuals) {
    for (const auto& ind : individuals) {
      append_to_history(history, ind);
      raw.push_back({encode_unit_cube(ind.gene, schema), ind.record->fitness});
    }
  };
  absorb(evaluate_generation(genes, 0, config.eval_episodes, evaluator, seeds));

  for (int step = 1; step <= config.budget - config.n_init; ++step) {
    double mean = 0.0;
    for (const auto& o : raw) mean += o.y;
    mean /= static_cast<double>(raw.size());
    double var = 0.0;
    for (const auto& o : raw) var += (o.y - mean) * (o.y - mean);
    double sd = std::sqrt(var / static_cast<double>(raw.size()));
    if (!(sd > 0.0) || !std::isfinite(sd)) sd = 1.0;

    std::vector<Observation> scaled = raw;
    double best_y = -std::numeric_limits<double>::infinity();
    for (auto& o : scaled) {
      o.y = (o.y - mean) / sd;
      best_y = std::max(best_y, o.y);
    }
    const GPModel model = gp_fit(std::move(scaled), config.kernel);
    Rng rng = seeds.proposal_stream(step);
    const Gene next = propose_next(model, schema, config.acquisition, best_y, rng, config.search);
    absorb(evaluate_generation({next}, step, config.eval_episodes, evaluator, seeds));
  }
  return history;
}

}  // namespace evohps
