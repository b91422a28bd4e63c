#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "evohps/evo.hpp"
#include "evohps/hyperspace.hpp"
#include "evohps/random.hpp"

namespace evohps {

struct Observation {
  std::vector<double> x;  // unit-cube coordinates
  double y = 0.0;
};

struct KernelParams {
  double lengthscale = 0.2;
  double signal_variance = 1.0;
  double noise_variance = 1e-4;
};

/// Gaussian-process surrogate with a squared-exponential kernel.
struct GPModel {
  KernelParams kernel;
  std::vector<Observation> observations;
  Eigen::MatrixXd chol;   // lower factor of K + noise * I
  Eigen::VectorXd alpha;  // (K + noise * I)^-1 y
};

/// sigma_f^2 * exp(-|x - x'|^2 / (2 l^2)).
double se_kernel(std::span<const double> x, std::span<const double> x2, double lengthscale,
                 double signal_variance);

/// Builds and factorizes the Gram matrix. Throws std::runtime_error when the
/// covariance is not positive definite (e.g. duplicate inputs without noise).
GPModel gp_fit(std::vector<Observation> observations, const KernelParams& kernel);

struct Prediction {
  double mean = 0.0;
  double stddev = 0.0;
};

Prediction gp_predict(const GPModel& model, std::span<const double> x);

struct AcquisitionKind {
  enum class Type { ExpectedImprovement, ProbabilityOfImprovement, UpperConfidenceBound };
  Type type = Type::ExpectedImprovement;
  double kappa = 2.0;  // UCB exploration weight

  static AcquisitionKind expected_improvement() { return {Type::ExpectedImprovement, 0.0}; }
  static AcquisitionKind probability_of_improvement() { return {Type::ProbabilityOfImprovement, 0.0}; }
  static AcquisitionKind ucb(double kappa);
};

/// Accepts "ei", "pi" or "ucb"; throws std::invalid_argument otherwise.
AcquisitionKind parse_acquisition(std::string_view name, double kappa = 2.0);
std::string_view to_string(AcquisitionKind::Type type);

double normal_pdf(double z);
double normal_cdf(double z);

double acquisition(const GPModel& model, std::span<const double> x, const AcquisitionKind& kind,
                   double best_y);

struct AcquisitionSearch {
  int random_candidates = 1024;
  int refined_starts = 32;
  int refinement_steps = 100;  // coordinate line searches per start
};

/// Maps a cube point to the point actually scored, e.g. its grid snap.
using CubeSnap = std::function<std::vector<double>(const std::vector<double>&)>;

/// Multi-start maximization of the acquisition over [0,1]^dim: random
/// candidates, then coordinate-wise golden-section ascent from the best ones.
/// With a snap, candidates are scored (and returned) at their snapped image.
std::vector<double> maximize_acquisition(const GPModel& model, std::size_t dim,
                                         const AcquisitionKind& kind, double best_y, Rng& rng,
                                         const AcquisitionSearch& search = {},
                                         const CubeSnap& snap = {});

/// Scores candidates at their grid snap, so cells already observed without
/// noise carry no improvement and the search moves on.
Gene propose_next(const GPModel& model, const GeneSchema& schema, const AcquisitionKind& kind,
                  double best_y, Rng& rng, const AcquisitionSearch& search = {});

struct BOConfig {
  int budget = 30;
  int n_init = 5;
  int eval_episodes = 10;
  AcquisitionKind acquisition = AcquisitionKind::expected_improvement();
  KernelParams kernel;
  AcquisitionSearch search;
};

/// Sequential loop: n_init random genes (generation 0), then one proposal per
/// generation until the budget is spent. Fitness is standardized before each fit.
SearchHistory run_bo(const BOConfig& config, const GeneSchema& schema,
                     const BatchEvaluator& evaluator, const SeedPlan& seeds);

}  // namespace evohps
