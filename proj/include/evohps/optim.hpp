#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace evohps {

enum class OptimizerKind { SGD, Adam, CG, LBFGS, LM };

std::string_view to_string(OptimizerKind kind);
/// Accepts the gene values "sgd", "adam", "cg", "lbfgs", "lm".
OptimizerKind parse_optimizer(std::string_view name);

/// params - learning_rate * grad
std::vector<double> sgd_step(std::span<const double> params, std::span<const double> grad,
                             double learning_rate);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// Bias-corrected Adam update applied in place. Moments are sized lazily on
/// the first call.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad,
               const AdamOptions& options);

/// Returns f(x) and, when `grad` is non-empty, writes the gradient into it.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct MinimizeOptions {
  int max_iters = 100;
  double tol = 1e-6;          // stop when |grad| <= tol
  double initial_step = 1.0;  // first trial step, scaled by 1/|grad| when |grad| > 1
};

struct MinimizeResult {
  std::vector<double> x;
  int iterations = 0;
  double value = 0.0;
  double grad_norm = 0.0;
};

/// Nonlinear conjugate gradient, Polak-Ribiere-plus, with Armijo backtracking.
MinimizeResult cg_minimize(const Objective& objective, std::vector<double> x0,
                           const MinimizeOptions& options = {});

/// Limited-memory BFGS (two-loop recursion) with Armijo backtracking. A
/// curvature pair with s.y <= 1e-10 is dropped and clears the memory.
MinimizeResult lbfgs_minimize(const Objective& objective, std::vector<double> x0, int memory = 10,
                              const MinimizeOptions& options = {});

/// Fills residuals at x and, when `jacobian` is non-null, d residual / d x.
using ResidualFn =
    std::function<void(std::span<const double> x, Eigen::VectorXd& residual, Eigen::MatrixXd* jacobian)>;

struct LmStep {
  std::vector<double> x;     // x + step when accepted, x otherwise
  double lambda = 0.0;       // damping for the next call
  bool accepted = false;
  Eigen::VectorXd step;      // solution of the damped normal equations
  double cost_before = 0.0;  // |r|^2 at the input point
  double cost_after = 0.0;   // |r|^2 at the trial point
};

/// One Levenberg-Marquardt iteration: solve (J'J + lambda diag(J'J)) step =
/// -J'r, accept if |r|^2 drops (lambda /= 10), otherwise reject (lambda *= 10).
/// `diag_floor` is added to diag(J'J) before scaling. Throws
/// std::runtime_error when the damped system is singular.
LmStep lm_step(const ResidualFn& residuals, std::span<const double> x, double lambda,
               double diag_floor = 0.0);

}  // namespace evohps
