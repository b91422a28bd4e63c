#include "evohps/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace evohps {

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::SGD: return "sgd";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::CG: return "cg";
    case OptimizerKind::LBFGS: return "lbfgs";
    case OptimizerKind::LM: return "lm";
  }
  return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::SGD;
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "cg") return OptimizerKind::CG;
  if (name == "lbfgs") return OptimizerKind::LBFGS;
  if (name == "lm") return OptimizerKind::LM;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

std::vector<double> sgd_step(std::span<const double> params, std::span<const double> grad,
                             double learning_rate) {
  if (params.size() != grad.size()) throw std::invalid_argument("sgd_step: shape mismatch");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be > 0");
  std::vector<double> out(params.begin(), params.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= learning_rate * grad[i];
  return out;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad,
               const AdamOptions& options) {
  if (params.size() != grad.size()) throw std::invalid_argument("adam_step: shape mismatch");
  if (!(options.learning_rate > 0.0)) throw std::invalid_argument("adam_step: learning rate must be > 0");
  if (state.m.empty() && state.step == 0) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state shape mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = options.beta1 * state.m[i] + (1.0 - options.beta1) * grad[i];
    state.v[i] = options.beta2 * state.v[i] + (1.0 - options.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= options.learning_rate * mhat / (std::sqrt(vhat) + options.epsilon);
  }
}

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kShrink = 0.5;
constexpr int kMaxBacktracks = 50;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

double evaluate(const Objective& f, const std::vector<double>& x, std::vector<double>& grad) {
  const double v = f(x, grad);
  if (!std::isfinite(v)) throw std::runtime_error("objective returned a non-finite value");
  for (double g : grad) {
    if (!std::isfinite(g)) throw std::runtime_error("objective returned a non-finite gradient");
  }
  return v;
}

struct LineSearchResult {
  bool ok = false;
  double step = 0.0;
  double value = 0.0;
};

// Armijo backtracking. The first trial is refined by the minimizer of the
// quadratic through f(0), f'(0) and f(t0), which is exact on quadratics.
LineSearchResult line_search(const Objective& f, const std::vector<double>& x, double f0,
                             const std::vector<double>& dir, double slope, double t0) {
  std::vector<double> trial(x.size());
  auto value_at = [&](double t) {
    for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] + t * dir[i];
    return f(trial, {});
  };
  auto armijo = [&](double t, double v) { return std::isfinite(v) && v <= f0 + kArmijo * t * slope; };

  double t = t0;
  double ft = value_at(t);
  LineSearchResult best;
  if (armijo(t, ft)) best = {true, t, ft};
  if (std::isfinite(ft)) {
    const double curv = (ft - f0 - slope * t) / (t * t);
    if (curv > 0.0) {
      const double tq = -slope / (2.0 * curv);
      if (std::isfinite(tq) && tq > 0.0) {
        const double fq = value_at(tq);
        if (armijo(tq, fq) && (!best.ok || fq < best.value)) best = {true, tq, fq};
      }
    }
  }
  for (int k = 0; !best.ok && k < kMaxBacktracks; ++k) {
    t *= kShrink;
    ft = value_at(t);
    if (armijo(t, ft)) best = {true, t, ft};
  }
  return best;
}

double first_step(const MinimizeOptions& options, double gnorm) {
  return options.initial_step / std::max(1.0, gnorm);
}

}  // namespace

MinimizeResult cg_minimize(const Objective& objective, std::vector<double> x0,
                           const MinimizeOptions& options) {
  if (!(options.tol > 0.0)) throw std::invalid_argument("cg_minimize: tol must be > 0");
  MinimizeResult res;
  res.x = std::move(x0);
  std::vector<double> g(res.x.size());
  res.value = evaluate(objective, res.x, g);
  res.grad_norm = norm(g);
  if (res.grad_norm <= options.tol) return res;

  std::vector<double> d(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) d[i] = -g[i];
  std::vector<double> g_new(g.size());
  double t0 = first_step(options, res.grad_norm);
  double prev_slope = 0.0;
  double prev_step = 0.0;

  for (int it = 1; it <= options.max_iters; ++it) {
    double slope = dot(g, d);
    if (slope >= 0.0) {  // not a descent direction: restart
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = -g[i];
      slope = -res.grad_norm * res.grad_norm;
    }
    if (it > 1) t0 = std::max(1e-10, prev_step * prev_slope / slope);
    const LineSearchResult ls = line_search(objective, res.x, res.value, d, slope, t0);
    if (!ls.ok) break;
    for (std::size_t i = 0; i < d.size(); ++i) res.x[i] += ls.step * d[i];
    res.value = evaluate(objective, res.x, g_new);
    res.iterations = it;
    res.grad_norm = norm(g_new);
    if (res.grad_norm <= options.tol) break;

    double num = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) num += g_new[i] * (g_new[i] - g[i]);
    const double beta = std::max(0.0, num / dot(g, g));
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = -g_new[i] + beta * d[i];
    prev_slope = slope;
    prev_step = ls.step;
    g.swap(g_new);
  }
  return res;
}

MinimizeResult lbfgs_minimize(const Objective& objective, std::vector<double> x0, int memory,
                              const MinimizeOptions& options) {
  if (memory < 1) throw std::invalid_argument("lbfgs_minimize: memory must be >= 1");
  if (!(options.tol > 0.0)) throw std::invalid_argument("lbfgs_minimize: tol must be > 0");
  MinimizeResult res;
  res.x = std::move(x0);
  const std::size_t n = res.x.size();
  std::vector<double> g(n);
  res.value = evaluate(objective, res.x, g);
  res.grad_norm = norm(g);
  if (res.grad_norm <= options.tol) return res;

  std::deque<std::vector<double>> s_hist;
  std::deque<std::vector<double>> y_hist;
  std::deque<double> rho_hist;
  std::vector<double> d(n);
  std::vector<double> g_new(n);
  std::vector<double> alpha(static_cast<std::size_t>(memory));

  for (int it = 1; it <= options.max_iters; ++it) {
    // Two-loop recursion for d = -H g.
    std::vector<double> q = g;
    const std::size_t k = s_hist.size();
    for (std::size_t j = k; j-- > 0;) {
      alpha[j] = rho_hist[j] * dot(s_hist[j], q);
      for (std::size_t i = 0; i < n; ++i) q[i] -= alpha[j] * y_hist[j][i];
    }
    double gamma = 1.0;
    if (k > 0) gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
    for (double& qi : q) qi *= gamma;
    for (std::size_t j = 0; j < k; ++j) {
      const double b = rho_hist[j] * dot(y_hist[j], q);
      for (std::size_t i = 0; i < n; ++i) q[i] += s_hist[j][i] * (alpha[j] - b);
    }
    for (std::size_t i = 0; i < n; ++i) d[i] = -q[i];
    double slope = dot(g, d);
    if (slope >= 0.0) {
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      slope = -res.grad_norm * res.grad_norm;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    const double t0 = k == 0 ? first_step(options, res.grad_norm) : 1.0;
    const LineSearchResult ls = line_search(objective, res.x, res.value, d, slope, t0);
    if (!ls.ok) break;

    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = ls.step * d[i];
      res.x[i] += s[i];
    }
    res.value = evaluate(objective, res.x, g_new);
    res.iterations = it;
    res.grad_norm = norm(g_new);
    if (res.grad_norm <= options.tol) break;

    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = g_new[i] - g[i];
    const double sy = dot(s, y);
    if (sy > 1e-10) {
      if (static_cast<int>(s_hist.size()) == memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    } else {
      // Negative curvature makes the stored pairs stale: restart from a scaled gradient step.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    g.swap(g_new);
  }
  return res;
}

LmStep lm_step(const ResidualFn& residuals, std::span<const double> x, double lambda,
               double diag_floor) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lm_step: lambda must be > 0");
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  residuals(x, r, &jac);
  if (jac.rows() != r.size() || jac.cols() != n) {
    throw std::invalid_argument("lm_step: Jacobian shape does not match residuals and parameters");
  }
  if (!r.allFinite() || !jac.allFinite()) {
    throw std::runtime_error("lm_step: residuals or Jacobian are not finite");
  }
  const Eigen::Index m = r.size();
  const Eigen::VectorXd rhs = -(jac.transpose() * r);
  Eigen::VectorXd diag = jac.colwise().squaredNorm().transpose();
  diag.array() += diag_floor;
  const Eigen::VectorXd damping = lambda * diag;
  const char* singular =
      "lm_step: damped normal equations are singular; increase lambda or the diagonal floor";

  Eigen::VectorXd step;
  if (n <= m || n <= 256) {
    Eigen::MatrixXd a = jac.transpose() * jac;
    a.diagonal() += damping;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw std::runtime_error(singular);
    step = llt.solve(rhs);
  } else {
    // Woodbury: (D + J'J)^-1 v = D^-1 v - D^-1 J' (I + J D^-1 J')^-1 J D^-1 v.
    if ((damping.array() <= 0.0).any()) throw std::runtime_error(singular);
    const Eigen::VectorXd dinv = damping.cwiseInverse();
    const Eigen::VectorXd dv = dinv.cwiseProduct(rhs);
    const Eigen::MatrixXd jd = jac * dinv.asDiagonal();
    Eigen::MatrixXd small = jd * jac.transpose();
    small.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(small);
    if (llt.info() != Eigen::Success) throw std::runtime_error(singular);
    step = dv - jd.transpose() * llt.solve(jac * dv);
  }
  if (!step.allFinite()) throw std::runtime_error(singular);

  LmStep out;
  out.step = step;
  out.cost_before = r.squaredNorm();
  std::vector<double> trial(x.begin(), x.end());
  for (Eigen::Index i = 0; i < n; ++i) trial[static_cast<std::size_t>(i)] += step(i);
  Eigen::VectorXd r_new;
  residuals(trial, r_new, nullptr);
  out.cost_after = r_new.allFinite() ? r_new.squaredNorm() : std::numeric_limits<double>::infinity();
  out.accepted = out.cost_after < out.cost_before;
  if (out.accepted) {
    out.x = std::move(trial);
    out.lambda = std::max(lambda / 10.0, 1e-12);
  } else {
    out.x.assign(x.begin(), x.end());
    out.lambda = std::min(lambda * 10.0, 1e12);
  }
  return out;
}

}  // namespace evohps
