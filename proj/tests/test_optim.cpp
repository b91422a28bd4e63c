#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evohps/optim.hpp"
#include "evohps/random.hpp"

using namespace evohps;

namespace {

// f = 0.5 x'Ax - b'x with A = [[3, 1], [1, 2]], minimizer A^-1 b = (0.2, 0.4).
double quadratic(std::span<const double> x, std::span<double> g) {
  const double a0 = 3 * x[0] + x[1] - 1.0;
  const double a1 = x[0] + 2 * x[1] - 1.0;
  if (!g.empty()) {
    g[0] = a0;
    g[1] = a1;
  }
  return 0.5 * (3 * x[0] * x[0] + 2 * x[0] * x[1] + 2 * x[1] * x[1]) - x[0] - x[1];
}

double rosenbrock(std::span<const double> x, std::span<double> g) {
  const double a = 1.0 - x[0];
  const double b = x[1] - x[0] * x[0];
  if (!g.empty()) {
    g[0] = -2 * a - 400 * x[0] * b;
    g[1] = 200 * b;
  }
  return a * a + 100 * b * b;
}

// Ill-conditioned SPD quadratic in 6 dims: diag(1..32) rotated by a fixed mix.
double spd(std::span<const double> x, std::span<double> g) {
  static const Eigen::MatrixXd A = [] {
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) q(i, j) += 0.1 * std::sin(1.0 + i * 6 + j);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
    const Eigen::MatrixXd Q = qr.householderQ();
    Eigen::VectorXd d(6);
    d << 1, 2, 4, 8, 16, 32;
    return Eigen::MatrixXd(Q * d.asDiagonal() * Q.transpose());
  }();
  const Eigen::Map<const Eigen::VectorXd> v(x.data(), 6);
  const Eigen::VectorXd Av = A * v;
  if (!g.empty()) Eigen::Map<Eigen::VectorXd>(g.data(), 6) = Av - Eigen::VectorXd::Ones(6);
  return 0.5 * v.dot(Av) - v.sum();
}

double dist_to_ones(const std::vector<double>& x) { return std::hypot(x[0] - 1.0, x[1] - 1.0); }

}  // namespace

TEST_CASE("sgd step") {
  CHECK(sgd_step(std::vector<double>{1, 1}, std::vector<double>{1, -1}, 0.1) == std::vector<double>{0.9, 1.1});
  CHECK(sgd_step(std::vector<double>{2, 3}, std::vector<double>{0, 0}, 0.1) == std::vector<double>{2, 3});
  std::vector<double> x{1.0};
  for (int i = 0; i < 2; ++i) x = sgd_step(x, std::vector<double>{2 * x[0]}, 0.1);
  CHECK(x[0] == doctest::Approx(0.64).epsilon(1e-15));
  CHECK_THROWS_AS(sgd_step(std::vector<double>{1}, std::vector<double>{1, 2}, 0.1), std::invalid_argument);
}

TEST_CASE("adam step") {
  AdamOptions opt;
  opt.learning_rate = 0.1;
  {
    AdamState st;
    std::vector<double> p{1.0, -2.0};
    adam_step(st, p, std::vector<double>{0.0, 0.0}, opt);
    CHECK(p == std::vector<double>{1.0, -2.0});
    CHECK(st.step == 1);
  }
  {
    AdamState st;
    std::vector<double> p{0.0, 0.0};
    adam_step(st, p, std::vector<double>{1000.0, -0.01}, opt);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-9));
    CHECK(p[1] == doctest::Approx(0.1).epsilon(1e-5));
  }
  {
    AdamState st;
    std::vector<double> x{0.0};
    for (int i = 0; i < 200; ++i) adam_step(st, x, std::vector<double>{2 * (x[0] - 3)}, opt);
    CHECK(std::abs(x[0] - 3.0) < 0.01);
  }
  {
    AdamState st;
    std::vector<double> p{1.0};
    adam_step(st, p, std::vector<double>{1.0}, opt);
    CHECK_THROWS_AS(adam_step(st, p, std::vector<double>{1.0, 2.0}, opt), std::invalid_argument);
  }
}

TEST_CASE("adam replays a recorded gradient stream exactly") {
  Rng rng(12);
  std::vector<std::vector<double>> grads(50, std::vector<double>(3));
  for (auto& g : grads)
    for (double& v : g) v = standard_normal(rng);
  auto run = [&] {
    AdamState st;
    std::vector<double> p{0.5, -0.5, 1.0};
    for (const auto& g : grads) adam_step(st, p, g, {});
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("cg on a quadratic is exact in two iterations") {
  MinimizeOptions opt;
  opt.max_iters = 2;
  opt.tol = 1e-12;
  const auto r = cg_minimize(quadratic, {-3.0, 5.0}, opt);
  CHECK(r.iterations <= 2);
  CHECK(std::hypot(r.x[0] - 0.2, r.x[1] - 0.4) < 1e-8);
}

TEST_CASE("minimizers at the optimum return immediately") {
  const std::vector<double> star{0.2, 0.4};
  CHECK(cg_minimize(quadratic, star).iterations == 0);
  CHECK(lbfgs_minimize(quadratic, star).iterations == 0);
}

TEST_CASE("cg on rosenbrock") {
  MinimizeOptions opt;
  opt.max_iters = 500;
  opt.tol = 1e-8;
  const auto r = cg_minimize(rosenbrock, {-1.2, 1.0}, opt);
  CHECK(r.iterations <= 500);
  CHECK(dist_to_ones(r.x) < 1e-4);
}

TEST_CASE("lbfgs on rosenbrock and quadratics") {
  MinimizeOptions opt;
  opt.max_iters = 200;
  opt.tol = 1e-6;
  const auto r = lbfgs_minimize(rosenbrock, {-1.2, 1.0}, 10, opt);
  CHECK(r.iterations <= 200);
  CHECK(dist_to_ones(r.x) < 1e-4);

  MinimizeOptions q;
  q.max_iters = 10;
  q.tol = 1e-10;
  const auto rq = lbfgs_minimize(quadratic, {-3.0, 5.0}, 10, q);
  CHECK(rq.grad_norm < 1e-10);

  MinimizeOptions m1;
  m1.max_iters = 100;
  m1.tol = 1e-10;
  const auto r1 = lbfgs_minimize(quadratic, {-3.0, 5.0}, 1, m1);
  CHECK(std::hypot(r1.x[0] - 0.2, r1.x[1] - 0.4) < 1e-8);
}

TEST_CASE("all minimizers reach a small gradient on an SPD quadratic") {
  MinimizeOptions opt;
  opt.max_iters = 500;
  opt.tol = 1e-6;
  const std::vector<double> x0(6, 3.0);
  CHECK(cg_minimize(spd, x0, opt).grad_norm <= 1e-6);
  CHECK(lbfgs_minimize(spd, x0, 10, opt).grad_norm <= 1e-6);

  // Step 0.05 is below 2 / lambda_max = 1/16, so plain gradient descent contracts.
  std::vector<double> x = x0;
  std::vector<double> g(6);
  for (int i = 0; i < 2000; ++i) {
    spd(x, g);
    x = sgd_step(x, g, 0.05);
  }
  spd(x, g);
  CHECK(Eigen::Map<Eigen::VectorXd>(g.data(), 6).norm() <= 1e-6);

  const ResidualFn res = [](std::span<const double> p, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    // 0.5|r|^2 is the quadratic above up to a constant when r = L'x - L^-1 1, A = LL'.
    static const Eigen::LLT<Eigen::MatrixXd> llt = [] {
      Eigen::MatrixXd A(6, 6);
      std::vector<double> e(6, 0.0), col(6);
      for (int j = 0; j < 6; ++j) {
        e.assign(6, 0.0);
        e[j] = 1.0;
        spd(e, col);
        for (int i = 0; i < 6; ++i) A(i, j) = col[i] + 1.0;
      }
      return Eigen::LLT<Eigen::MatrixXd>(A);
    }();
    const Eigen::MatrixXd Lt = llt.matrixU();
    const Eigen::VectorXd c = llt.matrixL().solve(Eigen::VectorXd::Ones(6));
    r = Lt * Eigen::Map<const Eigen::VectorXd>(p.data(), 6) - c;
    if (J) *J = Lt;
  };
  std::vector<double> xl = x0;
  double lambda = 1e-3;
  for (int i = 0; i < 50; ++i) {
    const auto s = lm_step(res, xl, lambda);
    xl = s.x;
    lambda = s.lambda;
  }
  spd(xl, g);
  CHECK(Eigen::Map<Eigen::VectorXd>(g.data(), 6).norm() <= 1e-6);
}

TEST_CASE("minimizers reject non-finite objectives") {
  const Objective bad = [](std::span<const double>, std::span<double> g) {
    for (double& v : g) v = 1.0;
    return std::nan("");
  };
  CHECK_THROWS_AS(cg_minimize(bad, {1.0}), std::runtime_error);
  CHECK_THROWS_AS(lbfgs_minimize(bad, {1.0}), std::runtime_error);
}

TEST_CASE("lm solves linear least squares in one step") {
  Eigen::MatrixXd A(5, 3);
  A << 1, 2, 0, 0, 1, 1, 3, 0, 1, 1, 1, 1, 2, -1, 0;
  Eigen::VectorXd b(5);
  b << 1, -2, 0.5, 3, 1;
  const ResidualFn res = [&](std::span<const double> x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r = A * Eigen::Map<const Eigen::VectorXd>(x.data(), 3) - b;
    if (J) *J = A;
  };
  const Eigen::VectorXd normal = (A.transpose() * A).ldlt().solve(A.transpose() * b);
  const auto s = lm_step(res, std::vector<double>{0, 0, 0}, 1e-12);
  CHECK(s.accepted);
  CHECK(s.lambda == doctest::Approx(1e-13));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s.x[i] - normal[i]) < 1e-8);
}

TEST_CASE("lm with large damping follows the scaled gradient") {
  Eigen::MatrixXd A(4, 2);
  A << 1, 0, 2, 1, 0, 3, 1, 1;
  Eigen::VectorXd b(4);
  b << 1, 2, 3, 4;
  const ResidualFn res = [&](std::span<const double> x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r = A * Eigen::Map<const Eigen::VectorXd>(x.data(), 2) - b;
    if (J) *J = A;
  };
  const Eigen::VectorXd r0 = -b;
  const Eigen::VectorXd D = (A.transpose() * A).diagonal();
  const Eigen::VectorXd scaled = -(A.transpose() * r0).cwiseQuotient(D);
  const auto s = lm_step(res, std::vector<double>{0, 0}, 1e8);
  CHECK(s.step.dot(scaled) / (s.step.norm() * scaled.norm()) > 0.999);

  // Equal column norms make the scaling uniform, so the step is along -J'r.
  Eigen::MatrixXd B(3, 2);
  B << 1, 2, 2, 1, 2, -2;
  const ResidualFn res2 = [&](std::span<const double> x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r = B * Eigen::Map<const Eigen::VectorXd>(x.data(), 2) - Eigen::Vector3d(1, 0, 2);
    if (J) *J = B;
  };
  const Eigen::VectorXd grad = -(B.transpose() * -Eigen::Vector3d(1, 0, 2));
  const auto s2 = lm_step(res2, std::vector<double>{0, 0}, 1e8);
  CHECK(s2.step.dot(grad) / (s2.step.norm() * grad.norm()) > 0.999);
}

TEST_CASE("lm fits an exponential and only accepts decreasing steps") {
  // y = 2 exp(-0.7 t), exact data so the optimum has zero residual.
  std::vector<double> t(10), y(10);
  for (int i = 0; i < 10; ++i) {
    t[i] = 0.3 * i;
    y[i] = 2.0 * std::exp(-0.7 * t[i]);
  }
  const ResidualFn res = [&](std::span<const double> p, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r.resize(10);
    if (J) J->resize(10, 2);
    for (int i = 0; i < 10; ++i) {
      const double e = std::exp(p[1] * t[i]);
      r[i] = p[0] * e - y[i];
      if (J) {
        (*J)(i, 0) = e;
        (*J)(i, 1) = p[0] * t[i] * e;
      }
    }
  };
  std::vector<double> p{1.0, 0.0};
  double lambda = 1e-2;
  double cost = 0.0;
  int steps = 0;
  for (; steps < 50; ++steps) {
    const auto s = lm_step(res, p, lambda);
    if (s.accepted) {
      CHECK(s.cost_after < s.cost_before);
    } else {
      CHECK(s.x == p);
      CHECK(s.lambda == doctest::Approx(lambda * 10));
    }
    p = s.x;
    lambda = s.lambda;
    cost = s.accepted ? s.cost_after : s.cost_before;
    if (std::sqrt(cost) < 1e-6) break;
  }
  CHECK(std::sqrt(cost) < 1e-6);
  CHECK(steps < 50);
  CHECK(p[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-0.7).epsilon(1e-6));
}

TEST_CASE("lm reports singular systems") {
  const ResidualFn res = [](std::span<const double> x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r = Eigen::VectorXd::Constant(3, x[0] - 1.0);
    if (J) {
      *J = Eigen::MatrixXd::Zero(3, 2);
      J->col(0).setOnes();
    }
  };
  CHECK_THROWS_AS(lm_step(res, std::vector<double>{0, 0}, 1.0), std::runtime_error);
  CHECK_NOTHROW(lm_step(res, std::vector<double>{0, 0}, 1.0, 1e-6));
}

TEST_CASE("lm uses the dual solve for wide systems") {
  // More unknowns than residuals and above the size switch.
  const int m = 20, n = 300;
  Rng rng(6);
  Eigen::MatrixXd J(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) J(i, j) = standard_normal(rng);
  Eigen::VectorXd b(m);
  for (int i = 0; i < m; ++i) b[i] = standard_normal(rng);
  const ResidualFn res = [&](std::span<const double> x, Eigen::VectorXd& r, Eigen::MatrixXd* Jo) {
    r = J * Eigen::Map<const Eigen::VectorXd>(x.data(), n) - b;
    if (Jo) *Jo = J;
  };
  const double lambda = 0.5;
  const auto s = lm_step(res, std::vector<double>(n, 0.0), lambda, 1e-6);
  const Eigen::MatrixXd JtJ = J.transpose() * J;
  Eigen::VectorXd D = JtJ.diagonal().array() + 1e-6;
  const Eigen::MatrixXd M = JtJ + lambda * Eigen::MatrixXd(D.asDiagonal());
  const Eigen::VectorXd direct = M.ldlt().solve(-J.transpose() * (-b));
  CHECK((s.step - direct).norm() <= 1e-8 * direct.norm());
}

TEST_CASE("optimizer names") {
  for (auto k : {OptimizerKind::SGD, OptimizerKind::Adam, OptimizerKind::CG, OptimizerKind::LBFGS, OptimizerKind::LM})
    CHECK(parse_optimizer(to_string(k)) == k);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), std::invalid_argument);
}
