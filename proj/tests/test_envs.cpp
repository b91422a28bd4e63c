#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "evohps/envs.hpp"

using namespace evohps;

namespace {

Action random_action(const EnvSpec& spec, Rng& rng) {
  if (spec.action.is_discrete()) return static_cast<int>(uniform_index(rng, spec.action.discrete_count));
  std::vector<double> a(spec.action.lo.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    // Overshoot the bounds so clamping is exercised too.
    a[i] = 1.5 * (spec.action.lo[i] + (spec.action.hi[i] - spec.action.lo[i]) * uniform01(rng));
  }
  return a;
}

}  // namespace

TEST_CASE("factory and specs") {
  CHECK(make_environment("cartpole")->spec().observation_dim == 4);
  CHECK(make_environment("cartpole")->spec().action.discrete_count == 2);
  CHECK(make_environment("lander")->spec().observation_dim == 8);
  CHECK(make_environment("lander")->spec().action.discrete_count == 3);
  const auto laser = make_environment("laser");
  CHECK(laser->spec().observation_dim == 25);
  CHECK(laser->spec().action.dim() == 9);
  CHECK(laser->spec().action.hi[0] == doctest::Approx(std::numbers::pi / 4));
  CHECK_THROWS_AS(make_environment("pong"), std::invalid_argument);
  CHECK(is_known_environment("laser"));
  CHECK_FALSE(is_known_environment("toy"));
}

TEST_CASE("cartpole reset range") {
  CartPole env;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto obs = env.reset(seed);
    REQUIRE(obs.size() == 4);
    for (double v : obs) {
      CHECK(v >= -0.05);
      CHECK(v < 0.05);
    }
  }
}

TEST_CASE("cartpole single step matches hand integration") {
  // From rest, push right. With F = 10, m = 0.1, M = 1, l = 0.5:
  // temp = 100/11, theta_acc = -600/41, x_acc = 4400/451.
  CartPole env;
  env.set_state({0, 0, 0, 0});
  const auto r = env.step(1);
  CHECK(r.observation[0] == 0.0);
  CHECK(r.observation[1] == doctest::Approx(0.02 * 4400.0 / 451.0).epsilon(1e-14));
  CHECK(r.observation[2] == 0.0);
  CHECK(r.observation[3] == doctest::Approx(-0.02 * 600.0 / 41.0).epsilon(1e-14));
  CHECK(r.reward == 1.0);
  CHECK_FALSE(r.done);
}

TEST_CASE("cartpole always-right fails on angle within 100 steps") {
  CartPole env;
  env.set_state({0, 0, 0, 0});
  int steps = 0;
  StepResult r;
  do {
    r = env.step(1);
    CHECK(r.reward == 1.0);
    ++steps;
  } while (!r.done);
  CHECK(steps < 100);
  CHECK(std::abs(r.observation[2]) > CartPole::kAngleLimit);
  CHECK(std::abs(r.observation[0]) <= CartPole::kPositionLimit);
  CHECK_THROWS_AS(env.step(1), std::logic_error);
  CHECK_THROWS_AS(CartPole().step(0), std::logic_error);
}

TEST_CASE("cartpole step cap and action validation") {
  CartPole env;
  env.set_max_episode_steps(3);
  env.reset(1);
  CHECK_THROWS_AS(env.step(2), std::invalid_argument);
  CHECK_THROWS_AS(env.step(std::vector<double>{1.0}), std::invalid_argument);
  CHECK_FALSE(env.step(0).done);
  CHECK_FALSE(env.step(1).done);
  CHECK(env.step(0).done);
  CHECK(env.steps() == 3);
}

TEST_CASE("lander free fall") {
  LanderLite env;
  env.set_state({0.0, 10.0, 0.0, 0.0, 0.0, 0.0, false, false});
  for (int k = 1; k <= 20; ++k) {
    const auto r = env.step(0);
    CHECK(r.observation[3] == doctest::Approx(-LanderLite::kGravity * k * LanderLite::kDt).epsilon(1e-12));
    CHECK(r.observation[0] == 0.0);
    CHECK(r.observation[2] == 0.0);
    CHECK(r.reward < 0.0);
  }
}

TEST_CASE("lander scripted soft touchdown") {
  LanderLite env;
  env.set_state({0.1, 3.0, 0.0, 0.0, 0.0, 0.0, false, false});
  StepResult r;
  int side = 1;
  do {
    // Alternate engines to brake while keeping the lateral drift small.
    int a = 0;
    if (env.state().vy < -0.25) {
      a = side;
      side = 3 - side;
    }
    r = env.step(a);
  } while (!r.done);
  CHECK(env.state().y == 0.0);
  CHECK(std::abs(env.state().x) < LanderLite::kPadHalfWidth);
  CHECK(r.reward > 99.0);
  CHECK(r.observation[6] == 1.0);
  CHECK(r.observation[7] == 1.0);
}

TEST_CASE("lander crash and out of bounds") {
  LanderLite env;
  env.set_state({3.0, 0.05, 0.0, -2.0, 0.0, 0.0, false, false});
  auto r = env.step(0);
  CHECK(r.done);
  CHECK(r.reward < -100.0);

  env.set_state({0.0, 0.05, 0.0, -2.0, 0.0, 0.0, false, false});
  r = env.step(0);
  CHECK(r.done);
  CHECK(r.reward < -100.0);

  env.set_state({9.99, 5.0, 1.0, 0.0, 0.0, 0.0, false, false});
  r = env.step(0);
  CHECK(r.done);
  CHECK(r.reward < -100.0);
  CHECK(r.reward > -101.0);
}

TEST_CASE("laser efficiency examples") {
  LaserCBC env;
  std::array<double, 9> equal{};
  equal.fill(0.7);
  env.set_phases(equal);
  CHECK(env.efficiency() == doctest::Approx(1.0).epsilon(1e-14));
  const auto r = env.step(std::vector<double>(9, 0.0));
  CHECK(r.done);
  CHECK(r.reward == 101.0);

  std::array<double, 9> roots{};
  for (int j = 0; j < 9; ++j) roots[j] = 2.0 * std::numbers::pi * j / 9.0;
  env.set_phases(roots);
  CHECK(std::abs(env.efficiency()) < 1e-14);

  env.reset(5);
  CHECK(env.observe()[12] == env.efficiency());
  CHECK_THROWS_AS(env.step(std::vector<double>(8, 0.0)), std::invalid_argument);
  CHECK_THROWS_AS(env.step(3), std::invalid_argument);
}

TEST_CASE("laser invariants") {
  LaserCBC env;
  Rng rng(99);
  for (int t = 0; t < 500; ++t) {
    std::array<double, 9> phases{};
    for (double& p : phases) p = 2.0 * std::numbers::pi * uniform01(rng) - std::numbers::pi;
    env.set_phases(phases);
    const double eta = env.efficiency();
    CHECK(eta >= 0.0);
    CHECK(eta <= 1.0 + 1e-15);
    const double shift = 6.0 * uniform01(rng);
    for (double& p : phases) p += shift;
    env.set_phases(phases);
    CHECK(env.efficiency() == doctest::Approx(eta).epsilon(1e-12));
    for (double p : env.phases()) {
      CHECK(p > -std::numbers::pi);
      CHECK(p <= std::numbers::pi);
    }
  }
  CHECK(wrap_phase(-std::numbers::pi) == std::numbers::pi);
  CHECK(wrap_phase(3 * std::numbers::pi) == doctest::Approx(std::numbers::pi));
}

TEST_CASE("laser increments are clamped and episodes cap at 200") {
  LaserCBC env;
  std::array<double, 9> zero{};
  zero[0] = 3.0;  // keeps efficiency well below the success threshold
  env.set_phases(zero);
  std::vector<double> big(9, 0.0);
  big[1] = 10.0;
  env.step(big);
  CHECK(env.phases()[1] == doctest::Approx(std::numbers::pi / 4));
  CHECK(env.spec().max_episode_steps == 200);
}

TEST_CASE("environments are deterministic and finite under random actions") {
  for (const char* id : {"cartpole", "lander", "laser"}) {
    CAPTURE(id);
    auto run = [&](std::uint64_t seed) {
      auto env = make_environment(id);
      Rng rng(seed * 7 + 1);
      std::vector<double> trace = env->reset(seed);
      for (int ep = 0; ep < 5; ++ep) {
        if (ep > 0) env->reset(seed + ep);
        StepResult r;
        do {
          r = env->step(random_action(env->spec(), rng));
          for (double v : r.observation) REQUIRE(std::isfinite(v));
          REQUIRE(std::isfinite(r.reward));
          trace.insert(trace.end(), r.observation.begin(), r.observation.end());
          trace.push_back(r.reward);
        } while (!r.done);
        CHECK(env->steps() <= env->spec().max_episode_steps);
        CHECK_THROWS_AS(env->step(random_action(env->spec(), rng)), std::logic_error);
      }
      return trace;
    };
    for (std::uint64_t seed : {1u, 2u, 3u}) CHECK(run(seed) == run(seed));
    CHECK(run(1) != run(2));
  }
}

TEST_CASE("clone copies state") {
  LaserCBC env;
  env.reset(3);
  const auto copy = env.clone();
  const std::vector<double> a(9, 0.1);
  CHECK(env.step(a).observation == copy->step(a).observation);
}

TEST_CASE("trace lines") {
  CHECK(format_trace_line({0.5, -1}, 1, 1.0) == "0.5,-1,1,1");
  CHECK(format_trace_line({2}, std::vector<double>{0.25, 0.125}, -3.5) == "2,0.25,0.125,-3.5");
}
