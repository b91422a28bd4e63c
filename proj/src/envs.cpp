#include "evohps/envs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace evohps {

ActionSpace ActionSpace::discrete(int count) {
  if (count < 1) throw std::invalid_argument("discrete action space needs at least one action");
  ActionSpace a;
  a.discrete_count = count;
  return a;
}

ActionSpace ActionSpace::continuous(std::vector<double> lo, std::vector<double> hi) {
  if (lo.empty() || lo.size() != hi.size()) {
    throw std::invalid_argument("continuous action space needs matching non-empty bounds");
  }
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(std::isfinite(lo[i]) && std::isfinite(hi[i]) && lo[i] < hi[i])) {
      throw std::invalid_argument("continuous action bounds must be finite with lo < hi");
    }
  }
  ActionSpace a;
  a.lo = std::move(lo);
  a.hi = std::move(hi);
  return a;
}

void Environment::pre_step() {
  if (done_) throw std::logic_error(std::string(id()) + ": step called on a finished episode; call reset");
}

bool Environment::post_step(bool terminal) {
  ++steps_;
  done_ = terminal || steps_ >= step_cap();
  return done_;
}

double wrap_phase(double phi) {
  const double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(phi + std::numbers::pi, two_pi);
  if (w < 0.0) w += two_pi;
  // Result in (-pi, pi].
  w -= std::numbers::pi;
  return w == -std::numbers::pi ? std::numbers::pi : w;
}

namespace {

int discrete_action(const Action& action, int count, std::string_view env) {
  const int* a = std::get_if<int>(&action);
  if (a == nullptr || *a < 0 || *a >= count) {
    throw std::invalid_argument(std::string(env) + ": action must be an integer in [0, " +
                                std::to_string(count - 1) + "]");
  }
  return *a;
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

}  // namespace

// --- CartPole ---------------------------------------------------------------

CartPole::CartPole() {
  spec_.observation_dim = 4;
  spec_.action = ActionSpace::discrete(2);
  spec_.max_episode_steps = 500;
}

std::vector<double> CartPole::reset(std::uint64_t seed) {
  Rng rng(seed);
  for (double& s : state_) s = uniform(rng, -0.05, 0.05);
  begin_episode();
  return {state_.begin(), state_.end()};
}

void CartPole::set_state(const std::array<double, 4>& state) {
  state_ = state;
  begin_episode();
}

StepResult CartPole::step(const Action& action) {
  pre_step();
  const int a = discrete_action(action, 2, id());
  auto& [x, x_dot, theta, theta_dot] = state_;
  const double force = a == 1 ? kForce : -kForce;
  const double total_mass = kCartMass + kPoleMass;
  const double pole_moment = kPoleMass * kHalfLength;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double temp = (force + pole_moment * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc = (kGravity * sin_t - cos_t * temp) /
                           (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_moment * theta_acc * cos_t / total_mass;
  x += kDt * x_dot;
  x_dot += kDt * x_acc;
  theta += kDt * theta_dot;
  theta_dot += kDt * theta_acc;

  const bool failed = std::abs(theta) > kAngleLimit || std::abs(x) > kPositionLimit;
  const bool done = post_step(failed);
  return {{state_.begin(), state_.end()}, 1.0, done};
}

// --- LanderLite -------------------------------------------------------------

LanderLite::LanderLite() {
  spec_.observation_dim = 8;
  spec_.action = ActionSpace::discrete(3);
  spec_.max_episode_steps = 500;
}

std::vector<double> LanderLite::observe() const {
  return {state_.x,     state_.y,
          state_.vx,    state_.vy,
          state_.angle, state_.angular_velocity,
          state_.left_contact ? 1.0 : 0.0, state_.right_contact ? 1.0 : 0.0};
}

std::vector<double> LanderLite::reset(std::uint64_t seed) {
  Rng rng(seed);
  state_ = State{};
  state_.x = uniform(rng, -3.0, 3.0);
  state_.y = kStartHeight;
  state_.vx = uniform(rng, -0.5, 0.5);
  state_.vy = uniform(rng, -0.5, 0.0);
  begin_episode();
  return observe();
}

void LanderLite::set_state(const State& state) {
  state_ = state;
  begin_episode();
}

StepResult LanderLite::step(const Action& action) {
  pre_step();
  const int a = discrete_action(action, 3, id());
  double ax = 0.0;
  double ay = -kGravity;
  double torque = 0.0;
  if (a != 0) {
    const double side = a == 1 ? -1.0 : 1.0;
    ax = side * kThrust * std::sin(kThrustTilt);
    ay += kThrust * std::cos(kThrustTilt);
    torque = -side * kAngularThrust;
  }
  auto& s = state_;
  s.vx += ax * kDt;
  s.vy += ay * kDt;
  s.x += s.vx * kDt;
  s.y += s.vy * kDt;
  s.angular_velocity = kAngularDamping * s.angular_velocity + torque * kDt;
  s.angle += s.angular_velocity * kDt;

  const double speed = std::hypot(s.vx, s.vy);
  double reward = -0.01 * (std::hypot(s.x, std::max(s.y, 0.0)) + speed);
  bool terminal = false;
  if (s.y <= 0.0) {
    s.y = 0.0;
    s.left_contact = true;
    s.right_contact = true;
    const bool soft = std::abs(s.vy) < kSafeLandingSpeed && std::abs(s.x) < kPadHalfWidth;
    reward += soft ? 100.0 : -100.0;
    terminal = true;
  } else if (std::abs(s.x) > kMaxX || s.y > kMaxY) {
    reward -= 100.0;
    terminal = true;
  }
  const bool done = post_step(terminal);
  return {observe(), reward, done};
}

// --- LaserCBC ---------------------------------------------------------------

LaserCBC::LaserCBC() {
  spec_.observation_dim = kDetectors;
  spec_.action = ActionSpace::continuous(std::vector<double>(kBeams, -kMaxIncrement),
                                         std::vector<double>(kBeams, kMaxIncrement));
  spec_.max_episode_steps = 200;
}

double LaserCBC::intensity(double ux, double uy) const {
  std::complex<double> field{0.0, 0.0};
  for (int j = 0; j < kBeams; ++j) {
    const double dx = static_cast<double>(j % 3 - 1);
    const double dy = static_cast<double>(j / 3 - 1);
    field += std::polar(1.0, phases_[static_cast<std::size_t>(j)] + dx * ux + dy * uy);
  }
  return std::norm(field) / static_cast<double>(kBeams * kBeams);
}

double LaserCBC::efficiency() const { return intensity(0.0, 0.0); }

std::vector<double> LaserCBC::observe() const {
  std::vector<double> obs;
  obs.reserve(kDetectors);
  for (int ky = -2; ky <= 2; ++ky) {
    for (int kx = -2; kx <= 2; ++kx) {
      obs.push_back(intensity(kx * kDetectorSpacing, ky * kDetectorSpacing));
    }
  }
  return obs;
}

std::vector<double> LaserCBC::reset(std::uint64_t seed) {
  Rng rng(seed);
  for (double& p : phases_) p = wrap_phase(uniform(rng, -std::numbers::pi, std::numbers::pi));
  begin_episode();
  return observe();
}

void LaserCBC::set_phases(const std::array<double, kBeams>& phases) {
  for (std::size_t j = 0; j < phases.size(); ++j) phases_[j] = wrap_phase(phases[j]);
  begin_episode();
}

StepResult LaserCBC::step(const Action& action) {
  pre_step();
  const auto* a = std::get_if<std::vector<double>>(&action);
  if (a == nullptr || a->size() != static_cast<std::size_t>(kBeams)) {
    throw std::invalid_argument("laser: action must hold 9 phase increments");
  }
  for (std::size_t j = 0; j < phases_.size(); ++j) {
    const double inc = std::clamp((*a)[j], -kMaxIncrement, kMaxIncrement);
    phases_[j] = wrap_phase(phases_[j] + (std::isfinite(inc) ? inc : 0.0));
  }
  const bool combined = efficiency() >= kSuccessEfficiency;
  const double reward = 1.0 + (combined ? kSuccessBonus : 0.0);
  const bool done = post_step(combined);
  return {observe(), reward, done};
}

// --- factory ----------------------------------------------------------------

std::unique_ptr<Environment> make_environment(std::string_view id) {
  if (id == "cartpole") return std::make_unique<CartPole>();
  if (id == "lander") return std::make_unique<LanderLite>();
  if (id == "laser") return std::make_unique<LaserCBC>();
  throw std::invalid_argument("unknown environment id '" + std::string(id) + "'");
}

bool is_known_environment(std::string_view id) {
  return id == "cartpole" || id == "lander" || id == "laser";
}

std::string format_trace_line(const std::vector<double>& observation, const Action& action,
                              double reward) {
  std::string line;
  auto put = [&line](double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (!line.empty()) line += ',';
    line.append(buf, ptr);
  };
  for (double v : observation) put(v);
  if (const int* a = std::get_if<int>(&action)) {
    put(static_cast<double>(*a));
  } else {
    for (double v : std::get<std::vector<double>>(action)) put(v);
  }
  put(reward);
  return line;
}

}  // namespace evohps
