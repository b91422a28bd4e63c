#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "evohps/random.hpp"

namespace evohps {

struct ActionSpace {
  int discrete_count = 0;          // > 0 for discrete spaces
  std::vector<double> lo;          // per-dimension bounds for continuous spaces
  std::vector<double> hi;

  bool is_discrete() const { return discrete_count > 0; }
  int dim() const { return is_discrete() ? 1 : static_cast<int>(lo.size()); }

  static ActionSpace discrete(int count);
  static ActionSpace continuous(std::vector<double> lo, std::vector<double> hi);
};

struct EnvSpec {
  int observation_dim = 0;
  ActionSpace action;
  int max_episode_steps = 0;
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
};

using Action = std::variant<int, std::vector<double>>;

/// Common reset/step contract. Stepping a finished episode throws
/// std::logic_error.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string_view id() const = 0;
  virtual const EnvSpec& spec() const = 0;
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepResult step(const Action& action) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

  int steps() const { return steps_; }
  bool done() const { return done_; }
  void set_max_episode_steps(int steps) { step_cap_ = steps; }
  int step_cap() const { return step_cap_ > 0 ? step_cap_ : spec().max_episode_steps; }

 protected:
  void begin_episode() {
    steps_ = 0;
    done_ = false;
  }
  /// Bookkeeping shared by every step: rejects stepping after done and applies
  /// the step cap.
  void pre_step();
  bool post_step(bool terminal);

 private:
  int steps_ = 0;
  bool done_ = true;
  int step_cap_ = 0;
};

/// Classic cart-pole: 4-d observation, push left (0) or right (1).
class CartPole final : public Environment {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kCartMass = 1.0;
  static constexpr double kPoleMass = 0.1;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kForce = 10.0;
  static constexpr double kDt = 0.02;
  static constexpr double kAngleLimit = 15.0 * 3.14159265358979323846 / 180.0;
  static constexpr double kPositionLimit = 2.4;

  CartPole();
  std::string_view id() const override { return "cartpole"; }
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<CartPole>(*this); }

  /// (position, velocity, angle, angular velocity); starts a fresh episode.
  void set_state(const std::array<double, 4>& state);
  const std::array<double, 4>& state() const { return state_; }

 private:
  EnvSpec spec_;
  std::array<double, 4> state_{};
};

/// Point-mass lunar lander with two angled side thrusters.
/// Observation: x, y, vx, vy, angle, angular velocity, left contact, right contact.
/// Actions: 0 = nothing, 1 = move left, 2 = move right.
class LanderLite final : public Environment {
 public:
  static constexpr double kGravity = 1.62;
  static constexpr double kDt = 0.05;
  static constexpr double kThrust = 2.5;            // m/s^2 per side engine
  static constexpr double kThrustTilt = 0.6981317;  // 40 degrees from vertical
  static constexpr double kAngularThrust = 0.8;
  static constexpr double kAngularDamping = 0.9;
  static constexpr double kPadHalfWidth = 0.5;
  static constexpr double kSafeLandingSpeed = 0.5;
  static constexpr double kMaxX = 10.0;
  static constexpr double kMaxY = 15.0;
  static constexpr double kStartHeight = 10.0;

  struct State {
    double x = 0, y = 0, vx = 0, vy = 0, angle = 0, angular_velocity = 0;
    bool left_contact = false, right_contact = false;
  };

  LanderLite();
  std::string_view id() const override { return "lander"; }
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<LanderLite>(*this); }

  void set_state(const State& state);
  const State& state() const { return state_; }

 private:
  std::vector<double> observe() const;

  EnvSpec spec_;
  State state_;
};

/// Coherent beam combining toy: nine unit beams on a 3x3 grid, controlled by
/// per-step phase increments; observation is a 5x5 far-field intensity image.
class LaserCBC final : public Environment {
 public:
  static constexpr int kBeams = 9;
  static constexpr int kDetectors = 25;
  static constexpr double kMaxIncrement = 3.14159265358979323846 / 4.0;
  static constexpr double kDetectorSpacing = 3.14159265358979323846 / 4.0;
  static constexpr double kSuccessEfficiency = 0.95;
  static constexpr double kSuccessBonus = 100.0;

  LaserCBC();
  std::string_view id() const override { return "laser"; }
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<LaserCBC>(*this); }

  /// |sum_j exp(i phi_j)|^2 / 81.
  double efficiency() const;
  /// Normalized intensity at detector offset (u_x, u_y).
  double intensity(double ux, double uy) const;
  std::vector<double> observe() const;

  void set_phases(const std::array<double, kBeams>& phases);
  const std::array<double, kBeams>& phases() const { return phases_; }

 private:
  EnvSpec spec_;
  std::array<double, kBeams> phases_{};
};

/// Environment ids: "cartpole", "lander", "laser". Throws on unknown ids.
std::unique_ptr<Environment> make_environment(std::string_view id);
bool is_known_environment(std::string_view id);

/// One comma-separated trace line: observation values, action values, reward.
std::string format_trace_line(const std::vector<double>& observation, const Action& action,
                              double reward);

double wrap_phase(double phi);

}  // namespace evohps
