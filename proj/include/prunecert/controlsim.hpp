#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "prunecert/certifier.hpp"
#include "prunecert/linalg.hpp"
#include "prunecert/policy.hpp"

namespace prunecert {

/// x = (position, velocity), u = (acceleration). Explicit Euler.
struct DoubleIntegrator {
  double dt = 0.1;
};

/// Inverted pendulum with theta measured from upright:
/// theta'' = (g / l) sin(theta) + u / (m l^2), explicit Euler, torque clipped
/// to +/- torque_limit.
struct Pendulum {
  double dt = 0.01;
  double gravity = 9.81;
  double length = 1.0;
  double mass = 1.0;
  double torque_limit = 10.0;
};

/// x' = A x + B u.
struct LinearSystem {
  Matrix a;
  Matrix b;
};

/// Raised by step() when the next state is not finite; `step_index` is set by
/// rollouts.
class StepError : public std::runtime_error {
 public:
  StepError(const std::string& what, std::size_t step_index)
      : std::runtime_error(what), step_index_(step_index) {}
  std::size_t step_index() const noexcept { return step_index_; }

 private:
  std::size_t step_index_;
};

/// Discrete-time transition map f(x, u) with an action clip (applied before
/// integration) and a state clip box (applied after).
class Dynamics {
 public:
  using Model = std::variant<DoubleIntegrator, Pendulum, LinearSystem>;

  static Dynamics double_integrator(double dt = 0.1);
  static Dynamics pendulum(const Pendulum& params = {});
  static Dynamics linear(Matrix a, Matrix b);

  Dynamics with_state_box(Vector lower, Vector upper) const;
  Dynamics with_action_limits(Vector lower, Vector upper) const;

  const Model& model() const noexcept { return model_; }
  std::string_view name() const noexcept;
  std::size_t state_dim() const noexcept;
  std::size_t action_dim() const noexcept;
  const Vector& state_lower() const noexcept { return state_lower_; }
  const Vector& state_upper() const noexcept { return state_upper_; }
  const Vector& action_lower() const noexcept { return action_lower_; }
  const Vector& action_upper() const noexcept { return action_upper_; }

  Vector clip_action(std::span<const double> u) const;
  Vector clip_state(std::span<const double> x) const;

 private:
  explicit Dynamics(Model model);
  Model model_;
  Vector state_lower_, state_upper_;    // empty = unbounded
  Vector action_lower_, action_upper_;  // empty = unbounded
};

Vector step(const Dynamics& dynamics, std::span<const double> x, std::span<const double> u);

struct Trajectory {
  std::vector<Vector> states;   // x_0 .. x_T
  std::vector<Vector> actions;  // u_0 .. u_{T-1}, raw policy outputs
};

/// Closed loop u_t = pi(x_t). The recorded actions are the raw policy
/// outputs; step() applies the action clip.
Trajectory rollout(const Dynamics& dynamics, const MlpPolicy& policy, std::span<const double> x0,
                   std::size_t horizon);

enum class TrajectorySource { original, pruned };

struct DeviationRow {
  std::size_t t = 0;
  TrajectorySource source = TrajectorySource::original;
  Vector state;
  Vector action_original;  // pi(x_t; Theta)
  Vector action_pruned;    // pi(x_t; Theta_hat)
  double deviation = 0.0;  // ||action_original - action_pruned||_2
  double bound = 0.0;      // sum_k C_k(x_t) ||delta W_k||_2
  bool in_ball = false;
  double divergence = 0.0;  // ||x_t - x_hat_t||_2, observed only, not certified
};

struct DeviationReport {
  std::vector<DeviationRow> rows;  // per t: original row, then pruned row
  std::size_t certified_states = 0;
  std::size_t violations = 0;
  std::size_t excursions = 0;  // visited states outside the certified ball
  double max_certified_deviation = 0.0;
  double max_bound = 0.0;
  double budget = 0.0;
  double max_divergence = 0.0;
  std::optional<std::string> error;  // set when a rollout blew up
};

/// Rolls both policies forward from x0 and, at every visited state of either
/// trajectory, compares the two policies at that same state against the
/// per-state bound. Only in-ball states count toward the certified tally.
DeviationReport deviation_audit(const Dynamics& dynamics, const MlpPolicy& original,
                                const MlpPolicy& pruned, const Certificate& cert,
                                std::span<const double> x0, std::size_t horizon);

}  // namespace prunecert
