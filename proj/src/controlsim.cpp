#include "prunecert/controlsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace prunecert {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_bounds(const Vector& lower, const Vector& upper, std::size_t dim, const char* what) {
  if (lower.size() != dim || upper.size() != dim) {
    std::ostringstream os;
    os << what << " needs " << dim << " lower and upper bounds";
    throw DimensionError(os.str());
  }
  for (std::size_t i = 0; i < dim; ++i)
    if (!(lower[i] <= upper[i])) throw std::invalid_argument(std::string(what) + ": lower > upper");
}

Vector clip(std::span<const double> v, const Vector& lower, const Vector& upper) {
  Vector out(v.begin(), v.end());
  if (lower.empty()) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lower[i], upper[i]);
  return out;
}

}  // namespace

Dynamics::Dynamics(Model model) : model_(std::move(model)) {}

Dynamics Dynamics::double_integrator(double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  return Dynamics(DoubleIntegrator{dt}).with_state_box({-10.0, -10.0}, {10.0, 10.0});
}

Dynamics Dynamics::pendulum(const Pendulum& p) {
  if (!(p.dt > 0.0 && p.gravity > 0.0 && p.length > 0.0 && p.mass > 0.0 && p.torque_limit > 0.0))
    throw std::invalid_argument("pendulum constants must be positive");
  return Dynamics(p)
      .with_state_box({-std::numbers::pi, -10.0}, {std::numbers::pi, 10.0})
      .with_action_limits({-p.torque_limit}, {p.torque_limit});
}

Dynamics Dynamics::linear(Matrix a, Matrix b) {
  if (a.rows() == 0 || a.rows() != a.cols()) throw DimensionError("A must be square and nonempty");
  if (b.rows() != a.rows() || b.cols() == 0) throw DimensionError("B must be state_dim x action_dim");
  return Dynamics(LinearSystem{std::move(a), std::move(b)});
}

Dynamics Dynamics::with_state_box(Vector lower, Vector upper) const {
  check_bounds(lower, upper, state_dim(), "state box");
  Dynamics d = *this;
  d.state_lower_ = std::move(lower);
  d.state_upper_ = std::move(upper);
  return d;
}

Dynamics Dynamics::with_action_limits(Vector lower, Vector upper) const {
  check_bounds(lower, upper, action_dim(), "action limits");
  Dynamics d = *this;
  d.action_lower_ = std::move(lower);
  d.action_upper_ = std::move(upper);
  return d;
}

std::string_view Dynamics::name() const noexcept {
  return std::visit(overloaded{[](const DoubleIntegrator&) { return std::string_view("double_integrator"); },
                               [](const Pendulum&) { return std::string_view("pendulum"); },
                               [](const LinearSystem&) { return std::string_view("linear"); }},
                    model_);
}

std::size_t Dynamics::state_dim() const noexcept {
  return std::visit(overloaded{[](const DoubleIntegrator&) -> std::size_t { return 2; },
                               [](const Pendulum&) -> std::size_t { return 2; },
                               [](const LinearSystem& s) { return s.a.rows(); }},
                    model_);
}

std::size_t Dynamics::action_dim() const noexcept {
  return std::visit(overloaded{[](const DoubleIntegrator&) -> std::size_t { return 1; },
                               [](const Pendulum&) -> std::size_t { return 1; },
                               [](const LinearSystem& s) { return s.b.cols(); }},
                    model_);
}

Vector Dynamics::clip_action(std::span<const double> u) const {
  return clip(u, action_lower_, action_upper_);
}

Vector Dynamics::clip_state(std::span<const double> x) const {
  return clip(x, state_lower_, state_upper_);
}

Vector step(const Dynamics& dynamics, std::span<const double> x, std::span<const double> u) {
  if (x.size() != dynamics.state_dim() || u.size() != dynamics.action_dim()) {
    std::ostringstream os;
    os << dynamics.name() << " expects state/action dims " << dynamics.state_dim() << "/"
       << dynamics.action_dim() << ", got " << x.size() << "/" << u.size();
    throw DimensionError(os.str());
  }
  const Vector a = dynamics.clip_action(u);
  Vector next = std::visit(
      overloaded{
          [&](const DoubleIntegrator& m) {
            return Vector{x[0] + m.dt * x[1], x[1] + m.dt * a[0]};
          },
          [&](const Pendulum& m) {
            const double accel = m.gravity / m.length * std::sin(x[0]) +
                                 a[0] / (m.mass * m.length * m.length);
            return Vector{x[0] + m.dt * x[1], x[1] + m.dt * accel};
          },
          [&](const LinearSystem& m) {
            Vector ax = m.a * x;
            const Vector bu = m.b * a;
            for (std::size_t i = 0; i < ax.size(); ++i) ax[i] += bu[i];
            return ax;
          }},
      dynamics.model());
  if (!all_finite(next)) throw StepError("non-finite state; dt too large or dynamics diverged", 0);
  return dynamics.clip_state(next);
}

Trajectory rollout(const Dynamics& dynamics, const MlpPolicy& policy, std::span<const double> x0,
                   std::size_t horizon) {
  if (horizon < 1) throw std::invalid_argument("rollout horizon must be at least 1");
  if (policy.input_dim() != dynamics.state_dim() || policy.output_dim() != dynamics.action_dim())
    throw DimensionError("policy dimensions do not match the dynamics");
  if (x0.size() != dynamics.state_dim()) throw DimensionError("x0 has the wrong dimension");
  const Vector start(x0.begin(), x0.end());
  if (dynamics.clip_state(start) != start) throw std::invalid_argument("x0 lies outside the state box");

  Trajectory traj;
  traj.states.reserve(horizon + 1);
  traj.actions.reserve(horizon);
  traj.states.push_back(start);
  for (std::size_t t = 0; t < horizon; ++t) {
    traj.actions.push_back(forward(policy, traj.states.back()));
    try {
      traj.states.push_back(step(dynamics, traj.states.back(), traj.actions.back()));
    } catch (const StepError& e) {
      std::ostringstream os;
      os << "step " << t << ": " << e.what();
      throw StepError(os.str(), t);
    }
  }
  return traj;
}

DeviationReport deviation_audit(const Dynamics& dynamics, const MlpPolicy& original,
                                const MlpPolicy& pruned, const Certificate& cert,
                                std::span<const double> x0, std::size_t horizon) {
  if (horizon < 1) throw std::invalid_argument("simulation horizon must be at least 1");
  if (original.input_dim() != dynamics.state_dim() || original.output_dim() != dynamics.action_dim())
    throw DimensionError("policy dimensions do not match the dynamics");
  if (pruned.input_dim() != original.input_dim() || pruned.output_dim() != original.output_dim())
    throw DimensionError("original and pruned policies differ in input/output dimension");
  const Vector start(x0.begin(), x0.end());
  if (start.size() != dynamics.state_dim()) throw DimensionError("x0 has the wrong dimension");
  if (dynamics.clip_state(start) != start) throw std::invalid_argument("x0 lies outside the state box");

  const BoundConstants constants(original);
  DeviationReport report;
  report.budget = cert.budget;

  auto evaluate = [&](std::size_t t, TrajectorySource source, const Vector& x, double divergence) {
    DeviationRow row;
    row.t = t;
    row.source = source;
    row.state = x;
    row.action_original = forward(original, x);
    row.action_pruned = forward(pruned, x);
    row.deviation = norm2(subtract(row.action_original, row.action_pruned));
    row.bound = state_bound(constants, cert, x);
    row.in_ball = norm2(x) <= cert.radius * (1.0 + 1e-12);
    row.divergence = divergence;
    if (row.in_ball) {
      ++report.certified_states;
      report.max_certified_deviation = std::max(report.max_certified_deviation, row.deviation);
      report.max_bound = std::max(report.max_bound, row.bound);
      if (row.deviation > row.bound + kAuditSlack) ++report.violations;
    } else {
      ++report.excursions;
    }
    report.max_divergence = std::max(report.max_divergence, divergence);
    report.rows.push_back(std::move(row));
  };

  Vector x = start;
  Vector x_hat = start;
  for (std::size_t t = 0;; ++t) {
    const double divergence = norm2(subtract(x, x_hat));
    evaluate(t, TrajectorySource::original, x, divergence);
    evaluate(t, TrajectorySource::pruned, x_hat, divergence);
    if (t == horizon) break;
    try {
      // Rows already carry pi(x_t) for both policies.
      const auto& ro = report.rows[report.rows.size() - 2];
      const auto& rp = report.rows.back();
      Vector next = step(dynamics, x, ro.action_original);
      Vector next_hat = step(dynamics, x_hat, rp.action_pruned);
      x = std::move(next);
      x_hat = std::move(next_hat);
    } catch (const StepError& e) {
      std::ostringstream os;
      os << "step " << t << ": " << e.what();
      report.error = os.str();
      break;
    }
  }
  return report;
}

}  // namespace prunecert
