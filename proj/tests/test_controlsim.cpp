#include "doctest.h"

#include <cmath>

#include "prunecert/controlsim.hpp"
#include "prunecert/io.hpp"
#include "support.hpp"

using namespace prunecert;
namespace pt = prunecert::testing;

namespace {

MlpPolicy fixture(const char* name) {
  return load_policy(std::filesystem::path(PRUNECERT_TEST_DATA) / name);
}

MlpPolicy zero_policy(std::size_t in, std::size_t out) {
  return MlpPolicy({Layer{Matrix(out, in), Vector(out, 0.0), Activation::relu()}});
}

PruneResult prune_half_layer1(const MlpPolicy& p, const StateSpace& space) {
  const auto states = sample_states(space, 128, 1);
  const CalibrationBatch calib = collect_calibration(p, states);
  const std::size_t k1[] = {1};
  const auto ranked = rank_weights(p, calib, k1);
  return apply_plan(p, ranked, p.layer(1).weight.size() / 2, calib);
}

}  // namespace

TEST_CASE("step examples") {
  const Dynamics lin = Dynamics::linear(Matrix::identity(2), Matrix(2, 1));
  CHECK(step(lin, Vector{1.5, -2}, Vector{7}) == Vector{1.5, -2});
  CHECK(step(Dynamics::double_integrator(0.1), Vector{0, 1}, Vector{0}) == Vector{0.1, 1});
  CHECK(step(Dynamics::pendulum(), Vector{0, 0}, Vector{0}) == Vector{0, 0});
  // Torque is clipped to the limit before integration.
  CHECK(step(Dynamics::pendulum(), Vector{0, 0}, Vector{100})[1] == doctest::Approx(0.1));
  CHECK_THROWS_AS(step(lin, Vector{1}, Vector{0}), DimensionError);

  const Dynamics blow = Dynamics::linear(Matrix::from_rows({{1e300}}), Matrix(1, 1));
  CHECK_THROWS_AS(step(blow, Vector{1e10}, Vector{0}), StepError);
}

TEST_CASE("dynamics validation") {
  CHECK_THROWS(Dynamics::double_integrator(0.0));
  Pendulum bad;
  bad.mass = -1.0;
  CHECK_THROWS(Dynamics::pendulum(bad));
  CHECK_THROWS(Dynamics::linear(Matrix(2, 3), Matrix(2, 1)));
  CHECK_THROWS(Dynamics::linear(Matrix(2, 2), Matrix(3, 1)));
  const Dynamics di = Dynamics::double_integrator();
  CHECK(di.clip_state(Vector{20, -20}) == Vector{10, -10});
}

TEST_CASE("rollout examples") {
  const Dynamics lin = Dynamics::linear(Matrix::identity(2), Matrix::identity(2));
  const Trajectory t = rollout(lin, zero_policy(2, 2), Vector{0.3, -0.4}, 25);
  REQUIRE(t.states.size() == 26);
  REQUIRE(t.actions.size() == 25);
  for (const auto& x : t.states) CHECK(x == Vector{0.3, -0.4});

  const MlpPolicy p = fixture("pendulum_policy.json");
  const Dynamics pend = Dynamics::pendulum();
  const Trajectory one = rollout(pend, p, Vector{0.1, 0}, 1);
  CHECK(one.states[1] == step(pend, one.states[0], forward(p, one.states[0])));

  CHECK_THROWS(rollout(pend, p, Vector{0.1, 0}, 0));
  CHECK_THROWS(rollout(pend, p, Vector{4.0, 0}, 5));

  const Trajectory a = rollout(pend, p, Vector{0.2, -0.1}, 100);
  const Trajectory b = rollout(pend, p, Vector{0.2, -0.1}, 100);
  CHECK(a.states == b.states);
}

TEST_CASE("fixture policies stabilize their plants") {
  const MlpPolicy pend = fixture("pendulum_policy.json");
  // u = -(20 theta + 6 omega) on both sides of zero.
  CHECK(forward(pend, Vector{0.1, 0.2})[0] == doctest::Approx(-3.2));
  CHECK(forward(pend, Vector{-0.1, -0.2})[0] == doctest::Approx(3.2));
  const Trajectory tp = rollout(Dynamics::pendulum(), pend, Vector{0.3, 0.0}, 500);
  CHECK(norm2(tp.states.back()) < 1e-3 * norm2(tp.states.front()));

  const MlpPolicy di = fixture("double_integrator_policy.json");
  CHECK(forward(di, Vector{1.0, 1.0})[0] == doctest::Approx(-2.5));
  const Trajectory td = rollout(Dynamics::double_integrator(), di, Vector{2.0, -1.0}, 500);
  CHECK(norm2(td.states.back()) < 1e-3 * norm2(td.states.front()));
}

TEST_CASE("deviation_audit examples") {
  const MlpPolicy p = fixture("pendulum_policy.json");
  const Dynamics d = Dynamics::pendulum();
  const StateSpace space = StateSpace::box(d.state_lower(), d.state_upper());

  const Certificate none = multi_layer_budget(p, PrunePlan{}, space);
  const DeviationReport same = deviation_audit(d, p, p, none, Vector{0.3, 0}, 50);
  CHECK(same.rows.size() == 102);
  for (const auto& r : same.rows) CHECK(r.deviation == 0.0);
  CHECK(same.violations == 0);

  const PruneResult pr = prune_half_layer1(p, space);
  const Certificate cert = multi_layer_budget(p, pr.plan, space);
  const DeviationReport rep = deviation_audit(d, p, pr.pruned, cert, Vector{0.3, 0}, 500);
  CHECK(rep.violations == 0);
  CHECK(rep.excursions == 0);
  CHECK(rep.certified_states == 1002);
  CHECK_FALSE(rep.error);
  CHECK(rep.max_bound <= cert.budget);

  Certificate doubled = cert;
  for (auto& l : doubled.layers) l.delta_spectral *= 2.0;
  const DeviationReport rep2 = deviation_audit(d, p, pr.pruned, doubled, Vector{0.3, 0}, 500);
  REQUIRE(rep2.rows.size() == rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) CHECK(rep2.rows[i].bound == 2.0 * rep.rows[i].bound);
}

TEST_CASE("deviation_audit on the double integrator") {
  const MlpPolicy p = fixture("double_integrator_policy.json");
  const Dynamics d = Dynamics::double_integrator();
  const StateSpace space = StateSpace::box(d.state_lower(), d.state_upper());
  const PruneResult pr = prune_half_layer1(p, space);
  const Certificate cert = multi_layer_budget(p, pr.plan, space);
  const DeviationReport rep = deviation_audit(d, p, pr.pruned, cert, Vector{5.0, -2.0}, 500);
  CHECK(rep.violations == 0);
  CHECK(rep.certified_states > 0);
}

TEST_CASE("deviation_audit reports a blow-up") {
  const Dynamics d = Dynamics::linear(Matrix::from_rows({{1e200}}), Matrix::from_rows({{1}}));
  const MlpPolicy p = zero_policy(1, 1);
  const Certificate c = multi_layer_budget(p, PrunePlan{}, StateSpace::ball(1, 1.0));
  const DeviationReport r = deviation_audit(d, p, p, c, Vector{1.0}, 10);
  CHECK(r.error.has_value());
}
