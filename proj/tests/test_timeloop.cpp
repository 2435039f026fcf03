#include "gasflow/cli_io.hpp"
#include "gasflow/timeloop.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace gasflow;

namespace {

FluidState line_state(std::initializer_list<double> m, std::initializer_list<double> x, std::initializer_list<double> u) {
  FluidState s;
  s.masses = Eigen::Map<const Vec>(m.begin(), static_cast<Index>(m.size()));
  s.positions = Eigen::Map<const Vec>(x.begin(), static_cast<Index>(x.size()));
  s.velocities = Eigen::Map<const Vec>(u.begin(), static_cast<Index>(u.size()));
  s.entropies = Vec::Zero(static_cast<Index>(m.size()));
  return s;
}

SimConfig pressureless(double tau, double t_end) {
  SimConfig cfg;
  cfg.tau = tau;
  cfg.t_end = t_end;
  return cfg;
}

SimConfig polytropic(double tau, double t_end, double gamma, double kappa) {
  SimConfig cfg = pressureless(tau, t_end);
  cfg.law = GasLaw{gamma, kappa, GasMode::polytropic};
  return cfg;
}

}  // namespace

TEST_CASE("step count and config validation") {
  CHECK(pressureless(0.1, 1.0).step_count() == 10);
  CHECK(pressureless(0.3, 1.0).step_count() == 4);
  CHECK(pressureless(0.25, 0.25).step_count() == 1);
  CHECK_THROWS_AS(pressureless(0.0, 1.0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(pressureless(0.5, 0.1).validate(), std::invalid_argument);
  CHECK_THROWS_AS(polytropic(0.1, 1.0, 0.9, 1.0).validate(), std::invalid_argument);
  CHECK(frame_kind_from_string(to_string(FrameKind::intra)) == FrameKind::intra);
  CHECK_THROWS_AS(frame_kind_from_string("middle"), std::invalid_argument);
}

TEST_CASE("interpolation inside a step") {
  const FluidState s = line_state({0.5, 0.5}, {-1, 1}, {1, -1});
  const StepOutcome out = pressureless_step(s, {2.0, -1.0, {}});
  const FluidState start = interpolate(s, out, 0.0);
  CHECK(start.positions == s.positions);
  const FluidState mid = interpolate(s, out, 1.0);
  CHECK(mid.positions(0, 0) == doctest::Approx(-0.5));
  CHECK(mid.positions(1, 0) == doctest::Approx(0.5));
  CHECK(mid.velocities(0, 0) == doctest::Approx(0.5));
  const FluidState end = interpolate(s, out, 2.0);
  CHECK(end.size() == 1);
  CHECK_THROWS_AS(interpolate(s, out, 2.5), std::out_of_range);
  CHECK_THROWS_AS(interpolate(s, out, -0.1), std::out_of_range);
}

TEST_CASE("stationary and free-streaming runs") {
  FluidState rest = line_state({0.25, 0.25, 0.5}, {0, 1, 3}, {0, 0, 0});
  const Trajectory still = simulate(rest, pressureless(0.1, 1.0));
  REQUIRE(still.frames.size() == 11);
  for (const Frame& f : still.frames) CHECK(f.state.positions == rest.positions);

  FluidState stream = line_state({0.5, 0.5}, {0, 1}, {0.5, 0.5});
  const Trajectory moving = simulate(stream, pressureless(0.25, 1.0));
  CHECK(moving.frames.back().state.positions(0, 0) == doctest::Approx(0.5));
  CHECK(moving.frames.back().state.positions(1, 0) == doctest::Approx(1.5));
  CHECK(moving.frames.back().kinetic() == doctest::Approx(0.125));
}

TEST_CASE("three particles cascade into one cluster") {
  const FluidState s = line_state({1.0 / 3, 1.0 / 3, 1.0 / 3}, {-1, 0, 1}, {1, 0, -1});
  const Trajectory traj = simulate(s, pressureless(0.1, 2.0));
  const Frame& last = traj.frames.back();
  REQUIRE(last.state.size() == 1);
  CHECK(last.state.positions(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(last.kinetic() == doctest::Approx(0.0));
  const auto all = traj.ancestors(0, traj.lineage.size());
  CHECK(all == std::vector<Index>{0, 1, 2});
  for (Index i = 0; i < 3; ++i) CHECK(traj.descendant(i, traj.lineage.size()) == 0);
  CHECK_THROWS_AS(traj.ancestors(0, traj.lineage.size() + 1), std::out_of_range);
}

TEST_CASE("frame thinning and intra frames") {
  const FluidState s = line_state({0.5, 0.5}, {-1, 1}, {1, -1});
  SimConfig cfg = pressureless(0.1, 1.0);
  cfg.frames_every = 3;
  cfg.intra_samples = 2;
  std::vector<double> seen;
  const Trajectory traj = simulate(s, cfg, [&](const Frame& f) { seen.push_back(f.t); });
  // Kept steps: 3, 6, 9 and the final 10, each with two intra frames.
  CHECK(traj.frames.size() == 1 + 4 * 3);
  CHECK(seen.size() == traj.frames.size());
  CHECK(traj.reports.size() == 10);
  CHECK(traj.lineage.size() == 10);
  for (std::size_t k = 1; k < traj.frames.size(); ++k) CHECK(traj.frames[k].t > traj.frames[k - 1].t);
  CHECK(traj.frames.back().t == doctest::Approx(1.0));
}

TEST_CASE("wasserstein distance in one dimension") {
  const FluidState a = line_state({1.0}, {0}, {0});
  const FluidState b = line_state({1.0}, {2}, {0});
  CHECK(wasserstein2_1d(a, b) == doctest::Approx(2.0));
  const FluidState c = line_state({0.5, 0.5}, {-1, 1}, {0, 0});
  CHECK(wasserstein2_1d(a, c) == doctest::Approx(1.0));
  CHECK(wasserstein2_1d(c, c) == 0.0);
  const FluidState d = line_state({0.25, 0.75}, {0, 1}, {0, 0});
  const FluidState e = line_state({0.75, 0.25}, {0, 1}, {0, 0});
  CHECK(wasserstein2_1d(d, e) == doctest::Approx(std::sqrt(0.5)));
  FluidState planar = a;
  planar.positions = Points::Zero(1, 2);
  planar.velocities = Points::Zero(1, 2);
  CHECK_THROWS_AS(wasserstein2_1d(planar, planar), std::invalid_argument);

  // Random symmetric, triangle-inequality checks.
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    const FluidState p = oracle::random_state(rng, 5, 1);
    const FluidState q = oracle::random_state(rng, 7, 1);
    const FluidState r = oracle::random_state(rng, 3, 1);
    CHECK(wasserstein2_1d(p, q) == doctest::Approx(wasserstein2_1d(q, p)));
    CHECK(wasserstein2_1d(p, r) <= wasserstein2_1d(p, q) + wasserstein2_1d(q, r) + 1e-12);
  }
}

TEST_CASE("kantorovich norm") {
  CHECK(kantorovich_norm_1d((Vec(2) << 0, 3).finished(), (Vec(2) << 1, -1).finished()) == doctest::Approx(3.0));
  CHECK(kantorovich_norm_1d((Vec(3) << 0, 1, 2).finished(), (Vec(3) << 0.5, -1, 0.5).finished()) ==
        doctest::Approx(1.0));
  CHECK(kantorovich_norm_1d(Vec::Zero(0), Vec::Zero(0)) == 0.0);
  CHECK_THROWS_AS(kantorovich_norm_1d((Vec(1) << 0).finished(), (Vec(1) << 1).finished()), std::invalid_argument);
}

TEST_CASE("lipschitz report") {
  const Trajectory still = simulate(line_state({0.5, 0.5}, {0, 1}, {0, 0}), pressureless(0.1, 1.0));
  const LipschitzReport rs = lipschitz_report(still);
  CHECK(rs.max_ratio == 0.0);
  CHECK(rs.ok);

  const Trajectory uniform = simulate(line_state({0.5, 0.5}, {0, 1}, {0.7, 0.7}), pressureless(0.1, 1.0));
  const LipschitzReport ru = lipschitz_report(uniform);
  CHECK(ru.bound == doctest::Approx(0.7));
  CHECK(ru.max_ratio == doctest::Approx(0.7));
  CHECK(ru.ok);

  const Trajectory hit = simulate(line_state({0.5, 0.5}, {-1, 1}, {1, -1}), pressureless(0.1, 3.0));
  const LipschitzReport rh = lipschitz_report(hit);
  CHECK(rh.max_ratio <= rh.bound + 1e-12);
  CHECK(rh.ok);
}

TEST_CASE("energy ledger and momentum over random pressureless runs") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Index d = 1 + trial % 2;
    const FluidState s = oracle::random_state(rng, 30, d, true);
    SimConfig cfg = pressureless(0.05, 1.0);
    cfg.intra_samples = trial % 3;
    const Trajectory traj = simulate(s, cfg);
    const LedgerReport led = energy_ledger(traj);
    CHECK(led.max_energy_increase <= 1e-12);
    CHECK(led.max_above_initial <= 1e-12);
    CHECK(std::abs(led.telescoped_gap) <= 1e-10);
    CHECK(led.max_momentum_drift <= 1e-10);
    if (d == 1) CHECK(lipschitz_report(traj).ok);
    // Every final particle carries the mass of its ancestors.
    const Frame& last = traj.frames.back();
    for (Index i = 0; i < last.state.size(); ++i) {
      double m = 0.0;
      for (Index a : traj.ancestors(i, traj.lineage.size())) m += s.masses(a);
      CHECK(last.state.masses(i) == doctest::Approx(m).epsilon(1e-12));
    }
  }
}

TEST_CASE("polytropic run keeps the ledger") {
  FluidState s = builtin_state("riemann-1d", 60);
  const Trajectory traj = simulate(s, polytropic(0.05, 0.5, 1.4, 1.0));
  const LedgerReport led = energy_ledger(traj);
  CHECK(led.max_energy_increase <= 1e-12);
  CHECK(std::abs(led.max_step_defect) <= 1e-9);
  CHECK(std::abs(led.telescoped_gap) <= 1e-9);
  CHECK(led.max_momentum_drift <= 1e-10);
  CHECK(lipschitz_report(traj).ok);
  CHECK(traj.frames.front().internal > 0.0);
  CHECK(state_internal_energy(s, GasLaw{}, nullptr) == 0.0);
}

TEST_CASE("simulation errors carry the step") {
  FluidState s = line_state({0.5, 0.5}, {0, 1}, {1, -1});
  SimConfig cfg = pressureless(0.1, 1.0);
  // One-dimensional projection ignores the sweep budget, so use a planar cloud with a collision.
  std::mt19937_64 rng(5);
  FluidState planar = oracle::random_state(rng, 30, 2, true);
  planar.velocities *= 50.0;
  cfg.solver.projection.max_sweeps = 1;
  cfg.solver.projection.active_set_polish = false;
  try {
    simulate(planar, cfg);
    FAIL("expected SimulationError");
  } catch (const SimulationError& e) {
    CHECK(e.step() == 1);
    CHECK(std::string(e.what()).rfind("step 1 ", 0) == 0);
  }
  FluidState bad = s;
  bad.masses(0) = 0.7;
  CHECK_THROWS_AS(simulate(bad, pressureless(0.1, 1.0)), std::invalid_argument);
}
