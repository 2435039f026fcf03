#include "gasflow/pressureless.hpp"

#include <cmath>

namespace gasflow {

double accel_cost_sq(const RowVec& x, const RowVec& xi, const RowVec& z, const RowVec& zeta, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  const RowVec mean_dev = (z - x) / tau - 0.5 * (zeta + xi);
  return 3.0 * mean_dev.squaredNorm() + 0.25 * (zeta - xi).squaredNorm();
}

RowVec optimal_velocity(const RowVec& x, const RowVec& xi, const RowVec& z, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  return xi - (1.5 / tau) * ((x + tau * xi) - z);
}

double stress_trace(const FluidState& state, const TransportMap& map) {
  const Points residual = (state.positions + map.tau * state.velocities) - map.targets;
  return -1.5 / (map.tau * map.tau) * weighted_inner(state.masses, residual, state.positions);
}

StepOutcome pressureless_step(const FluidState& state, const PressurelessStep& cfg) {
  if (!(cfg.tau > 0.0)) throw std::invalid_argument("tau must be positive");
  const double tau = cfg.tau;
  const Points free = state.positions + tau * state.velocities;

  ProjectionProblem problem{state.positions, state.masses, free, cfg.projection};
  const ProjectionResult proj = project(problem);

  StepOutcome out;
  out.map.targets = proj.projected;
  out.map.tau = tau;
  out.map.accepted = true;

  const Points residual = free - out.map.targets;
  out.end_velocities = state.velocities - (1.5 / tau) * residual;

  FluidState moved = state;
  moved.velocities = out.end_velocities;
  PushForward merged = push_forward(moved, out.map, cfg.merge_tol);
  out.state = std::move(merged.state);
  out.cluster_of = std::move(merged.cluster_of);

  // Deviation of each particle's velocity from its cluster mean.
  Points spread(state.size(), state.dim());
  for (Index i = 0; i < state.size(); ++i)
    spread.row(i) = out.end_velocities.row(i) - out.state.velocities.row(out.cluster_of[i]);

  StepReport& r = out.report;
  r.acc_cost_sq = 0.75 / (tau * tau) * weighted_norm_sq(state.masses, residual) +
                  weighted_norm_sq(state.masses, spread);
  r.stress_trace = stress_trace(state, out.map);
  r.kinetic_before = kinetic_energy(state);
  r.kinetic_after = kinetic_energy(out.state);
  r.momentum_after = total_momentum(out.state);
  r.orthogonality_residual = weighted_inner(state.masses, residual, out.map.targets);
  r.pairwise_violation = proj.max_violation;
  r.iterations = proj.sweeps_used;
  return out;
}

}  // namespace gasflow
