#pragma once

#include "gasflow/core.hpp"
#include "gasflow/monotone_projection.hpp"

namespace gasflow {

struct PressurelessStep {
  double tau = 0.0;
  double merge_tol = -1.0;  ///< negative selects default_merge_tol
  ProjectionSettings projection;
};

/// Squared minimal acceleration cost 3|(z-x)/tau - (zeta+xi)/2|^2 + |zeta-xi|^2/4.
double accel_cost_sq(const RowVec& x, const RowVec& xi, const RowVec& z, const RowVec& zeta, double tau);

/// Velocity minimizing the acceleration cost for given endpoints: xi - (3/(2 tau)) ((x + tau xi) - z).
RowVec optimal_velocity(const RowVec& x, const RowVec& xi, const RowVec& z, double tau);

/// -(3/(2 tau^2)) sum m <(x + tau u) - T, x>.
double stress_trace(const FluidState& state, const TransportMap& map);

StepOutcome pressureless_step(const FluidState& state, const PressurelessStep& cfg);

}  // namespace gasflow
