#pragma once

#include "gasflow/core.hpp"
#include "gasflow/monotone_projection.hpp"

#include <vector>

namespace gasflow {

/// Lagrangian cells fixed at the start of a run. In 1D the cells are the gaps between consecutive
/// particles; in 2D they are the Delaunay triangles of the initial cloud. Each particle's mass is
/// shared among its incident cells in proportion to cell volume, and cell masses and entropies are
/// carried along unchanged.
struct CellComplex {
  Index dim = 1;
  std::vector<std::vector<Index>> cells;  ///< dim + 1 node indices per cell, positively oriented
  Vec cell_mass;
  Vec cell_entropy;

  Index size() const { return static_cast<Index>(cells.size()); }
};

CellComplex build_cell_complex(const FluidState& state);

/// Cell geometry at a reference configuration: volumes, densities, and inverse edge matrices.
struct EnergyDiscretization {
  CellComplex complex;
  Points reference;  ///< node positions the gradients are taken against
  Vec volume;
  Vec density;
  std::vector<Eigen::MatrixXd> inverse_edges;  ///< (x_a - x_0)_{a=1..d} as columns, inverted

  Index dim() const { return complex.dim; }
};

/// Throws if any cell is degenerate or inverted at the given positions.
EnergyDiscretization discretize(const CellComplex& complex, const Points& positions);

/// Cell gradient of the piecewise-affine interpolant of targets.
Eigen::MatrixXd cell_gradient(const EnergyDiscretization& disc, Index cell, const Points& targets);

/// P(r, S) = (gamma - 1) U(r, S).
double pressure_P(double r, double S, const GasLaw& law);
/// p(r, S) = P'(r, S) r - P(r, S) = (gamma - 1)^2 U(r, S).
double pressure_p(double r, double S, const GasLaw& law);

/// sum over cells of U(r, S) h(grad T) vol; +infinity when a massive cell has a non-positive symmetric gradient.
double internal_energy(const EnergyDiscretization& disc, const Points& targets, const GasLaw& law);
inline double internal_energy(const EnergyDiscretization& disc, const TransportMap& map, const GasLaw& law) {
  return internal_energy(disc, map.targets, law);
}
/// Gradient of internal_energy with respect to the node targets.
Points internal_energy_gradient(const EnergyDiscretization& disc, const Points& targets, const GasLaw& law);

/// Internal energy of the cells at their actual volumes: sum U(M / vol, S) vol.
double mesh_internal_energy(const CellComplex& complex, const Points& positions, const GasLaw& law);

/// (3 / (4 tau^2)) sum m |(x + tau u) - T|^2 + internal_energy.
double objective(const EnergyDiscretization& disc, const FluidState& state, const Points& targets, double tau,
                 const GasLaw& law);
Points objective_gradient(const EnergyDiscretization& disc, const FluidState& state, const Points& targets,
                          double tau, const GasLaw& law);

struct SolverSettings {
  int max_iters = 10000;
  double tol = 1e-10;  ///< relative Newton decrement at which the solve stops
  int quad_pts = 8;    ///< Gauss-Legendre nodes per panel for the dissipation integral
  ProjectionSettings projection;  ///< used when kappa = 0
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double decrement, int iterations)
      : std::runtime_error(what), decrement_(decrement), iterations_(iterations) {}
  double decrement() const { return decrement_; }
  int iterations() const { return iterations_; }

 private:
  double decrement_;
  int iterations_;
};

struct MinimizeResult {
  TransportMap map;
  StepReport report;
  std::vector<double> objective_history;
};

/// Damped Newton on the convex objective, with feasibility backtracking and an Armijo rule.
MinimizeResult minimize_step(const EnergyDiscretization& disc, const FluidState& state, double tau,
                             const GasLaw& law, const SolverSettings& solver);

/// Integral over s in [0, tau] of s * D^2 U[T_s](V, V), T_s = x + s V, V = (T - x) / tau.
double dissipation_integral(const EnergyDiscretization& disc, const Points& targets, double tau, const GasLaw& law,
                            int quad_pts);

struct PolytropicStep {
  double tau = 0.0;
  GasLaw law;
  SolverSettings solver;
};

StepOutcome polytropic_step(const FluidState& state, const CellComplex& complex, const PolytropicStep& cfg);

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, Vec& nodes, Vec& weights);

}  // namespace gasflow
