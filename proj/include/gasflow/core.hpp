#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gasflow {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
/// Particle-indexed array: one row per particle, one column per space dimension.
using Points = Eigen::MatrixXd;

enum class GasMode { pressureless, polytropic };

const char* to_string(GasMode mode);
GasMode gas_mode_from_string(const std::string& name);

/// Polytropic law U(r,S) = kappa e^S r^gamma. Pressureless mode ignores gamma and kappa.
struct GasLaw {
  double gamma = 1.4;
  double kappa = 0.0;
  GasMode mode = GasMode::pressureless;

  void validate() const;

  /// Internal energy density U(r,S).
  double energy_density(double r, double S) const;
  /// P(r,S) = U'(r,S) r - U(r,S) = (gamma-1) U.
  double pressure(double r, double S) const;
  /// p(r,S) = P'(r,S) r - P(r,S) = (gamma-1)^2 U.
  double pressure_derivative_term(double r, double S) const;
};

/// Weighted particle cloud: rho = sum m_i delta_{x_i}, velocities u_i, specific entropies S_i.
struct FluidState {
  Vec masses;
  Points positions;
  Points velocities;
  Vec entropies;

  Index size() const { return masses.size(); }
  Index dim() const { return positions.cols(); }

  /// Throws std::invalid_argument on shape mismatch, negative mass/entropy, NaN, or mass sum != 1.
  void validate(double mass_tol = 1e-12) const;
};

struct TransportMap {
  Points targets;
  double tau = 0.0;
  bool accepted = false;

  /// V = (T - x) / tau.
  Points transport_velocity(const Points& base) const { return (targets - base) / tau; }
};

struct StepReport {
  double acc_cost_sq = 0.0;
  double stress_trace = 0.0;
  double kinetic_before = 0.0;
  double kinetic_after = 0.0;
  double internal_before = 0.0;
  double internal_after = 0.0;
  double dissipation = 0.0;
  Vec momentum_after;

  // Optimality diagnostics, filled by the steppers.
  double orthogonality_residual = 0.0;  ///< sum m <(x+tau u)-T, T>, pressureless
  double el_residual = 0.0;             ///< relative residual of the Euler-Lagrange identity
  double cramer_residual = 0.0;         ///< relative residual of the Cramer reduction
  double pairwise_violation = 0.0;      ///< worst negative <T_i-T_j, x_i-x_j>
  int iterations = 0;

  double energy_before() const { return kinetic_before + internal_before; }
  double energy_after() const { return kinetic_after + internal_after; }
  /// Left side of the per-step balance minus the right side.
  double balance_defect() const {
    return kinetic_after + internal_after + stress_trace + 0.5 * acc_cost_sq + dissipation -
           kinetic_before - internal_before;
  }
};

/// Pairwise (cascade) summation; deterministic for a fixed input order.
double pairwise_sum(std::span<const double> values);

template <typename Derived>
double pairwise_sum(const Eigen::DenseBase<Derived>& v) {
  const Vec tmp = v.derived().template cast<double>();
  return pairwise_sum(std::span<const double>(tmp.data(), static_cast<std::size_t>(tmp.size())));
}

/// Sum_i w_i <a_i, b_i>.
double weighted_inner(const Vec& weights, const Points& a, const Points& b);
inline double weighted_norm_sq(const Vec& weights, const Points& a) { return weighted_inner(weights, a, a); }

Vec total_momentum(const FluidState& state);
double kinetic_energy(const FluidState& state);
double second_moment(const FluidState& state);
double total_entropy(const FluidState& state);

/// Length of the bounding-box diagonal; zero for a single point.
double cloud_diameter(const Points& points);

/// Default coincidence tolerance for merging: 1e-9 times the cloud diameter.
double default_merge_tol(const Points& points);

/// Groups rows whose l-infinity distance is within tol (transitively); tol == 0 groups exact duplicates.
/// Labels are dense, numbered in order of first appearance.
std::vector<Index> coincidence_labels(const Points& points, double tol, Index* group_count = nullptr);

struct PushForward {
  FluidState state;
  /// cluster_of[i] = index of the merged particle that old particle i ended up in.
  std::vector<Index> cluster_of;
};

/// Moves particles to map.targets and merges those whose targets agree within merge_tol (l-infinity).
/// Merged particles carry summed mass and mass-weighted mean position, velocity, and entropy.
/// merge_tol < 0 selects default_merge_tol(targets); merge_tol == 0 merges exact coincidences only.
PushForward push_forward(const FluidState& state, const TransportMap& map, double merge_tol = -1.0);

/// Result of one timestep of either stepper.
struct StepOutcome {
  FluidState state;
  TransportMap map;
  StepReport report;
  /// Old particle index -> new particle index (identity when nothing merged).
  std::vector<Index> cluster_of;
  /// Velocities carried by the particles at the end of the step, before merging.
  Points end_velocities;
};

}  // namespace gasflow
