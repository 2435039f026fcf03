#pragma once

#include "gasflow/core.hpp"

#include <cstdint>
#include <stdexcept>
#include <utility>

namespace gasflow {

struct ProjectionSettings {
  /// Absolute feasibility tolerance on <T_i - T_j, x_i - x_j>; negative means 1e-10 * scale^2.
  double tol_feas = -1.0;
  /// Relative per-sweep displacement tolerance.
  double tol_opt = 1e-10;
  int max_sweeps = 200000;
  /// Randomize the constraint order in each sweep (seeded); lexicographic otherwise.
  bool shuffle = false;
  std::uint64_t seed = 0;
  /// Restrict constraints to k nearest neighbours of each point; 0 keeps all pairs.
  int neighbor_k = 0;
  /// Try an exact active-set solve once the sweeps have identified the contacts.
  bool active_set_polish = true;
};

struct ProjectionProblem {
  Points base_points;  ///< x_i
  Vec weights;         ///< m_i > 0
  Points targets;      ///< y_i
  ProjectionSettings settings;
};

struct ProjectionResult {
  Points projected;
  int sweeps_used = 0;
  double max_violation = 0.0;
  /// Sum_i m_i <T_i - y_i, x_i>, accumulated from the constraint multipliers.
  double dual_trace = 0.0;
};

class ProjectionError : public std::runtime_error {
 public:
  ProjectionError(const std::string& what, double max_violation, int sweeps)
      : std::runtime_error(what), max_violation_(max_violation), sweeps_(sweeps) {}
  double max_violation() const { return max_violation_; }
  int sweeps() const { return sweeps_; }

 private:
  double max_violation_;
  int sweeps_;
};

struct MonotonicityCheck {
  bool monotone = true;
  /// Most negative value of <v_i - v_j, x_i - x_j> (0 when none is negative).
  double worst = 0.0;
  Index i = -1;
  Index j = -1;
};

MonotonicityCheck is_monotone(const Points& base_points, const Points& values, double tol);

/// Weighted isotonic regression by pool-adjacent-violators. base_points must be a sorted column.
ProjectionResult project_1d(const ProjectionProblem& problem);

/// Hildreth/Dykstra sweeps over the pairwise half-spaces; works in any dimension.
ProjectionResult project_nd(const ProjectionProblem& problem);

/// Sorts and dispatches to project_1d in one dimension, project_nd otherwise.
ProjectionResult project(const ProjectionProblem& problem);

/// Exact weighted projection of (T_i, T_j) onto {<T_i - T_j, x_i - x_j> >= 0}.
std::pair<RowVec, RowVec> halfspace_correct(const RowVec& ti, const RowVec& tj, const RowVec& xi, const RowVec& xj,
                                            double mi, double mj);

/// 1e-10 * scale^2 with scale the larger diameter of the base and target clouds.
double default_tol_feas(const Points& base_points, const Points& targets);

}  // namespace gasflow
