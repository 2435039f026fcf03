#pragma once

#include "gasflow/core.hpp"
#include "gasflow/polytropic.hpp"
#include "gasflow/pressureless.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gasflow {

struct SimConfig {
  double tau = 0.0;
  double t_end = 0.0;
  GasLaw law;
  double merge_tol = -1.0;
  SolverSettings solver;  ///< also carries the projection settings
  std::uint64_t seed = 0;
  int frames_every = 1;   ///< keep every k-th endpoint frame (the last one is always kept)
  int intra_samples = 0;  ///< interpolated frames inside each kept step

  void validate() const;
  int step_count() const;
};

enum class FrameKind { initial, step, intra };
const char* to_string(FrameKind kind);
FrameKind frame_kind_from_string(const std::string& name);

struct Frame {
  double t = 0.0;
  int step = 0;
  FrameKind kind = FrameKind::step;
  FluidState state;
  double internal = 0.0;
  StepReport report;  ///< the step that produced this frame; zero for initial and intra frames

  double kinetic() const { return kinetic_energy(state); }
  double total() const { return kinetic() + internal; }
};

struct Trajectory {
  std::vector<Frame> frames;
  /// lineage[k][i] = index after step k+1 of the particle that had index i before it.
  std::vector<std::vector<Index>> lineage;
  /// Reports of every step, including those whose endpoint frame was thinned out.
  std::vector<StepReport> reports;
  double initial_energy = 0.0;

  /// Initial particles whose trajectories end in particle `index` after `steps` steps.
  std::vector<Index> ancestors(Index index, std::size_t steps) const;
  /// Index after `steps` steps of the particle that started as `initial_index`.
  Index descendant(Index initial_index, std::size_t steps) const;
};

class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// State at local time t in [0, tau] of a step: linear motion toward the targets with velocity
/// (T - x) / tau strictly inside, the stored endpoint states at t = 0 and t = tau.
FluidState interpolate(const FluidState& start, const StepOutcome& step, double t_local);

/// Runs ceil(t_end / tau) steps. `on_frame`, when set, sees each frame as it is produced.
Trajectory simulate(const FluidState& initial, const SimConfig& cfg,
                    const std::function<void(const Frame&)>& on_frame = {});

/// Internal energy of a state on the run's cell complex (zero in pressureless mode).
double state_internal_energy(const FluidState& state, const GasLaw& law, const CellComplex* complex);

double wasserstein2_1d(const FluidState& a, const FluidState& b);

/// Integral of |cumulative mass| for a signed atomic measure with zero total.
double kantorovich_norm_1d(const Vec& positions, const Vec& weights);

struct LipschitzReport {
  double max_ratio = 0.0;  ///< max over frame pairs of W2 / |t - s|
  double bound = 0.0;      ///< sqrt(2 E_bar)
  double worst_excess = 0.0;  ///< max of W2 - bound |t - s| over pairs
  double worst_moment_excess = 0.0;  ///< max of sqrt(M2(t)) - sqrt(M2(0)) - t bound
  bool ok = true;
};

LipschitzReport lipschitz_report(const Trajectory& traj, double slack = 1e-8);

struct LedgerReport {
  double max_energy_increase = 0.0;  ///< relative, between consecutive endpoint frames
  double max_above_initial = 0.0;    ///< relative, any endpoint frame above the initial energy
  double telescoped_gap = 0.0;       ///< relative mismatch of the telescoped per-step balance
  double max_momentum_drift = 0.0;   ///< max |P(t) - P(0)| over frames
  double max_step_defect = 0.0;      ///< max per-step balance_defect, relative to 1 + energy before
};

LedgerReport energy_ledger(const Trajectory& traj);

}  // namespace gasflow
