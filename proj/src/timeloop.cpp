#include "gasflow/timeloop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace gasflow {

void SimConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (!(t_end >= tau)) throw std::invalid_argument("t_end must be >= tau");
  if (frames_every < 1) throw std::invalid_argument("frames_every must be >= 1");
  if (intra_samples < 0) throw std::invalid_argument("intra_samples must be >= 0");
  if (solver.quad_pts < 1) throw std::invalid_argument("quad_pts must be >= 1");
  law.validate();
}

int SimConfig::step_count() const {
  // Guard against t_end / tau landing a rounding error above an integer.
  const double ratio = t_end / tau;
  const double nearest = std::round(ratio);
  if (std::abs(ratio - nearest) <= 1e-12 * std::max(1.0, nearest)) return static_cast<int>(nearest);
  return static_cast<int>(std::ceil(ratio));
}

const char* to_string(FrameKind kind) {
  switch (kind) {
    case FrameKind::initial: return "initial";
    case FrameKind::step: return "step";
    case FrameKind::intra: return "intra";
  }
  return "step";
}

FrameKind frame_kind_from_string(const std::string& name) {
  if (name == "initial") return FrameKind::initial;
  if (name == "step") return FrameKind::step;
  if (name == "intra") return FrameKind::intra;
  throw std::invalid_argument("unknown frame kind '" + name + "'");
}

std::vector<Index> Trajectory::ancestors(Index index, std::size_t steps) const {
  if (steps > lineage.size()) throw std::out_of_range("ancestors: not that many steps");
  std::set<Index> current{index};
  for (std::size_t k = steps; k-- > 0;) {
    std::set<Index> previous;
    for (std::size_t i = 0; i < lineage[k].size(); ++i)
      if (current.count(lineage[k][i])) previous.insert(static_cast<Index>(i));
    current = std::move(previous);
  }
  return {current.begin(), current.end()};
}

Index Trajectory::descendant(Index initial_index, std::size_t steps) const {
  if (steps > lineage.size()) throw std::out_of_range("descendant: not that many steps");
  Index i = initial_index;
  for (std::size_t k = 0; k < steps; ++k) i = lineage[k][static_cast<std::size_t>(i)];
  return i;
}

FluidState interpolate(const FluidState& start, const StepOutcome& step, double t_local) {
  const double tau = step.map.tau;
  if (!(t_local >= 0.0 && t_local <= tau)) throw std::out_of_range("interpolate: t_local outside [0, tau]");
  if (t_local == 0.0) return start;
  if (t_local == tau) return step.state;
  FluidState s = start;
  const Points v = step.map.transport_velocity(start.positions);
  s.positions = start.positions + t_local * v;
  s.velocities = v;
  return s;
}

double state_internal_energy(const FluidState& state, const GasLaw& law, const CellComplex* complex) {
  if (law.mode == GasMode::pressureless || complex == nullptr) return 0.0;
  return mesh_internal_energy(*complex, state.positions, law);
}

Trajectory simulate(const FluidState& initial, const SimConfig& cfg, const std::function<void(const Frame&)>& on_frame) {
  cfg.validate();
  initial.validate();

  std::optional<CellComplex> complex;
  if (cfg.law.mode == GasMode::polytropic) complex = build_cell_complex(initial);
  const CellComplex* cx = complex ? &*complex : nullptr;

  Trajectory traj;
  const auto emit = [&](Frame frame) {
    if (on_frame) on_frame(frame);
    traj.frames.push_back(std::move(frame));
  };

  Frame first;
  first.t = 0.0;
  first.step = 0;
  first.kind = FrameKind::initial;
  first.state = initial;
  first.internal = state_internal_energy(initial, cfg.law, cx);
  first.report.momentum_after = total_momentum(initial);
  traj.initial_energy = first.total();
  if (!std::isfinite(traj.initial_energy)) throw SimulationError("initial internal energy is not finite", 0);
  emit(std::move(first));

  const int steps = cfg.step_count();
  FluidState current = initial;
  for (int k = 1; k <= steps; ++k) {
    StepOutcome out;
    try {
      if (cfg.law.mode == GasMode::pressureless) {
        PressurelessStep ps{cfg.tau, cfg.merge_tol, cfg.solver.projection};
        ps.projection.seed = cfg.seed + static_cast<std::uint64_t>(k);
        out = pressureless_step(current, ps);
      } else {
        PolytropicStep ps{cfg.tau, cfg.law, cfg.solver};
        ps.solver.projection.seed = cfg.seed + static_cast<std::uint64_t>(k);
        out = polytropic_step(current, *cx, ps);
      }
    } catch (const std::exception& e) {
      throw SimulationError("step " + std::to_string(k) + " (t = " + std::to_string(k * cfg.tau) + "): " + e.what(), k);
    }

    const double t0 = (k - 1) * cfg.tau;
    const bool keep = (k % cfg.frames_every == 0) || k == steps;
    if (keep) {
      for (int j = 1; j <= cfg.intra_samples; ++j) {
        const double local = cfg.tau * j / (cfg.intra_samples + 1);
        Frame f;
        f.t = t0 + local;
        f.step = k;
        f.kind = FrameKind::intra;
        f.state = interpolate(current, out, local);
        f.internal = state_internal_energy(f.state, cfg.law, cx);
        f.report.momentum_after = total_momentum(f.state);
        emit(std::move(f));
      }
    }
    traj.lineage.push_back(out.cluster_of);
    traj.reports.push_back(out.report);
    current = std::move(out.state);
    if (keep) {
      Frame f;
      f.t = k * cfg.tau;
      f.step = k;
      f.kind = FrameKind::step;
      f.state = current;
      f.internal = out.report.internal_after;
      f.report = out.report;
      emit(std::move(f));
    }
  }
  return traj;
}

double wasserstein2_1d(const FluidState& a, const FluidState& b) {
  if (a.dim() != 1 || b.dim() != 1) throw std::invalid_argument("wasserstein2_1d: unsupported dimension (d must be 1)");
  const auto sorted = [](const FluidState& s) {
    std::vector<std::pair<double, double>> atoms;
    for (Index i = 0; i < s.size(); ++i) atoms.emplace_back(s.positions(i, 0), s.masses(i));
    std::sort(atoms.begin(), atoms.end());
    return atoms;
  };
  const auto pa = sorted(a), pb = sorted(b);
  std::size_t i = 0, j = 0;
  double ra = pa.empty() ? 0.0 : pa[0].second;
  double rb = pb.empty() ? 0.0 : pb[0].second;
  std::vector<double> terms;
  while (i < pa.size() && j < pb.size()) {
    const double m = std::min(ra, rb);
    const double dx = pa[i].first - pb[j].first;
    terms.push_back(m * dx * dx);
    ra -= m;
    rb -= m;
    // Advance whichever side ran out; the last atoms absorb round-off in the mass totals.
    if (ra <= rb) {
      if (++i < pa.size()) ra = pa[i].second;
    } else {
      if (++j < pb.size()) rb = pb[j].second;
    }
  }
  return std::sqrt(std::max(0.0, pairwise_sum(std::span<const double>(terms))));
}

double kantorovich_norm_1d(const Vec& positions, const Vec& weights) {
  if (positions.size() != weights.size()) throw std::invalid_argument("kantorovich_norm_1d: length mismatch");
  const double total = pairwise_sum(weights);
  if (std::abs(total) > 1e-12) throw std::invalid_argument("kantorovich_norm_1d: measure must have zero total mass");
  std::vector<Index> order(static_cast<std::size_t>(positions.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return positions(a) < positions(b); });
  double cumulative = 0.0;
  std::vector<double> terms;
  for (std::size_t k = 0; k + 1 < order.size(); ++k) {
    cumulative += weights(order[k]);
    terms.push_back(std::abs(cumulative) * (positions(order[k + 1]) - positions(order[k])));
  }
  return pairwise_sum(std::span<const double>(terms));
}

LipschitzReport lipschitz_report(const Trajectory& traj, double slack) {
  LipschitzReport rep;
  rep.bound = std::sqrt(2.0 * std::max(0.0, traj.initial_energy));
  if (traj.frames.empty()) return rep;
  const auto& f = traj.frames;
  const double m0 = std::sqrt(second_moment(f.front().state));
  for (std::size_t a = 0; a < f.size(); ++a) {
    const double moment_excess = std::sqrt(second_moment(f[a].state)) - m0 - f[a].t * rep.bound;
    rep.worst_moment_excess = std::max(rep.worst_moment_excess, moment_excess);
    for (std::size_t b = a + 1; b < f.size(); ++b) {
      const double dt = f[b].t - f[a].t;
      if (dt <= 0.0) continue;
      const double w = wasserstein2_1d(f[a].state, f[b].state);
      rep.max_ratio = std::max(rep.max_ratio, w / dt);
      rep.worst_excess = std::max(rep.worst_excess, w - rep.bound * dt);
    }
  }
  rep.ok = rep.worst_excess <= slack && rep.worst_moment_excess <= slack;
  return rep;
}

LedgerReport energy_ledger(const Trajectory& traj) {
  LedgerReport rep;
  if (traj.frames.empty()) return rep;
  const double e0 = traj.initial_energy;
  const double scale = 1.0 + std::abs(e0);
  std::vector<double> losses;
  double e_last = e0;
  for (const StepReport& r : traj.reports) {
    rep.max_energy_increase = std::max(rep.max_energy_increase, (r.energy_after() - r.energy_before()) / scale);
    rep.max_above_initial = std::max(rep.max_above_initial, (r.energy_after() - e0) / scale);
    rep.max_step_defect = std::max(rep.max_step_defect, r.balance_defect() / (1.0 + std::abs(r.energy_before())));
    losses.push_back(r.stress_trace + 0.5 * r.acc_cost_sq + r.dissipation);
    e_last = r.energy_after();
  }
  rep.telescoped_gap = ((e0 - e_last) - pairwise_sum(std::span<const double>(losses))) / scale;
  const Vec p0 = total_momentum(traj.frames.front().state);
  for (const Frame& f : traj.frames)
    rep.max_momentum_drift = std::max(rep.max_momentum_drift, (total_momentum(f.state) - p0).lpNorm<Eigen::Infinity>());
  return rep;
}

}  // namespace gasflow
