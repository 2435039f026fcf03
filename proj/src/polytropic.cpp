#include "gasflow/polytropic.hpp"

#include "gasflow/delaunay.hpp"
#include "gasflow/matrix_kit.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gasflow {

namespace mk = matrix_kit;

namespace {

double factorial(Index d) {
  double f = 1.0;
  for (Index k = 2; k <= d; ++k) f *= static_cast<double>(k);
  return f;
}

Eigen::MatrixXd edge_matrix(const std::vector<Index>& cell, const Points& positions) {
  const Index d = positions.cols();
  Eigen::MatrixXd e(d, d);
  for (Index a = 1; a <= d; ++a) e.col(a - 1) = (positions.row(cell[a]) - positions.row(cell[0])).transpose();
  return e;
}

// Row b_a of d G / d T_a: G = sum_a T_a b_a^T.
Eigen::MatrixXd node_weights(const Eigen::MatrixXd& inverse_edges) {
  const Index d = inverse_edges.rows();
  Eigen::MatrixXd b(d + 1, d);
  b.bottomRows(d) = inverse_edges;
  b.row(0) = -inverse_edges.colwise().sum();
  return b;
}

}  // namespace

CellComplex build_cell_complex(const FluidState& state) {
  const Index n = state.size();
  const Index d = state.dim();
  if ((state.masses.array() <= 0.0).any())
    throw std::invalid_argument("polytropic mode requires positive particle masses");
  CellComplex cx;
  cx.dim = d;
  if (d == 1) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return state.positions(a, 0) < state.positions(b, 0); });
    for (Index k = 0; k + 1 < n; ++k) {
      if (!(state.positions(order[k + 1], 0) > state.positions(order[k], 0)))
        throw std::invalid_argument("polytropic mode requires distinct particle positions");
      cx.cells.push_back({order[k], order[k + 1]});
    }
  } else if (d == 2) {
    for (const Triangle& t : delaunay_2d(state.positions)) cx.cells.push_back({t[0], t[1], t[2]});
  } else {
    throw std::invalid_argument("polytropic mode supports d = 1 and d = 2 only");
  }

  const Index m = cx.size();
  Vec vol(m);
  Vec incident = Vec::Zero(n);
  for (Index c = 0; c < m; ++c) {
    vol(c) = edge_matrix(cx.cells[c], state.positions).determinant() / factorial(d);
    for (Index v : cx.cells[c]) incident(v) += vol(c);
  }
  cx.cell_mass = Vec::Zero(m);
  Vec mass_entropy = Vec::Zero(m);
  for (Index c = 0; c < m; ++c) {
    for (Index v : cx.cells[c]) {
      const double share = state.masses(v) * vol(c) / incident(v);
      cx.cell_mass(c) += share;
      mass_entropy(c) += share * state.entropies(v);
    }
  }
  cx.cell_entropy = mass_entropy.cwiseQuotient(cx.cell_mass);
  return cx;
}

EnergyDiscretization discretize(const CellComplex& complex, const Points& positions) {
  if (positions.cols() != complex.dim) throw std::invalid_argument("discretize: dimension mismatch");
  EnergyDiscretization disc;
  disc.complex = complex;
  disc.reference = positions;
  const Index m = complex.size();
  disc.volume.resize(m);
  disc.density.resize(m);
  disc.inverse_edges.resize(static_cast<std::size_t>(m));
  const double fact = factorial(complex.dim);
  for (Index c = 0; c < m; ++c) {
    const Eigen::MatrixXd e = edge_matrix(complex.cells[c], positions);
    const double det = e.determinant();
    if (!(det > 0.0)) throw std::runtime_error("discretize: cell " + std::to_string(c) + " is degenerate or inverted");
    disc.volume(c) = det / fact;
    disc.density(c) = complex.cell_mass(c) / disc.volume(c);
    disc.inverse_edges[c] = e.inverse();
  }
  return disc;
}

Eigen::MatrixXd cell_gradient(const EnergyDiscretization& disc, Index cell, const Points& targets) {
  return edge_matrix(disc.complex.cells[cell], targets) * disc.inverse_edges[cell];
}

double pressure_P(double r, double S, const GasLaw& law) { return law.pressure(r, S); }
double pressure_p(double r, double S, const GasLaw& law) { return law.pressure_derivative_term(r, S); }

namespace {

double cell_energy_density(const EnergyDiscretization& disc, Index c, const GasLaw& law) {
  return law.energy_density(disc.density(c), disc.complex.cell_entropy(c));
}

bool feasible(const EnergyDiscretization& disc, const Points& targets, const GasLaw& law) {
  for (Index c = 0; c < disc.complex.size(); ++c) {
    if (cell_energy_density(disc, c, law) == 0.0) continue;
    if (!mk::is_positive_definite(mk::sym(cell_gradient(disc, c, targets)))) return false;
  }
  return true;
}

}  // namespace

double internal_energy(const EnergyDiscretization& disc, const Points& targets, const GasLaw& law) {
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(disc.complex.size()));
  for (Index c = 0; c < disc.complex.size(); ++c) {
    const double u = cell_energy_density(disc, c, law);
    if (u == 0.0) continue;
    const double hv = mk::h(cell_gradient(disc, c, targets), law.gamma);
    if (!std::isfinite(hv)) return std::numeric_limits<double>::infinity();
    terms.push_back(u * hv * disc.volume(c));
  }
  return pairwise_sum(std::span<const double>(terms));
}

Points internal_energy_gradient(const EnergyDiscretization& disc, const Points& targets, const GasLaw& law) {
  Points g = Points::Zero(targets.rows(), targets.cols());
  for (Index c = 0; c < disc.complex.size(); ++c) {
    const double u = cell_energy_density(disc, c, law);
    if (u == 0.0) continue;
    const Eigen::MatrixXd dh = mk::h_gradient(cell_gradient(disc, c, targets), law.gamma);
    const Eigen::MatrixXd b = node_weights(disc.inverse_edges[c]);
    const double w = u * disc.volume(c);
    const auto& cell = disc.complex.cells[c];
    for (std::size_t a = 0; a < cell.size(); ++a)
      g.row(cell[a]) += w * (dh * b.row(static_cast<Index>(a)).transpose()).transpose();
  }
  return g;
}

double mesh_internal_energy(const CellComplex& complex, const Points& positions, const GasLaw& law) {
  const double fact = factorial(complex.dim);
  std::vector<double> terms;
  for (Index c = 0; c < complex.size(); ++c) {
    const double det = edge_matrix(complex.cells[c], positions).determinant();
    const double mass = complex.cell_mass(c);
    if (mass == 0.0 || law.kappa == 0.0) continue;
    if (!(det > 0.0)) return std::numeric_limits<double>::infinity();
    const double vol = det / fact;
    terms.push_back(law.energy_density(mass / vol, complex.cell_entropy(c)) * vol);
  }
  return pairwise_sum(std::span<const double>(terms));
}

double objective(const EnergyDiscretization& disc, const FluidState& state, const Points& targets, double tau,
                 const GasLaw& law) {
  const Points residual = (state.positions + tau * state.velocities) - targets;
  const double kinetic = 0.75 / (tau * tau) * weighted_norm_sq(state.masses, residual);
  if (law.kappa == 0.0) return kinetic;
  return kinetic + internal_energy(disc, targets, law);
}

Points objective_gradient(const EnergyDiscretization& disc, const FluidState& state, const Points& targets,
                          double tau, const GasLaw& law) {
  const Points residual = (state.positions + tau * state.velocities) - targets;
  Points g = (-1.5 / (tau * tau)) * (residual.array().colwise() * state.masses.array()).matrix();
  if (law.kappa != 0.0) g += internal_energy_gradient(disc, targets, law);
  return g;
}

namespace {

Vec flatten(const Points& p) {
  Vec v(p.size());
  for (Index i = 0; i < p.rows(); ++i)
    for (Index a = 0; a < p.cols(); ++a) v(i * p.cols() + a) = p(i, a);
  return v;
}

Points unflatten(const Vec& v, Index rows, Index cols) {
  Points p(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index a = 0; a < cols; ++a) p(i, a) = v(i * cols + a);
  return p;
}

Eigen::SparseMatrix<double> objective_hessian(const EnergyDiscretization& disc, const FluidState& state,
                                              const Points& targets, double tau, const GasLaw& law) {
  const Index n = targets.rows(), d = targets.cols();
  std::vector<Eigen::Triplet<double>> trip;
  for (Index i = 0; i < n; ++i)
    for (Index a = 0; a < d; ++a) trip.emplace_back(i * d + a, i * d + a, 1.5 / (tau * tau) * state.masses(i));

  std::vector<Eigen::MatrixXd> unit;  // dG for (node a, component i), indexed a * d + i
  for (Index c = 0; c < disc.complex.size(); ++c) {
    const double u = cell_energy_density(disc, c, law);
    if (u == 0.0) continue;
    const double w = u * disc.volume(c);
    const Eigen::MatrixXd g = cell_gradient(disc, c, targets);
    const Eigen::MatrixXd b = node_weights(disc.inverse_edges[c]);
    const auto& cell = disc.complex.cells[c];
    const Index k = static_cast<Index>(cell.size());
    unit.assign(static_cast<std::size_t>(k * d), Eigen::MatrixXd::Zero(d, d));
    for (Index a = 0; a < k; ++a)
      for (Index i = 0; i < d; ++i) unit[a * d + i].row(i) = b.row(a);
    for (Index p = 0; p < k * d; ++p) {
      for (Index q = p; q < k * d; ++q) {
        const double v = w * mk::h_second(g, unit[p], unit[q], law.gamma);
        const Index row = cell[p / d] * d + p % d;
        const Index col = cell[q / d] * d + q % d;
        trip.emplace_back(row, col, v);
        if (p != q) trip.emplace_back(col, row, v);
      }
    }
  }
  Eigen::SparseMatrix<double> h(n * d, n * d);
  h.setFromTriplets(trip.begin(), trip.end());
  return h;
}

struct TraceTerms {
  double with_targets = 0.0;  // sum P det^{-gamma} tr(cof(S) G) vol
  double with_identity = 0.0;  // sum P det^{-gamma} tr(cof(S)) vol
};

TraceTerms pressure_traces(const EnergyDiscretization& disc, const Points& targets, const GasLaw& law) {
  std::vector<double> a, b;
  for (Index c = 0; c < disc.complex.size(); ++c) {
    const double pr = pressure_P(disc.density(c), disc.complex.cell_entropy(c), law);
    if (pr == 0.0) continue;
    const Eigen::MatrixXd g = cell_gradient(disc, c, targets);
    const Eigen::MatrixXd s = mk::sym(g);
    const Eigen::MatrixXd cof = mk::cofactor(s);
    const double scale = pr * std::pow(s.determinant(), -law.gamma) * disc.volume(c);
    a.push_back(scale * (cof.transpose() * g).trace());
    b.push_back(scale * cof.trace());
  }
  return {pairwise_sum(std::span<const double>(a)), pairwise_sum(std::span<const double>(b))};
}

double relative_gap(double lhs, double rhs) {
  const double denom = std::abs(lhs) + std::abs(rhs);
  return denom > 0.0 ? std::abs(lhs - rhs) / denom : 0.0;
}

}  // namespace

void gauss_legendre(int n, Vec& nodes, Vec& weights) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: need at least one node");
  nodes.resize(n);
  weights.resize(n);
  const double pi = std::acos(-1.0);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    nodes(i) = x;
    weights(i) = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

double dissipation_integral(const EnergyDiscretization& disc, const Points& targets, double tau, const GasLaw& law,
                            int quad_pts) {
  if (law.kappa == 0.0) return 0.0;
  struct CellPath {
    double weight;
    Eigen::MatrixXd grad_v;
  };
  std::vector<CellPath> paths;
  const Index d = disc.dim();
  for (Index c = 0; c < disc.complex.size(); ++c) {
    const double u = cell_energy_density(disc, c, law);
    if (u == 0.0) continue;
    Eigen::MatrixXd gv = (cell_gradient(disc, c, targets) - Eigen::MatrixXd::Identity(d, d)) / tau;
    if (gv.cwiseAbs().maxCoeff() == 0.0) continue;
    paths.push_back({u * disc.volume(c), std::move(gv)});
  }
  if (paths.empty()) return 0.0;

  const auto integrand = [&](double s) {
    std::vector<double> terms;
    terms.reserve(paths.size());
    for (const auto& p : paths) {
      const Eigen::MatrixXd gs = Eigen::MatrixXd::Identity(d, d) + s * p.grad_v;
      terms.push_back(p.weight * mk::h_second(gs, p.grad_v, p.grad_v, law.gamma));
    }
    return s * pairwise_sum(std::span<const double>(terms));
  };

  Vec nodes, weights;
  gauss_legendre(quad_pts, nodes, weights);
  const auto composite = [&](int panels) {
    std::vector<double> terms;
    const double width = tau / panels;
    for (int k = 0; k < panels; ++k) {
      const double mid = (k + 0.5) * width;
      for (int q = 0; q < quad_pts; ++q) terms.push_back(0.5 * width * weights(q) * integrand(mid + 0.5 * width * nodes(q)));
    }
    return pairwise_sum(std::span<const double>(terms));
  };

  int panels = 1;
  double value = composite(panels);
  while (panels < (1 << 14)) {
    panels *= 2;
    const double refined = composite(panels);
    const bool settled = std::abs(refined - value) <= 1e-14 * std::abs(refined);
    value = refined;
    if (settled) break;
  }
  return value;
}

MinimizeResult minimize_step(const EnergyDiscretization& disc, const FluidState& state, double tau,
                             const GasLaw& law, const SolverSettings& solver) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  const Index n = state.size(), d = state.dim();
  const Points free = state.positions + tau * state.velocities;

  MinimizeResult out;
  out.map.tau = tau;
  Points t;

  if (law.kappa == 0.0 || law.mode == GasMode::pressureless) {
    ProjectionProblem problem{state.positions, state.masses, free, solver.projection};
    const ProjectionResult proj = project(problem);
    t = proj.projected;
    out.report.iterations = proj.sweeps_used;
    out.objective_history.push_back(objective(disc, state, t, tau, law));
  } else {
    t = state.positions;
    double f = objective(disc, state, t, tau, law);
    if (feasible(disc, free, law)) {
      const double f_free = objective(disc, state, free, tau, law);
      if (f_free < f) {
        t = free;
        f = f_free;
      }
    }
    out.objective_history.push_back(f);

    int iter = 0;
    double decrement_sq = std::numeric_limits<double>::infinity();
    for (; iter < solver.max_iters; ++iter) {
      const Vec g = flatten(objective_gradient(disc, state, t, tau, law));
      const Eigen::SparseMatrix<double> h = objective_hessian(disc, state, t, tau, law);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(h);
      Vec p = ldlt.info() == Eigen::Success ? Vec(ldlt.solve(-g)) : Vec(-g);
      double slope = g.dot(p);
      if (!(slope < 0.0)) {
        p = -g;
        slope = -g.squaredNorm();
      }
      const double previous_sq = decrement_sq;
      decrement_sq = -slope;
      const double stop = solver.tol * solver.tol * (1.0 + std::abs(f)) * 1e-2;
      if (decrement_sq <= stop) break;
      // Near the rounding floor of the objective, stop once Newton no longer contracts the decrement.
      const bool local = decrement_sq <= 1e-12 * (1.0 + std::abs(f));
      if (local && decrement_sq > 0.25 * previous_sq) break;

      double alpha = 1.0;
      Points trial;
      double f_trial = std::numeric_limits<double>::infinity();
      bool moved = false;
      for (int ls = 0; ls < 80; ++ls, alpha *= 0.5) {
        trial = t + alpha * unflatten(p, n, d);
        if (!feasible(disc, trial, law)) continue;
        f_trial = objective(disc, state, trial, tau, law);
        const double slack = local && ls == 0 ? 1e-14 * (1.0 + std::abs(f)) : 0.0;
        if (f_trial <= f + 1e-4 * alpha * slope + slack) {
          moved = true;
          break;
        }
      }
      if (!moved) {
        // Rounding floor: the Armijo test cannot resolve decreases below machine precision.
        if (local) break;
        throw SolverError("polytropic step: line search failed (Newton decrement^2 " + std::to_string(decrement_sq) + ")",
                          decrement_sq, iter);
      }
      t = trial;
      f = f_trial;
      out.objective_history.push_back(f);
    }
    if (iter >= solver.max_iters)
      throw SolverError("polytropic step: no convergence after " + std::to_string(iter) +
                            " iterations (Newton decrement^2 " + std::to_string(decrement_sq) + ")",
                        decrement_sq, iter);
    out.report.iterations = iter;
  }

  out.map.targets = t;
  out.map.accepted = true;

  StepReport& r = out.report;
  const Points residual = free - t;
  const double scale = 1.5 / (tau * tau);
  const double with_t = scale * weighted_inner(state.masses, residual, t);
  const double with_x = scale * weighted_inner(state.masses, residual, state.positions);
  const double internal_t = law.kappa == 0.0 ? 0.0 : internal_energy(disc, t, law);
  const TraceTerms traces = law.kappa == 0.0 ? TraceTerms{} : pressure_traces(disc, t, law);
  r.el_residual = relative_gap(with_t, -traces.with_targets);
  r.cramer_residual = relative_gap(-with_t, static_cast<double>(d) * (law.gamma - 1.0) * internal_t);
  r.stress_trace = -with_x - traces.with_identity;
  r.orthogonality_residual = weighted_inner(state.masses, residual, t);
  r.acc_cost_sq = 0.75 / (tau * tau) * weighted_norm_sq(state.masses, residual);
  r.kinetic_before = kinetic_energy(state);
  r.internal_before = law.kappa == 0.0 ? 0.0 : internal_energy(disc, state.positions, law);
  r.dissipation = dissipation_integral(disc, t, tau, law, solver.quad_pts);
  r.pairwise_violation = std::max(0.0, -is_monotone(state.positions, t, 0.0).worst);
  return out;
}

StepOutcome polytropic_step(const FluidState& state, const CellComplex& complex, const PolytropicStep& cfg) {
  const EnergyDiscretization disc = discretize(complex, state.positions);
  MinimizeResult res = minimize_step(disc, state, cfg.tau, cfg.law, cfg.solver);

  StepOutcome out;
  out.map = std::move(res.map);
  out.report = res.report;
  const Points residual = (state.positions + cfg.tau * state.velocities) - out.map.targets;
  out.end_velocities = state.velocities - (1.5 / cfg.tau) * residual;

  FluidState moved = state;
  moved.positions = out.map.targets;
  moved.velocities = out.end_velocities;
  out.state = std::move(moved);
  out.cluster_of.resize(static_cast<std::size_t>(state.size()));
  std::iota(out.cluster_of.begin(), out.cluster_of.end(), Index{0});

  StepReport& r = out.report;
  r.kinetic_after = kinetic_energy(out.state);
  r.internal_after = mesh_internal_energy(complex, out.state.positions, cfg.law);
  r.momentum_after = total_momentum(out.state);
  return out;
}

}  // namespace gasflow
