#include "gasflow/core.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

namespace gasflow {

const char* to_string(GasMode mode) {
  return mode == GasMode::pressureless ? "pressureless" : "polytropic";
}

GasMode gas_mode_from_string(const std::string& name) {
  if (name == "pressureless") return GasMode::pressureless;
  if (name == "polytropic") return GasMode::polytropic;
  throw std::invalid_argument("unknown mode '" + name + "' (expected pressureless|polytropic)");
}

void GasLaw::validate() const {
  if (mode != GasMode::polytropic) return;
  if (!(gamma > 1.0)) throw std::invalid_argument("gamma must be > 1 in polytropic mode");
  if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be > 0 in polytropic mode");
}

double GasLaw::energy_density(double r, double S) const {
  if (r <= 0.0 || kappa == 0.0) return 0.0;
  return kappa * std::exp(S) * std::pow(r, gamma);
}

double GasLaw::pressure(double r, double S) const { return (gamma - 1.0) * energy_density(r, S); }

double GasLaw::pressure_derivative_term(double r, double S) const {
  return (gamma - 1.0) * (gamma - 1.0) * energy_density(r, S);
}

void FluidState::validate(double mass_tol) const {
  const Index n = masses.size();
  if (n < 1) throw std::invalid_argument("state must contain at least one particle");
  if (positions.rows() != n || velocities.rows() != n || entropies.size() != n)
    throw std::invalid_argument("state arrays must share one length");
  if (positions.cols() < 1 || velocities.cols() != positions.cols())
    throw std::invalid_argument("positions and velocities must share a dimension >= 1");
  if (!masses.allFinite() || !positions.allFinite() || !velocities.allFinite() || !entropies.allFinite())
    throw std::invalid_argument("state contains non-finite values");
  if ((masses.array() < 0.0).any()) throw std::invalid_argument("negative mass");
  if ((entropies.array() < 0.0).any()) throw std::invalid_argument("negative entropy");
  const double total = pairwise_sum(masses);
  if (std::abs(total - 1.0) > mass_tol)
    throw std::invalid_argument("masses must sum to 1 (got " + std::to_string(total) + ")");
}

namespace {

double cascade(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const std::size_t half = n / 2;
  return cascade(v, half) + cascade(v + half, n - half);
}

}  // namespace

double pairwise_sum(std::span<const double> values) { return cascade(values.data(), values.size()); }

double weighted_inner(const Vec& weights, const Points& a, const Points& b) {
  const Vec per_row = (a.array() * b.array()).rowwise().sum().matrix().cwiseProduct(weights);
  return pairwise_sum(per_row);
}

Vec total_momentum(const FluidState& state) {
  Vec p(state.dim());
  for (Index k = 0; k < state.dim(); ++k) p(k) = pairwise_sum(state.masses.cwiseProduct(state.velocities.col(k)));
  return p;
}

double kinetic_energy(const FluidState& state) {
  return 0.5 * weighted_norm_sq(state.masses, state.velocities);
}

double second_moment(const FluidState& state) { return weighted_norm_sq(state.masses, state.positions); }

double total_entropy(const FluidState& state) { return pairwise_sum(state.masses.cwiseProduct(state.entropies)); }

double cloud_diameter(const Points& points) {
  if (points.rows() == 0) return 0.0;
  return (points.colwise().maxCoeff() - points.colwise().minCoeff()).norm();
}

double default_merge_tol(const Points& points) { return 1e-9 * cloud_diameter(points); }

namespace {

struct DisjointSets {
  std::vector<Index> parent;
  explicit DisjointSets(Index n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), Index{0});
  }
  Index find(Index i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(Index a, Index b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

struct CellKeyHash {
  std::size_t operator()(const std::vector<std::int64_t>& key) const {
    std::size_t h = 1469598103934665603ull;
    for (auto k : key) h = (h ^ static_cast<std::size_t>(k)) * 1099511628211ull;
    return h;
  }
};

void link_coincident(const Points& targets, double tol, DisjointSets& sets) {
  const Index n = targets.rows();
  const Index d = targets.cols();
  if (tol <= 0.0) {
    std::map<std::vector<double>, Index> seen;
    for (Index i = 0; i < n; ++i) {
      std::vector<double> key(static_cast<std::size_t>(d));
      for (Index k = 0; k < d; ++k) key[k] = targets(i, k);
      auto [it, inserted] = seen.emplace(std::move(key), i);
      if (!inserted) sets.unite(it->second, i);
    }
    return;
  }
  // Spatial hash with cell size tol: coincident points lie in the same or adjacent cells.
  std::unordered_map<std::vector<std::int64_t>, std::vector<Index>, CellKeyHash> grid;
  std::vector<std::vector<std::int64_t>> keys(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& key = keys[i];
    key.resize(static_cast<std::size_t>(d));
    for (Index k = 0; k < d; ++k) key[k] = static_cast<std::int64_t>(std::floor(targets(i, k) / tol));
    grid[key].push_back(i);
  }
  std::vector<std::int64_t> probe(static_cast<std::size_t>(d));
  const Index neighbours = static_cast<Index>(std::pow(3.0, static_cast<double>(d)));
  for (Index i = 0; i < n; ++i) {
    for (Index code = 0; code < neighbours; ++code) {
      Index c = code;
      for (Index k = 0; k < d; ++k) {
        probe[k] = keys[i][k] + (c % 3) - 1;
        c /= 3;
      }
      auto it = grid.find(probe);
      if (it == grid.end()) continue;
      for (Index j : it->second) {
        if (j <= i) continue;
        if ((targets.row(i) - targets.row(j)).cwiseAbs().maxCoeff() <= tol) sets.unite(i, j);
      }
    }
  }
}

}  // namespace

std::vector<Index> coincidence_labels(const Points& points, double tol, Index* group_count) {
  const Index n = points.rows();
  DisjointSets sets(n);
  link_coincident(points, tol, sets);
  std::vector<Index> label(static_cast<std::size_t>(n), -1);
  std::vector<Index> label_of_root(static_cast<std::size_t>(n), -1);
  Index count = 0;
  for (Index i = 0; i < n; ++i) {
    const Index root = sets.find(i);
    if (label_of_root[root] < 0) label_of_root[root] = count++;
    label[i] = label_of_root[root];
  }
  if (group_count) *group_count = count;
  return label;
}

PushForward push_forward(const FluidState& state, const TransportMap& map, double merge_tol) {
  const Index n = state.size();
  const Index d = state.dim();
  if (map.targets.rows() != n || map.targets.cols() != d)
    throw std::invalid_argument("transport map does not match the state");
  const double tol = merge_tol < 0.0 ? default_merge_tol(map.targets) : merge_tol;

  PushForward out;
  Index groups = 0;
  out.cluster_of = coincidence_labels(map.targets, tol, &groups);
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(groups));
  for (Index i = 0; i < n; ++i) members[out.cluster_of[i]].push_back(i);

  const Index m = static_cast<Index>(members.size());
  FluidState& s = out.state;
  s.masses.resize(m);
  s.positions.resize(m, d);
  s.velocities.resize(m, d);
  s.entropies.resize(m);
  for (Index c = 0; c < m; ++c) {
    const auto& group = members[c];
    if (group.size() == 1) {
      const Index i = group.front();
      s.masses(c) = state.masses(i);
      s.positions.row(c) = map.targets.row(i);
      s.velocities.row(c) = state.velocities.row(i);
      s.entropies(c) = state.entropies(i);
      continue;
    }
    std::vector<double> w;
    for (Index i : group) w.push_back(state.masses(i));
    const double mass = pairwise_sum(std::span<const double>(w));
    RowVec x = RowVec::Zero(d), u = RowVec::Zero(d);
    double S = 0.0;
    for (Index i : group) {
      x += state.masses(i) * map.targets.row(i);
      u += state.masses(i) * state.velocities.row(i);
      S += state.masses(i) * state.entropies(i);
    }
    s.masses(c) = mass;
    if (mass > 0.0) {
      s.positions.row(c) = x / mass;
      s.velocities.row(c) = u / mass;
      s.entropies(c) = S / mass;
    } else {
      s.positions.row(c) = map.targets.row(group.front());
      s.velocities.row(c).setZero();
      s.entropies(c) = state.entropies(group.front());
    }
  }
  return out;
}

}  // namespace gasflow
