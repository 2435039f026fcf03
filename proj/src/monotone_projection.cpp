#include "gasflow/monotone_projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace gasflow {

double default_tol_feas(const Points& base_points, const Points& targets) {
  const double scale = std::max({cloud_diameter(base_points), cloud_diameter(targets), 1e-300});
  return 1e-10 * scale * scale;
}

MonotonicityCheck is_monotone(const Points& base_points, const Points& values, double tol) {
  if (base_points.rows() != values.rows() || base_points.cols() != values.cols())
    throw std::invalid_argument("is_monotone: shape mismatch");
  MonotonicityCheck out;
  const Index n = base_points.rows();
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double c = (values.row(i) - values.row(j)).dot(base_points.row(i) - base_points.row(j));
      if (c < out.worst) {
        out.worst = c;
        out.i = i;
        out.j = j;
      }
    }
  }
  out.monotone = out.worst >= -tol;
  return out;
}

std::pair<RowVec, RowVec> halfspace_correct(const RowVec& ti, const RowVec& tj, const RowVec& xi, const RowVec& xj,
                                            double mi, double mj) {
  const RowVec e = xi - xj;
  const double e2 = e.squaredNorm();
  if (e2 == 0.0) throw std::invalid_argument("degenerate pair");
  if (!(mi > 0.0 && mj > 0.0)) throw std::invalid_argument("halfspace_correct: weights must be positive");
  const double c = (ti - tj).dot(e);
  if (c >= 0.0) return {ti, tj};
  const double lambda = -c / (e2 * (1.0 / mi + 1.0 / mj));
  return {ti + (lambda / mi) * e, tj - (lambda / mj) * e};
}

namespace {

void check_problem(const ProjectionProblem& p) {
  const Index n = p.base_points.rows();
  if (n < 1) throw std::invalid_argument("projection problem is empty");
  if (p.weights.size() != n || p.targets.rows() != n || p.targets.cols() != p.base_points.cols())
    throw std::invalid_argument("projection problem arrays must share one length and dimension");
  if (!(p.weights.array() > 0.0).all()) throw std::invalid_argument("projection weights must be positive");
}

double resolve_tol_feas(const ProjectionProblem& p) {
  return p.settings.tol_feas < 0.0 ? default_tol_feas(p.base_points, p.targets) : p.settings.tol_feas;
}

// Tied base points are merged into one particle carrying the summed weight and weighted-mean target.
struct Pooled {
  Points x;
  Vec w;
  Points y;
  std::vector<Index> label;
};

Pooled pool_ties(const ProjectionProblem& p) {
  Pooled out;
  Index groups = 0;
  out.label = coincidence_labels(p.base_points, 0.0, &groups);
  const Index d = p.base_points.cols();
  out.x = Points::Zero(groups, d);
  out.y = Points::Zero(groups, d);
  out.w = Vec::Zero(groups);
  for (Index i = 0; i < p.base_points.rows(); ++i) {
    const Index g = out.label[i];
    out.x.row(g) = p.base_points.row(i);
    out.w(g) += p.weights(i);
    out.y.row(g) += p.weights(i) * p.targets.row(i);
  }
  std::vector<Index> count(static_cast<std::size_t>(groups), 0);
  for (Index g : out.label) ++count[static_cast<std::size_t>(g)];
  for (Index g = 0; g < groups; ++g) out.y.row(g) /= out.w(g);
  // Singletons keep their target bit-for-bit.
  for (Index i = 0; i < p.base_points.rows(); ++i)
    if (count[static_cast<std::size_t>(out.label[i])] == 1) out.y.row(out.label[i]) = p.targets.row(i);
  return out;
}

Points unpool(const Points& pooled, const std::vector<Index>& label) {
  Points out(static_cast<Index>(label.size()), pooled.cols());
  for (std::size_t i = 0; i < label.size(); ++i) out.row(static_cast<Index>(i)) = pooled.row(label[i]);
  return out;
}

}  // namespace

ProjectionResult project_1d(const ProjectionProblem& problem) {
  check_problem(problem);
  if (problem.base_points.cols() != 1) throw std::invalid_argument("project_1d requires d = 1");
  const Index n = problem.base_points.rows();
  const auto x = problem.base_points.col(0);
  for (Index i = 1; i < n; ++i)
    if (x(i) < x(i - 1)) throw std::invalid_argument("unsorted base points");

  const Pooled pooled = pool_ties(problem);
  const Index g = pooled.w.size();

  // Blocks on a stack: weight, weighted sum of targets, number of pooled points.
  std::vector<double> bw, bs;
  std::vector<Index> bn;
  bw.reserve(static_cast<std::size_t>(g));
  bs.reserve(static_cast<std::size_t>(g));
  bn.reserve(static_cast<std::size_t>(g));
  for (Index k = 0; k < g; ++k) {
    bw.push_back(pooled.w(k));
    bs.push_back(pooled.w(k) * pooled.y(k, 0));
    bn.push_back(1);
    while (bw.size() > 1) {
      const std::size_t top = bw.size() - 1;
      if (bs[top - 1] / bw[top - 1] <= bs[top] / bw[top]) break;
      bw[top - 1] += bw[top];
      bs[top - 1] += bs[top];
      bn[top - 1] += bn[top];
      bw.pop_back();
      bs.pop_back();
      bn.pop_back();
    }
  }

  Points t(g, 1);
  Index k = 0;
  for (std::size_t b = 0; b < bw.size(); ++b) {
    const double value = bs[b] / bw[b];
    for (Index r = 0; r < bn[b]; ++r) t(k++, 0) = value;
  }

  ProjectionResult out;
  out.sweeps_used = 1;
  // Multiplier of the constraint between pooled points k and k+1 is minus the running sum of w (T - y).
  double running = 0.0;
  std::vector<double> trace_terms;
  trace_terms.reserve(static_cast<std::size_t>(g));
  for (Index i = 0; i + 1 < g; ++i) {
    running += pooled.w(i) * (t(i, 0) - pooled.y(i, 0));
    trace_terms.push_back(-running * (pooled.x(i + 1, 0) - pooled.x(i, 0)));
    const double c = (t(i + 1, 0) - t(i, 0)) * (pooled.x(i + 1, 0) - pooled.x(i, 0));
    out.max_violation = std::max(out.max_violation, -c);
  }
  out.dual_trace = pairwise_sum(std::span<const double>(trace_terms));
  out.projected = unpool(t, pooled.label);
  return out;
}

namespace {

struct PairList {
  std::vector<std::int32_t> i, j;
  std::size_t size() const { return i.size(); }
};

PairList build_pairs(const Points& x, int neighbor_k) {
  PairList pairs;
  const Index n = x.rows();
  if (neighbor_k <= 0 || neighbor_k >= n - 1) {
    pairs.i.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    pairs.j.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Index a = 0; a < n; ++a)
      for (Index b = a + 1; b < n; ++b) {
        pairs.i.push_back(static_cast<std::int32_t>(a));
        pairs.j.push_back(static_cast<std::int32_t>(b));
      }
    return pairs;
  }
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;
  std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n));
  for (Index a = 0; a < n; ++a) {
    for (Index b = 0; b < n; ++b) dist[b] = {(x.row(a) - x.row(b)).squaredNorm(), b};
    std::partial_sort(dist.begin(), dist.begin() + neighbor_k + 1, dist.end());
    for (int r = 0; r <= neighbor_k; ++r) {
      const Index b = dist[r].second;
      if (b == a) continue;
      edges.emplace_back(static_cast<std::int32_t>(std::min(a, b)), static_cast<std::int32_t>(std::max(a, b)));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  for (const auto& [a, b] : edges) {
    pairs.i.push_back(a);
    pairs.j.push_back(b);
  }
  return pairs;
}

class HildrethSolver {
 public:
  HildrethSolver(const Points& x, const Vec& w, const Points& y, const PairList& pairs)
      : x_(x), w_(w), inv_w_(w.cwiseInverse()), pairs_(pairs), t_(y), lambda_(pairs.size(), 0.0) {}

  // One pass over the listed constraints; returns the squared weighted displacement.
  template <typename Range>
  double sweep(const Range& order) {
    double disp = 0.0;
    const Index d = x_.cols();
    for (std::size_t k : order) {
      const Index i = pairs_.i[k], j = pairs_.j[k];
      double c = 0.0, e2 = 0.0;
      for (Index a = 0; a < d; ++a) {
        const double e = x_(i, a) - x_(j, a);
        c += (t_(i, a) - t_(j, a)) * e;
        e2 += e * e;
      }
      const double denom = e2 * (inv_w_(i) + inv_w_(j));
      const double delta = std::max(-lambda_[k], -c / denom);
      if (delta == 0.0) continue;
      lambda_[k] += delta;
      for (Index a = 0; a < d; ++a) {
        const double e = x_(i, a) - x_(j, a);
        t_(i, a) += delta * e * inv_w_(i);
        t_(j, a) -= delta * e * inv_w_(j);
      }
      disp += delta * delta * denom;
    }
    return disp;
  }

  double max_violation() const {
    double worst = 0.0;
    for (std::size_t k = 0; k < pairs_.size(); ++k) {
      const Index i = pairs_.i[k], j = pairs_.j[k];
      const double c = (t_.row(i) - t_.row(j)).dot(x_.row(i) - x_.row(j));
      worst = std::max(worst, -c);
    }
    return worst;
  }

  std::vector<std::size_t> active() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < lambda_.size(); ++k)
      if (lambda_[k] > 0.0) out.push_back(k);
    return out;
  }

  double dual_trace() const {
    std::vector<double> terms;
    for (std::size_t k = 0; k < lambda_.size(); ++k)
      if (lambda_[k] != 0.0) terms.push_back(lambda_[k] * (x_.row(pairs_.i[k]) - x_.row(pairs_.j[k])).squaredNorm());
    return pairwise_sum(std::span<const double>(terms));
  }

  bool touched() const {
    return std::any_of(lambda_.begin(), lambda_.end(), [](double l) { return l != 0.0; });
  }

  Points& t() { return t_; }
  std::vector<double>& lambda() { return lambda_; }

 private:
  const Points& x_;
  const Vec& w_;
  Vec inv_w_;
  const PairList& pairs_;
  Points t_;
  std::vector<double> lambda_;
};

// Lawson-Hanson non-negative least squares: argmin |A z - b| subject to z >= 0, started from a
// feasible guess whose positive entries form the initial passive set.
Vec nnls(const Eigen::MatrixXd& a, const Vec& b, Vec z) {
  const Index m = a.cols();
  std::vector<char> passive(static_cast<std::size_t>(m), 0);
  for (Index k = 0; k < m; ++k) {
    z(k) = std::max(z(k), 0.0);
    passive[static_cast<std::size_t>(k)] = z(k) > 0.0;
  }
  const double tol = 1e-13 * (1.0 + a.norm() * b.norm());
  const auto solve_passive = [&](Vec& out) {
    std::vector<Index> idx;
    for (Index k = 0; k < m; ++k)
      if (passive[static_cast<std::size_t>(k)]) idx.push_back(k);
    Eigen::MatrixXd sub(a.rows(), static_cast<Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) sub.col(static_cast<Index>(c)) = a.col(idx[c]);
    const Vec part = sub.colPivHouseholderQr().solve(b);
    out = Vec::Zero(m);
    for (std::size_t c = 0; c < idx.size(); ++c) out(idx[c]) = part(static_cast<Index>(c));
  };
  // An index that re-enters and leaves again at once is a round-off cycle; it sits out until
  // another index makes progress.
  std::vector<char> blocked(static_cast<std::size_t>(m), 0);
  for (int outer = 0; outer < 3 * static_cast<int>(m) + 10; ++outer) {
    Index pick = -1;
    if (outer > 0 || std::none_of(passive.begin(), passive.end(), [](char p) { return p != 0; })) {
      const Vec grad = a.transpose() * (b - a * z);
      double best = tol;
      for (Index k = 0; k < m; ++k)
        if (!passive[static_cast<std::size_t>(k)] && !blocked[static_cast<std::size_t>(k)] && grad(k) > best) {
          best = grad(k);
          pick = k;
        }
      if (pick < 0) break;
      passive[static_cast<std::size_t>(pick)] = 1;
    }
    for (int inner = 0; inner <= m; ++inner) {
      Vec trial;
      solve_passive(trial);
      double alpha = 1.0;
      for (Index k = 0; k < m; ++k)
        if (passive[static_cast<std::size_t>(k)] && trial(k) <= 0.0) alpha = std::min(alpha, z(k) / (z(k) - trial(k)));
      if (alpha >= 1.0) {
        z = trial;
        break;
      }
      z += alpha * (trial - z);
      for (Index k = 0; k < m; ++k)
        if (passive[static_cast<std::size_t>(k)] && z(k) <= 0.0) {
          passive[static_cast<std::size_t>(k)] = 0;
          z(k) = 0.0;
        }
    }
    if (pick >= 0 && !passive[static_cast<std::size_t>(pick)])
      blocked[static_cast<std::size_t>(pick)] = 1;
    else
      std::fill(blocked.begin(), blocked.end(), 0);
  }
  return z;
}

// Exact projection onto the cone cut out by a working set of pairs, solved as the dual NNLS
// problem min_{lambda >= 0} |Bt lambda + M^{1/2} y| with T = y + M^{-1} B^T lambda. Pairs violated by the
// result join the working set and the solve repeats; accepted once every pair holds.
bool active_set_polish(const Points& x, const Vec& w, const Points& y, const PairList& pairs,
                       std::vector<std::size_t> act, double tol_feas, Points& t, std::vector<double>& lambda) {
  const Index n = x.rows(), d = x.cols();
  const Vec sqrt_w = w.cwiseSqrt();
  std::vector<double> warm = lambda;
  for (int round = 0; round < 20; ++round) {
    if (act.empty()) return false;
    // Only points touched by the working set carry variables; variable index = slot(i) * d + a.
    std::vector<Index> slot(static_cast<std::size_t>(n), -1);
    std::vector<Index> points;
    for (std::size_t k : act)
      for (Index p : {pairs.i[k], pairs.j[k]})
        if (slot[static_cast<std::size_t>(p)] < 0) {
          slot[static_cast<std::size_t>(p)] = static_cast<Index>(points.size());
          points.push_back(p);
        }
    const Index rows = static_cast<Index>(act.size());
    const Index cols = static_cast<Index>(points.size()) * d;
    if (static_cast<double>(rows) * cols * cols > 4e8 || static_cast<double>(cols) * rows * rows > 4e8) return false;
    // Columns of Bt are the constraint rows scaled by M^{-1/2}.
    Eigen::MatrixXd bt = Eigen::MatrixXd::Zero(cols, rows);
    for (Index r = 0; r < rows; ++r) {
      const Index i = pairs.i[act[r]], j = pairs.j[act[r]];
      const Index si = slot[static_cast<std::size_t>(i)], sj = slot[static_cast<std::size_t>(j)];
      for (Index a = 0; a < d; ++a) {
        const double e = x(i, a) - x(j, a);
        bt(si * d + a, r) = e / sqrt_w(i);
        bt(sj * d + a, r) = -e / sqrt_w(j);
      }
    }
    Vec zy(cols);
    for (std::size_t p = 0; p < points.size(); ++p)
      for (Index a = 0; a < d; ++a) zy(static_cast<Index>(p) * d + a) = sqrt_w(points[p]) * y(points[p], a);

    Vec guess(rows);
    for (Index r = 0; r < rows; ++r) guess(r) = warm[act[r]];
    const Vec mult = nnls(bt, -zy, guess);
    const Vec shift = bt * mult;
    Points candidate = y;
    for (std::size_t p = 0; p < points.size(); ++p)
      for (Index a = 0; a < d; ++a) candidate(points[p], a) += shift(static_cast<Index>(p) * d + a) / sqrt_w(points[p]);

    std::vector<char> in_set(pairs.size(), 0);
    for (std::size_t k : act) in_set[k] = 1;
    std::vector<std::size_t> violated;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const double c = (candidate.row(pairs.i[k]) - candidate.row(pairs.j[k])).dot(x.row(pairs.i[k]) - x.row(pairs.j[k]));
      if (c >= -tol_feas) continue;
      if (in_set[k]) return false;
      violated.push_back(k);
    }
    std::fill(warm.begin(), warm.end(), 0.0);
    for (Index r = 0; r < rows; ++r) warm[act[r]] = mult(r);
    if (violated.empty()) {
      t = candidate;
      lambda = warm;
      return true;
    }
    act.insert(act.end(), violated.begin(), violated.end());
    std::sort(act.begin(), act.end());
  }
  return false;
}

// Best map of the form alpha * T + c (alpha >= 0, c constant); the family stays inside the cone.
void ray_translation_polish(const Vec& w, const Points& y, Points& t) {
  const double wsum = pairwise_sum(w);
  const RowVec tbar = (w.transpose() * t) / wsum;
  const RowVec ybar = (w.transpose() * y) / wsum;
  const Points tc = t.rowwise() - tbar;
  const Points yc = y.rowwise() - ybar;
  const double denom = weighted_norm_sq(w, tc);
  double alpha = denom > 0.0 ? weighted_inner(w, tc, yc) / denom : 0.0;
  alpha = std::max(alpha, 0.0);
  t = (alpha * tc).rowwise() + ybar;
}

}  // namespace

ProjectionResult project_nd(const ProjectionProblem& problem) {
  check_problem(problem);
  const ProjectionSettings& cfg = problem.settings;
  const double tol_feas = resolve_tol_feas(problem);
  const Pooled pooled = pool_ties(problem);
  const PairList pairs = build_pairs(pooled.x, cfg.neighbor_k);

  HildrethSolver solver(pooled.x, pooled.w, pooled.y, pairs);
  const double y_norm = std::sqrt(weighted_norm_sq(pooled.w, pooled.y));
  const double disp_tol = cfg.tol_opt * (1.0 + y_norm);
  const double disp_tol_sq = disp_tol * disp_tol;

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);

  ProjectionResult out;
  double violation = 0.0;
  bool converged = false;
  std::vector<std::size_t> last_active;
  int next_polish = 1, polish_gap = 1;
  for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    const double disp = solver.sweep(order);
    out.sweeps_used = sweep;
    if (disp <= disp_tol_sq) {
      violation = solver.max_violation();
      if (violation <= tol_feas) {
        converged = true;
        break;
      }
    }
    std::vector<std::size_t> act = solver.active();
    // Failed attempts back off geometrically so a stubborn contact set costs O(log sweeps) solves.
    const bool scheduled = act == last_active && sweep >= next_polish;
    if (scheduled) {
      next_polish = sweep + polish_gap;
      polish_gap *= 2;
    }
    if (cfg.active_set_polish && !act.empty() && scheduled &&
        active_set_polish(pooled.x, pooled.w, pooled.y, pairs, act, tol_feas, solver.t(), solver.lambda())) {
      violation = solver.max_violation();
      converged = true;
      break;
    }
    // Inner sweeps restricted to the current contacts; cheap and they settle most of the remaining motion.
    for (int inner = 0; inner < 200 && !act.empty(); ++inner) {
      if (solver.sweep(act) <= 0.01 * disp_tol_sq) break;
    }
    last_active = std::move(act);
  }
  if (!converged) {
    violation = solver.max_violation();
    throw ProjectionError("monotone projection did not converge within max_sweeps (max_violation " +
                              std::to_string(violation) + ")",
                          violation, out.sweeps_used);
  }

  Points t = solver.t();
  if (solver.touched()) {
    // A nearly constant map leaves only round-off in T - mean(T), which the rescaling would amplify.
    // Candidates: the polished map, the plain translation, and the constant mean; the closest
    // feasible one wins.
    const auto worst_of = [&](const Points& c) {
      double worst = 0.0;
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        const RowVec e = pooled.x.row(pairs.i[k]) - pooled.x.row(pairs.j[k]);
        worst = std::max(worst, -(c.row(pairs.i[k]) - c.row(pairs.j[k])).dot(e));
      }
      return worst;
    };
    const double wsum = pairwise_sum(pooled.w);
    const RowVec shift = (pooled.w.transpose() * (pooled.y - t)) / wsum;
    std::vector<Points> candidates;
    Points polished = t;
    ray_translation_polish(pooled.w, pooled.y, polished);
    if (worst_of(polished) <= tol_feas) candidates.push_back(std::move(polished));
    candidates.push_back(t.rowwise() + shift);
    Points constant(t.rows(), t.cols());
    constant.rowwise() = (pooled.w.transpose() * pooled.y) / wsum;
    candidates.push_back(std::move(constant));
    double best = std::numeric_limits<double>::infinity();
    for (auto& c : candidates) {
      const double dist = weighted_norm_sq(pooled.w, c - pooled.y);
      if (dist < best) {
        best = dist;
        t = c;
      }
    }
    violation = worst_of(t);
  }
  out.max_violation = violation;
  out.dual_trace = solver.dual_trace();
  out.projected = unpool(t, pooled.label);
  return out;
}

ProjectionResult project(const ProjectionProblem& problem) {
  check_problem(problem);
  if (problem.base_points.cols() != 1) return project_nd(problem);
  const Index n = problem.base_points.rows();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::stable_sort(perm.begin(), perm.end(),
                   [&](Index a, Index b) { return problem.base_points(a, 0) < problem.base_points(b, 0); });
  ProjectionProblem sorted;
  sorted.settings = problem.settings;
  sorted.base_points.resize(n, 1);
  sorted.targets.resize(n, 1);
  sorted.weights.resize(n);
  for (Index k = 0; k < n; ++k) {
    sorted.base_points(k, 0) = problem.base_points(perm[k], 0);
    sorted.targets(k, 0) = problem.targets(perm[k], 0);
    sorted.weights(k) = problem.weights(perm[k]);
  }
  ProjectionResult res = project_1d(sorted);
  Points t(n, 1);
  for (Index k = 0; k < n; ++k) t(perm[k], 0) = res.projected(k, 0);
  res.projected = std::move(t);
  return res;
}

}  // namespace gasflow
