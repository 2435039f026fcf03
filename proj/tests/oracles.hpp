#pragma once

// Independent reference computations used only by the tests.

#include "gasflow/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using gasflow::Index;
using gasflow::Points;
using gasflow::Vec;

/// Weighted projection of y onto {T : <T_i - T_j, x_i - x_j> = 0 for (i, j) in active}, via the
/// eigen-decomposed Gram matrix of the constraints (pseudo-inverse with a relative cutoff).
inline Points project_onto_face(const Points& x, const Vec& w, const Points& y,
                                const std::vector<std::pair<Index, Index>>& active) {
  const Index n = x.rows(), d = x.cols();
  if (active.empty()) return y;
  const Index k = static_cast<Index>(active.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, n * d);
  for (Index r = 0; r < k; ++r) {
    const auto [i, j] = active[r];
    for (Index c = 0; c < d; ++c) {
      a(r, i * d + c) = x(i, c) - x(j, c);
      a(r, j * d + c) = -(x(i, c) - x(j, c));
    }
  }
  Vec minv(n * d), yv(n * d);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c) {
      minv(i * d + c) = 1.0 / w(i);
      yv(i * d + c) = y(i, c);
    }
  const Eigen::MatrixXd am = a * minv.asDiagonal();
  const Eigen::MatrixXd gram = am * a.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const Vec ev = es.eigenvalues();
  const double cutoff = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Vec inv = Vec::Zero(k);
  for (Index r = 0; r < k; ++r)
    if (ev(r) > cutoff) inv(r) = 1.0 / ev(r);
  const Eigen::MatrixXd pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  const Vec lambda = pinv * (a * yv);
  const Vec t = yv - am.transpose() * lambda;
  Points out(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c) out(i, c) = t(i * d + c);
  return out;
}

/// Exhaustive search: the projection onto the monotone cone is the closest feasible face projection.
inline Points brute_force_projection(const Points& x, const Vec& w, const Points& y) {
  const Index n = x.rows();
  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  const std::size_t p = pairs.size();
  double best = std::numeric_limits<double>::infinity();
  Points best_t = y;
  const double scale = std::max(1.0, y.cwiseAbs().maxCoeff()) * std::max(1.0, x.cwiseAbs().maxCoeff());
  for (std::size_t mask = 0; mask < (std::size_t{1} << p); ++mask) {
    std::vector<std::pair<Index, Index>> active;
    for (std::size_t b = 0; b < p; ++b)
      if (mask & (std::size_t{1} << b)) active.push_back(pairs[b]);
    const Points t = project_onto_face(x, w, y, active);
    bool feasible = true;
    for (const auto& [i, j] : pairs)
      if ((t.row(i) - t.row(j)).dot(x.row(i) - x.row(j)) < -1e-11 * scale) {
        feasible = false;
        break;
      }
    if (!feasible) continue;
    double dist = 0.0;
    for (Index i = 0; i < n; ++i) dist += w(i) * (t.row(i) - y.row(i)).squaredNorm();
    if (dist < best) {
      best = dist;
      best_t = t;
    }
  }
  return best_t;
}

/// Random cloud with normalized positive masses, given dimension and size.
inline gasflow::FluidState random_state(std::mt19937_64& rng, Index n, Index d, bool zero_momentum = false) {
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  gasflow::FluidState s;
  s.masses.resize(n);
  s.positions.resize(n, d);
  s.velocities.resize(n, d);
  s.entropies.resize(n);
  for (Index i = 0; i < n; ++i) {
    s.masses(i) = unit(rng);
    s.entropies(i) = unit(rng) - 0.05;
    for (Index c = 0; c < d; ++c) {
      s.positions(i, c) = normal(rng);
      s.velocities(i, c) = normal(rng);
    }
  }
  s.masses /= s.masses.sum();
  if (zero_momentum) s.velocities.rowwise() -= (s.masses.transpose() * s.velocities);
  return s;
}

/// Closed form of the pressureless cluster example: pooled position beta(tau) tau.
inline double cluster_beta(double tau) { return (2.0 / tau) * (std::sqrt(1.0 + tau) - 1.0); }

/// One-dimensional polytropic step by nodal Gauss-Seidel: every node minimizes its own convex
/// scalar objective between its neighbours, by bisection on the derivative. Nodes must be sorted.
/// weight[k] multiplies (T_{k+1} - T_k)^{1 - gamma} for cell k.
inline Vec gauss_seidel_1d(const Vec& m, const Vec& y, const Vec& weight, double gamma, double tau, Vec t,
                           int sweeps) {
  const Index n = t.size();
  const double c = 1.5 / (tau * tau);
  for (int s = 0; s < sweeps; ++s) {
    double change = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double lo = i > 0 ? t(i - 1) : -std::numeric_limits<double>::infinity();
      const double hi = i + 1 < n ? t(i + 1) : std::numeric_limits<double>::infinity();
      const auto deriv = [&](double v) {
        double g = -c * m(i) * (y(i) - v);
        if (i > 0) g += weight(i - 1) * (1.0 - gamma) * std::pow(v - lo, -gamma);
        if (i + 1 < n) g -= weight(i) * (1.0 - gamma) * std::pow(hi - v, -gamma);
        return g;
      };
      double a = std::isfinite(lo) ? lo : t(i) - 1.0;
      double b = std::isfinite(hi) ? hi : t(i) + 1.0;
      while (!std::isfinite(lo) && deriv(a) > 0.0) a -= 2.0 * (b - a);
      while (!std::isfinite(hi) && deriv(b) < 0.0) b += 2.0 * (b - a);
      for (int it = 0; it < 200 && b - a > 1e-16 * (1.0 + std::abs(a)); ++it) {
        const double mid = 0.5 * (a + b);
        if (mid == a || mid == b) break;
        (deriv(mid) > 0.0 ? b : a) = mid;
      }
      const double v = 0.5 * (a + b);
      change = std::max(change, std::abs(v - t(i)));
      t(i) = v;
    }
    if (change < 1e-15) break;
  }
  return t;
}

}  // namespace oracle
