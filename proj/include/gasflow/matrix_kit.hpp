#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

// Small dense kernels on d×d matrices (d = 1, 2, 3 in practice). Everything is templated on the
// Eigen expression so fixed-size and dynamic matrices both work.

namespace gasflow::matrix_kit {

template <typename Derived>
using PlainOf = typename Derived::PlainObject;

template <typename Derived>
PlainOf<Derived> sym(const Eigen::MatrixBase<Derived>& a) {
  return (0.5 * (a + a.transpose())).eval();
}

template <typename Derived>
typename Derived::Scalar det(const Eigen::MatrixBase<Derived>& a) {
  return a.determinant();
}

/// Cofactor matrix: cof(A)_{ij} = (-1)^{i+j} det(minor_{ij}), so cof(A)^T A = det(A) Id.
template <typename Derived>
PlainOf<Derived> cofactor(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = a.rows();
  PlainOf<Derived> c(n, n);
  if (n == 1) {
    c(0, 0) = Scalar(1);
    return c;
  }
  if (n == 2) {
    c << a(1, 1), -a(1, 0), -a(0, 1), a(0, 0);
    return c;
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> minor(n - 1, n - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index r = 0, rr = 0; r < n; ++r) {
        if (r == i) continue;
        for (Eigen::Index s = 0, ss = 0; s < n; ++s) {
          if (s == j) continue;
          minor(rr, ss++) = a(r, s);
        }
        ++rr;
      }
      const Scalar sign = ((i + j) % 2 == 0) ? Scalar(1) : Scalar(-1);
      c(i, j) = sign * minor.determinant();
    }
  }
  return c;
}

/// Positive definiteness of a symmetric matrix via Cholesky.
template <typename Derived>
bool is_positive_definite(const Eigen::MatrixBase<Derived>& s) {
  using Plain = PlainOf<Derived>;
  Eigen::LLT<Plain> llt(s.eval());
  if (llt.info() != Eigen::Success) return false;
  return (llt.matrixL().toDenseMatrix().diagonal().array() > 0).all();
}

template <typename Derived>
bool is_psd(const Eigen::MatrixBase<Derived>& s, typename Derived::Scalar tol = 0) {
  Eigen::SelfAdjointEigenSolver<PlainOf<Derived>> es(sym(s), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol;
}

/// h(A) = det(A^sym)^{1-gamma} on positive definite A^sym, +infinity elsewhere.
template <typename Derived>
double h(const Eigen::MatrixBase<Derived>& a, double gamma) {
  const auto s = sym(a);
  if (!is_positive_definite(s)) return std::numeric_limits<double>::infinity();
  return std::pow(static_cast<double>(s.determinant()), 1.0 - gamma);
}

/// dh/dA = (1-gamma) det(S)^{-gamma} cof(S), S = A^sym. Only meaningful where h is finite.
template <typename Derived>
PlainOf<Derived> h_gradient(const Eigen::MatrixBase<Derived>& a, double gamma) {
  const auto s = sym(a);
  const double d = s.determinant();
  return ((1.0 - gamma) * std::pow(d, -gamma)) * cofactor(s);
}

/// Second derivative D^2 h(A)[B, C] (bilinear form, symmetric in B and C).
template <typename DA, typename DB, typename DC>
double h_second(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                const Eigen::MatrixBase<DC>& c, double gamma) {
  const auto s = sym(a);
  const PlainOf<DA> m = s.inverse();
  const PlainOf<DA> mb = m * sym(b);
  const PlainOf<DA> mc = m * sym(c);
  const double g1 = gamma - 1.0;
  return std::pow(static_cast<double>(s.determinant()), 1.0 - gamma) *
         (g1 * g1 * mb.trace() * mc.trace() + g1 * (mb * mc).trace());
}

/// det(S + A) >= det(S) - tol_scale * scale, with scale = max(1, |S|_max^d).
template <typename DS, typename DA>
bool det_inequality_check(const Eigen::MatrixBase<DS>& s, const Eigen::MatrixBase<DA>& a, double tol_scale = 1e-12) {
  const double amp = std::max(1.0, static_cast<double>(s.cwiseAbs().maxCoeff()));
  const double scale = std::pow(amp, static_cast<double>(s.rows()));
  return (s + a).determinant() >= s.determinant() - tol_scale * scale;
}

}  // namespace gasflow::matrix_kit
