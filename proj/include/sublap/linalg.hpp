#pragma once

// Dense kernels shared by every other header: symmetric eigendecomposition,
// SPD solves and norms. Everything is 64-bit; the posterior precision mixes
// a unit prior with GGN eigenvalues many orders of magnitude larger.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstddef>
#include <string>

#include "sublap/error.hpp"

namespace sublap {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Eigenpairs of a symmetric matrix, values non-increasing, eigenvectors in
/// the columns of `vectors`.
struct SymEig {
  Vector values;
  Matrix vectors;
};

namespace detail {

inline void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) {
    throw NumericError(std::string(what) + ": non-finite entries");
  }
}

inline void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw DimensionError(std::string(what) + ": matrix is " +
                         std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ", expected square");
  }
}

// Flip each column so its first non-negligible entry is positive.
inline void fix_signs(Matrix& v) {
  for (Index j = 0; j < v.cols(); ++j) {
    const double scale = v.col(j).cwiseAbs().maxCoeff();
    if (scale == 0.0) continue;
    const double cutoff = 1e-12 * scale;
    for (Index i = 0; i < v.rows(); ++i) {
      if (std::abs(v(i, j)) > cutoff) {
        if (v(i, j) < 0.0) v.col(j) = -v.col(j);
        break;
      }
    }
  }
}

}  // namespace detail

inline double frob_norm(const Matrix& a) { return a.norm(); }

/// Symmetric eigendecomposition with descending eigenvalues and the
/// first-nonzero-positive sign convention. The input is symmetrized first.
inline SymEig sym_eig(const Matrix& a) {
  detail::require_square(a, "sym_eig");
  detail::require_finite(a, "sym_eig");
  const double norm = a.norm();
  if ((a - a.transpose()).norm() > 1e-9 * norm) {
    throw ArgumentError("sym_eig: matrix is not symmetric");
  }
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw NumericError("sym_eig: eigensolver did not converge");
  }
  SymEig out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  detail::fix_signs(out.vectors);
  return out;
}

/// Top-`s` eigenpairs of a symmetric PSD matrix.
inline SymEig truncated_eig(const Matrix& a, Index s) {
  detail::require_square(a, "truncated_eig");
  if (s < 1 || s > a.rows()) {
    throw ArgumentError("truncated_eig: s=" + std::to_string(s) +
                        " outside [1, " + std::to_string(a.rows()) + "]");
  }
  SymEig full = sym_eig(a);
  if (s == a.rows()) return full;
  return SymEig{full.values.head(s), full.vectors.leftCols(s)};
}

/// Number of eigenvalues above `rel_tol * max(values)`; `values` descending.
inline Index numeric_rank(const Vector& values, double rel_tol) {
  if (values.size() == 0 || values(0) <= 0.0) return 0;
  const double cutoff = rel_tol * values(0);
  Index r = 0;
  while (r < values.size() && values(r) > cutoff) ++r;
  return r;
}

/// Solves A X = B for symmetric positive-definite A via Cholesky. If the
/// factorization fails, it is retried once with 1e-10 * trace/dim added to
/// the diagonal.
inline Matrix solve_spd(const Matrix& a, const Matrix& b) {
  detail::require_square(a, "solve_spd");
  if (b.rows() != a.rows()) {
    throw DimensionError("solve_spd: rhs has " + std::to_string(b.rows()) +
                         " rows, matrix has " + std::to_string(a.rows()));
  }
  detail::require_finite(a, "solve_spd");
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt.solve(b);

  const double jitter = 1e-10 * a.trace() / static_cast<double>(a.rows());
  if (jitter > 0.0) {
    Matrix shifted = a;
    shifted.diagonal().array() += jitter;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) return llt.solve(b);
  }
  throw NotPositiveDefiniteError(
      "solve_spd: Cholesky factorization failed (matrix not positive definite)");
}

/// Symmetric part, used after products that are symmetric in exact
/// arithmetic.
inline Matrix symmetrize(const Matrix& a) {
  return 0.5 * (a + a.transpose());
}

}  // namespace sublap
