#pragma once

// Projectors P (p x s) defining affine subspace models theta = theta_map + P mu.
//
// Subset projectors select coordinates. Low-rank projectors follow
//   P = Psi_approx J'^T U_s,
// with U_s the dominant eigenvectors of J' Psi_approx J'^T. With the exact
// GGN posterior and J' = J_X this is the optimal projector: the induced
// predictive covariance equals the best rank-s approximation U_s L_s U_s^T
// of Sigma_X, and any P Q with invertible Q gives the same result.

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sublap/curvature.hpp"
#include "sublap/error.hpp"
#include "sublap/io.hpp"
#include "sublap/linalg.hpp"
#include "sublap/model.hpp"
#include "sublap/posterior.hpp"

namespace sublap {

enum class ProjectorKind {
  SubsetMagnitude,
  SubsetDiagonal,
  SubsetSwag,
  LowrankDiagonal,
  LowrankKfac,
  LowrankOptGGN,
  Full,
};

inline const std::vector<ProjectorKind>& all_projector_kinds() {
  static const std::vector<ProjectorKind> kinds = {
      ProjectorKind::SubsetMagnitude, ProjectorKind::SubsetDiagonal,
      ProjectorKind::SubsetSwag,      ProjectorKind::LowrankDiagonal,
      ProjectorKind::LowrankKfac,     ProjectorKind::LowrankOptGGN,
      ProjectorKind::Full};
  return kinds;
}

inline std::string to_string(ProjectorKind k) {
  switch (k) {
    case ProjectorKind::SubsetMagnitude: return "subset-magnitude";
    case ProjectorKind::SubsetDiagonal: return "subset-diagonal";
    case ProjectorKind::SubsetSwag: return "subset-swag";
    case ProjectorKind::LowrankDiagonal: return "lowrank-diagonal";
    case ProjectorKind::LowrankKfac: return "lowrank-kfac";
    case ProjectorKind::LowrankOptGGN: return "lowrankopt-ggn";
    case ProjectorKind::Full: return "none-full";
  }
  return "?";
}

inline ProjectorKind projector_kind_from_string(const std::string& s) {
  for (ProjectorKind k : all_projector_kinds()) {
    if (to_string(k) == s) return k;
  }
  throw ArgumentError("unknown projector kind '" + s + "'");
}

inline bool is_subset_kind(ProjectorKind k) {
  return k == ProjectorKind::SubsetMagnitude || k == ProjectorKind::SubsetDiagonal ||
         k == ProjectorKind::SubsetSwag;
}

struct Projector {
  Matrix P;
  ProjectorKind kind = ProjectorKind::Full;

  Index s() const { return P.cols(); }
  Index num_params() const { return P.rows(); }
};

/// Throws RankError unless the smallest eigenvalue of P^T P exceeds
/// 1e-12 times the largest.
inline void require_full_column_rank(const Matrix& p) {
  if (p.cols() == 0) throw RankError("projector has no columns", 0);
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(
                        p.transpose() * p, Eigen::EigenvaluesOnly)
                        .eigenvalues();
  if (!(ev(0) > 1e-12 * ev(ev.size() - 1))) {
    throw RankError("projector is not of full column rank");
  }
}

/// Indices of the s largest scores, ties broken by lower index.
inline std::vector<Index> top_indices(const Vector& scores, Index s) {
  std::vector<Index> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return scores(a) > scores(b); });
  idx.resize(static_cast<std::size_t>(s));
  return idx;
}

/// Canonical basis vectors of the s largest scores.
inline Projector subset_projector(const Vector& scores, Index s,
                                  ProjectorKind kind = ProjectorKind::SubsetMagnitude) {
  if (s < 1 || s > scores.size()) {
    throw ArgumentError("subset_projector: s=" + std::to_string(s) +
                        " outside [1, " + std::to_string(scores.size()) + "]");
  }
  Projector proj;
  proj.kind = kind;
  proj.P = Matrix::Zero(scores.size(), s);
  const auto idx = top_indices(scores, s);
  for (Index k = 0; k < s; ++k) proj.P(idx[static_cast<std::size_t>(k)], k) = 1.0;
  return proj;
}

inline Projector full_projector(Index p) {
  return Projector{Matrix::Identity(p, p), ProjectorKind::Full};
}

/// Shared construction for low-rank projectors: precomputes Psi J^T and the
/// eigendecomposition of J Psi J^T once, then serves any s.
class LowrankConstruction {
 public:
  LowrankConstruction(const PosteriorApprox& post, const Jacobian& jac,
                      ProjectorKind kind, double rank_tol = 1e-10)
      : kind_(kind) {
    if (jac.cols() != post.num_params()) {
      throw DimensionError("lowrank projector: Jacobian/posterior size mismatch");
    }
    psi_jt_ = post.apply_psi(jac.matrix.transpose());
    gram_ = symmetrize(jac.matrix * psi_jt_);
    eig_ = sym_eig(gram_);
    rank_ = numeric_rank(eig_.values, rank_tol);
  }

  /// Number of eigenvalues of J Psi J^T above the rank tolerance.
  Index usable_rank() const { return rank_; }
  const SymEig& eig() const { return eig_; }
  const Matrix& gram() const { return gram_; }

  Projector projector(Index s) const {
    if (s < 1) throw ArgumentError("lowrank projector: s must be >= 1");
    if (s > rank_) {
      throw RankError("lowrank projector: s=" + std::to_string(s) +
                          " exceeds numerical rank " + std::to_string(rank_),
                      static_cast<std::size_t>(rank_));
    }
    Projector proj;
    proj.kind = kind_;
    proj.P = psi_jt_ * eig_.vectors.leftCols(s);
    return proj;
  }

 private:
  ProjectorKind kind_;
  Matrix psi_jt_;
  Matrix gram_;
  SymEig eig_;
  Index rank_ = 0;
};

/// P = Psi_approx J'^T U_s built from the construction subset X'.
inline Projector lowrank_projector(const PosteriorApprox& post, const Jacobian& jac,
                                   Index s, ProjectorKind kind, double rank_tol = 1e-10) {
  return LowrankConstruction(post, jac, kind, rank_tol).projector(s);
}

/// Optimal projector P* = Psi J_X^T U_s with the exact GGN posterior and the
/// evaluation inputs X themselves.
inline Projector optimal_projector(const PosteriorApprox& full_post,
                                   const Jacobian& jac_eval, Index s,
                                   double rank_tol = 1e-10) {
  if (full_post.kind() != PosteriorKind::Full) {
    throw ArgumentError("optimal_projector: needs the full GGN posterior");
  }
  return lowrank_projector(full_post, jac_eval, s, ProjectorKind::LowrankOptGGN,
                           rank_tol);
}

inline Projector optimal_projector(const CurvatureFactor& factor, double lambda,
                                   const Jacobian& jac_eval, Index s,
                                   double rank_tol = 1e-10) {
  return optimal_projector(build_full_posterior(factor, lambda), jac_eval, s,
                           rank_tol);
}

/// Relative change ||Sigma(PQ) - Sigma(P)||_F / ||Sigma(P)||_F of the induced
/// covariance under a change of basis Q of the subspace.
template <typename SigmaBuilder>
double gauge_invariance_check(const Projector& proj, const Matrix& q,
                              SigmaBuilder&& sigma_of) {
  if (q.rows() != proj.s() || q.cols() != proj.s()) {
    throw DimensionError("gauge_invariance_check: Q must be s x s");
  }
  const Vector sv = Eigen::JacobiSVD<Matrix>(q).singularValues();
  if (!(sv(sv.size() - 1) > 0.0) || sv(0) / sv(sv.size() - 1) >= 1e8) {
    throw ArgumentError("gauge_invariance_check: Q is singular or ill-conditioned");
  }
  const Matrix base = sigma_of(static_cast<const Matrix&>(proj.P));
  const Matrix pq = proj.P * q;
  const Matrix moved = sigma_of(pq);
  const double denom = base.norm();
  if (denom == 0.0) return (moved - base).norm();
  return (moved - base).norm() / denom;
}

inline void save_projector(const std::string& path, const Projector& proj) {
  save_matrix_bin(path, "projector " + to_string(proj.kind), proj.P);
}

inline Projector load_projector(const std::string& path) {
  TaggedMatrix tm = load_matrix_bin(path);
  const std::string prefix = "projector ";
  if (tm.tag.rfind(prefix, 0) != 0) {
    throw ParseError(path + ": not a projector (tag '" + tm.tag + "')");
  }
  return Projector{std::move(tm.matrix),
                   projector_kind_from_string(tm.tag.substr(prefix.size()))};
}

}  // namespace sublap
