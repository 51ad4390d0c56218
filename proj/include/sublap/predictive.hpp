#pragma once

// Epistemic predictive covariances of the linearized model and the
// resulting predictive distributions.
//
//   Sigma_X     = J_X Psi J_X^T
//   Sigma_{P,X} = A K^-1 A^T,  A = J_X P,  K = P^T Psi^-1 P
//
// Outputs are flattened sample-major: entry i*C + c is output c of sample i.

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "sublap/curvature.hpp"
#include "sublap/data.hpp"
#include "sublap/error.hpp"
#include "sublap/io.hpp"
#include "sublap/linalg.hpp"
#include "sublap/model.hpp"
#include "sublap/posterior.hpp"
#include "sublap/subspace.hpp"
#include "sublap/train.hpp"

namespace sublap {

struct EpistemicCov {
  Matrix sigma;  // nC x nC
  Index n = 0;
  Index C = 0;

  double trace() const { return sigma.trace(); }
  Index dim() const { return sigma.rows(); }

  /// Throws NumericError unless symmetric within 1e-9 (relative to the
  /// largest entry) and min eig >= -1e-8 * trace / nC.
  void check_invariants() const {
    const double scale = std::max(sigma.cwiseAbs().maxCoeff(), 1e-300);
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
      throw NumericError("EpistemicCov: not symmetric");
    }
    const double min_eig =
        Eigen::SelfAdjointEigenSolver<Matrix>(sigma, Eigen::EigenvaluesOnly)
            .eigenvalues()(0);
    if (min_eig < -1e-8 * std::abs(trace()) / static_cast<double>(dim())) {
      throw NumericError("EpistemicCov: not positive semi-definite (min eig " +
                         std::to_string(min_eig) + ")");
    }
  }
};

/// Sigma_X = J Psi J^T.
inline EpistemicCov epistemic_cov_full(const Jacobian& jac, const PosteriorApprox& post) {
  if (jac.cols() != post.num_params()) {
    throw DimensionError("epistemic_cov_full: Jacobian/posterior size mismatch");
  }
  EpistemicCov out;
  out.n = jac.n;
  out.C = jac.C;
  out.sigma = symmetrize(jac.matrix * post.apply_psi(jac.matrix.transpose()));
  return out;
}

/// The ingredients A = J P and K = P^T Psi^-1 P of the subspace covariance,
/// with K already factored.
class SubspacePredictive {
 public:
  SubspacePredictive(const Jacobian& jac, const Matrix& proj, const Matrix& k)
      : n_(jac.n), C_(jac.C) {
    if (jac.cols() != proj.rows()) {
      throw DimensionError("epistemic_cov_subspace: Jacobian/projector mismatch");
    }
    if (k.rows() != proj.cols() || k.cols() != proj.cols()) {
      throw DimensionError("epistemic_cov_subspace: K must be s x s");
    }
    require_full_column_rank(proj);
    a_ = jac.matrix * proj;
    try {
      k_inv_at_ = solve_spd(k, a_.transpose());
    } catch (const NumericError& e) {
      throw RankError(std::string("epistemic_cov_subspace: K = P^T Psi^-1 P is "
                                  "singular; projector is rank deficient (") +
                      e.what() + ")");
    }
  }

  EpistemicCov cov() const {
    return EpistemicCov{symmetrize(a_ * k_inv_at_), n_, C_};
  }

  /// Tr(A K^-1 A^T) without forming the nC x nC matrix.
  double trace() const { return a_.cwiseProduct(k_inv_at_.transpose()).sum(); }

  /// diag(A K^-1 A^T).
  Vector diagonal() const {
    return a_.cwiseProduct(k_inv_at_.transpose()).rowwise().sum();
  }

 private:
  Index n_, C_;
  Matrix a_;
  Matrix k_inv_at_;  // K^-1 A^T
};

inline SubspacePredictive subspace_predictive(const Jacobian& jac, const Matrix& proj,
                                              const CurvatureFactor& factor,
                                              double lambda) {
  return SubspacePredictive(jac, proj, apply_psi_inv_quadform(factor, lambda, proj));
}

/// Sigma_{P,X} = J P (P^T Psi^-1 P)^-1 P^T J^T with the exact GGN precision.
inline EpistemicCov epistemic_cov_subspace(const Jacobian& jac, const Matrix& proj,
                                           const CurvatureFactor& factor,
                                           double lambda) {
  return subspace_predictive(jac, proj, factor, lambda).cov();
}

inline EpistemicCov epistemic_cov_subspace(const Jacobian& jac, const Projector& proj,
                                           const CurvatureFactor& factor,
                                           double lambda) {
  return epistemic_cov_subspace(jac, proj.P, factor, lambda);
}

/// Streaming variant: the curvature factor is regenerated from the training
/// data block by block.
inline EpistemicCov epistemic_cov_subspace(const Jacobian& jac, const Matrix& proj,
                                           const Network& net, const Dataset& train,
                                           double lambda) {
  return SubspacePredictive(jac, proj, apply_psi_inv_quadform(net, train, lambda, proj))
      .cov();
}

/// Tr Sigma_{P,X} without materializing the nC x nC covariance.
inline double trace_subspace(const Jacobian& jac, const Matrix& proj,
                             const CurvatureFactor& factor, double lambda) {
  return subspace_predictive(jac, proj, factor, lambda).trace();
}

// ---------------------------------------------------------------------------
// Predictive distributions

struct GaussianPred {
  Vector mean;      // nC
  Matrix total_cov; // Sigma + sigma^2 I
  Index n = 0;
  Index C = 0;
};

struct CategoricalPred {
  Matrix probs;  // n x C
};

/// N(f(X), Sigma + sigma^2 I).
inline GaussianPred predict_regression(const Network& net, const Matrix& x,
                                       const EpistemicCov& cov, double sigma) {
  const Index C = net.spec.output_dim();
  if (cov.dim() != x.rows() * C) {
    throw DimensionError("predict_regression: covariance has dimension " +
                         std::to_string(cov.dim()) + ", expected " +
                         std::to_string(x.rows() * C));
  }
  if (!(sigma > 0.0) && cov.sigma.diagonal().minCoeff() <= 0.0) {
    throw ArgumentError("predict_regression: sigma <= 0 with a singular epistemic "
                        "covariance gives an improper distribution");
  }
  GaussianPred pred;
  pred.n = x.rows();
  pred.C = C;
  pred.mean = forward(net, x);
  pred.total_cov = cov.sigma;
  pred.total_cov.diagonal().array() += sigma * sigma;
  return pred;
}

/// Probit approximation: softmax(z_c / sqrt(1 + pi/8 * Sigma_cc)) row-wise.
inline CategoricalPred probit_probs(const Matrix& logits, const Vector& var_diag) {
  const Index n = logits.rows();
  const Index C = logits.cols();
  if (var_diag.size() != n * C) {
    throw DimensionError("probit: variance vector does not match logits");
  }
  CategoricalPred pred;
  pred.probs.resize(n, C);
  for (Index i = 0; i < n; ++i) {
    Vector z(C);
    for (Index c = 0; c < C; ++c) {
      double v = var_diag(i * C + c);
      if (v < 0.0) {
        if (v < -1e-8) {
          throw NumericError("probit: negative predictive variance " +
                             std::to_string(v));
        }
        v = 0.0;
      }
      z(c) = logits(i, c) / std::sqrt(1.0 + std::numbers::pi / 8.0 * v);
    }
    pred.probs.row(i) = row_softmax(z).transpose();
  }
  return pred;
}

inline CategoricalPred predict_classification_probit(const Network& net,
                                                     const Matrix& x,
                                                     const EpistemicCov& cov) {
  const Matrix logits = forward_matrix(net, x);
  if (cov.dim() != logits.size()) {
    throw DimensionError("predict_classification_probit: covariance dimension mismatch");
  }
  return probit_probs(logits, cov.sigma.diagonal());
}

inline void write_gaussian_pred_csv(const std::string& path, const GaussianPred& pred) {
  write_atomically(path, [&](std::ofstream& out) {
    out.precision(17);
    out << "sample,output,mean,variance\n";
    for (Index i = 0; i < pred.n; ++i) {
      for (Index c = 0; c < pred.C; ++c) {
        const Index k = i * pred.C + c;
        out << i << ',' << c << ',' << pred.mean(k) << ',' << pred.total_cov(k, k)
            << '\n';
      }
    }
  });
}

inline void write_categorical_pred_csv(const std::string& path,
                                       const CategoricalPred& pred) {
  write_atomically(path, [&](std::ofstream& out) {
    out.precision(17);
    out << "sample";
    for (Index c = 0; c < pred.probs.cols(); ++c) out << ",p" << c;
    out << '\n';
    for (Index i = 0; i < pred.probs.rows(); ++i) {
      out << i;
      for (Index c = 0; c < pred.probs.cols(); ++c) out << ',' << pred.probs(i, c);
      out << '\n';
    }
  });
}

}  // namespace sublap
