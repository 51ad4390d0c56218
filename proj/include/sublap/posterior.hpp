#pragma once

// Laplace posterior covariance Psi in three representations:
//   Full      precision V V^T + lambda I, Cholesky-factored
//   Diagonal  precision diag(V V^T) + lambda
//   KFAC      per-layer (G kron A)/N + lambda I, inverted in the Kronecker
//             eigenbasis

#include <string>
#include <variant>
#include <vector>

#include "sublap/curvature.hpp"
#include "sublap/error.hpp"
#include "sublap/linalg.hpp"
#include "sublap/model.hpp"

namespace sublap {

enum class PosteriorKind { Full, Diagonal, Kfac };

inline std::string to_string(PosteriorKind k) {
  switch (k) {
    case PosteriorKind::Full: return "full";
    case PosteriorKind::Diagonal: return "diagonal";
    case PosteriorKind::Kfac: return "kfac";
  }
  return "?";
}

namespace detail {

struct FullPosterior {
  Matrix precision;
  Eigen::LLT<Matrix> llt;
};

struct DiagPosterior {
  Vector precision;
};

struct KfacLayer {
  Index offset = 0;
  Index fan_in = 0;
  Index fan_out = 0;
  Matrix qa, qg;  // eigenvectors of A (augmented input side) and G
  Vector da, dg;  // eigenvalues, clamped at 0
};

struct KfacPosterior {
  std::vector<KfacLayer> layers;
  double inv_n = 1.0;
};

}  // namespace detail

class PosteriorApprox {
 public:
  PosteriorKind kind() const {
    return static_cast<PosteriorKind>(repr_.index());
  }
  double prior_precision() const { return lambda_; }
  Index num_params() const { return p_; }

  /// Psi * M.
  Matrix apply_psi(const Matrix& m) const {
    check_rows(m, "apply_psi");
    return std::visit([&](const auto& r) { return apply(r, m, true); }, repr_);
  }

  /// Psi^-1 * M.
  Matrix apply_psi_inv(const Matrix& m) const {
    check_rows(m, "apply_psi_inv");
    return std::visit([&](const auto& r) { return apply(r, m, false); }, repr_);
  }

  /// diag(Psi).
  Vector variance_diag() const {
    return std::visit([&](const auto& r) { return diag(r); }, repr_);
  }

  friend PosteriorApprox build_full_posterior(const CurvatureFactor&, double, Index);
  friend PosteriorApprox build_diag_posterior(const Vector&, double);
  friend PosteriorApprox build_kfac_posterior(const KfacFactors&, const NetworkSpec&,
                                              double);

 private:
  using Repr = std::variant<detail::FullPosterior, detail::DiagPosterior,
                            detail::KfacPosterior>;
  PosteriorApprox(Repr r, double lambda, Index p)
      : repr_(std::move(r)), lambda_(lambda), p_(p) {}

  void check_rows(const Matrix& m, const char* what) const {
    if (m.rows() != p_) {
      throw DimensionError(std::string(what) + ": expected " + std::to_string(p_) +
                           " rows, got " + std::to_string(m.rows()));
    }
  }

  Matrix apply(const detail::FullPosterior& r, const Matrix& m, bool inverse) const {
    return inverse ? Matrix(r.llt.solve(m)) : Matrix(r.precision * m);
  }
  Matrix apply(const detail::DiagPosterior& r, const Matrix& m, bool inverse) const {
    return inverse ? Matrix(r.precision.cwiseInverse().asDiagonal() * m)
                   : Matrix(r.precision.asDiagonal() * m);
  }
  Matrix apply(const detail::KfacPosterior& r, const Matrix& m, bool inverse) const {
    Matrix out(m.rows(), m.cols());
    for (const auto& layer : r.layers) {
      const Index in1 = layer.fan_in + 1;
      const Index size = in1 * layer.fan_out;
      // Per-entry eigenvalue of the damped block in the Kronecker eigenbasis.
      Matrix scale = (layer.dg * layer.da.transpose()) * r.inv_n;
      scale.array() += lambda_;
      if (inverse) scale = scale.cwiseInverse();
      Matrix w(layer.fan_out, in1);
      for (Index col = 0; col < m.cols(); ++col) {
        for (Index k = 0; k < size; ++k) {
          const Index aug = kfac_local_to_augmented(k, layer.fan_in, layer.fan_out);
          w(aug / in1, aug % in1) = m(layer.offset + k, col);
        }
        Matrix t = layer.qg.transpose() * w * layer.qa;
        t.array() *= scale.array();
        const Matrix back = layer.qg * t * layer.qa.transpose();
        for (Index k = 0; k < size; ++k) {
          const Index aug = kfac_local_to_augmented(k, layer.fan_in, layer.fan_out);
          out(layer.offset + k, col) = back(aug / in1, aug % in1);
        }
      }
    }
    return out;
  }

  Vector diag(const detail::FullPosterior& r) const {
    return r.llt.solve(Matrix::Identity(p_, p_)).diagonal();
  }
  Vector diag(const detail::DiagPosterior& r) const {
    return r.precision.cwiseInverse();
  }
  Vector diag(const detail::KfacPosterior& r) const {
    Vector out(p_);
    for (const auto& layer : r.layers) {
      const Index in1 = layer.fan_in + 1;
      Matrix inv = (layer.dg * layer.da.transpose()) * r.inv_n;
      inv.array() += lambda_;
      inv = inv.cwiseInverse();
      // diag entry (r,j) = sum_{a,b} qg(r,a)^2 qa(j,b)^2 / (dg_a da_b / N + lambda)
      const Matrix qg2 = layer.qg.cwiseAbs2();
      const Matrix qa2 = layer.qa.cwiseAbs2();
      const Matrix d = qg2 * inv * qa2.transpose();  // fan_out x in1
      const Index size = in1 * layer.fan_out;
      for (Index k = 0; k < size; ++k) {
        const Index aug = kfac_local_to_augmented(k, layer.fan_in, layer.fan_out);
        out(layer.offset + k) = d(aug / in1, aug % in1);
      }
    }
    return out;
  }

  Repr repr_;
  double lambda_;
  Index p_;
};

inline void require_positive_lambda(double lambda) {
  if (!(lambda > 0.0)) throw ArgumentError("prior precision must be positive");
}

/// Exact GGN posterior, materializing the p x p precision (p <= max_params).
inline PosteriorApprox build_full_posterior(const CurvatureFactor& f, double lambda,
                                            Index max_params = 25000) {
  require_positive_lambda(lambda);
  detail::FullPosterior r;
  r.precision = ggn_full(f, max_params);
  r.precision.diagonal().array() += lambda;
  r.llt.compute(r.precision);
  if (r.llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError("build_full_posterior: precision not PD");
  }
  const Index p = f.num_params();
  return PosteriorApprox(std::move(r), lambda, p);
}

/// Diagonal posterior from diag(V V^T).
inline PosteriorApprox build_diag_posterior(const Vector& ggn_diagonal,
                                            double lambda) {
  require_positive_lambda(lambda);
  detail::DiagPosterior r{ggn_diagonal.array() + lambda};
  const Index p = ggn_diagonal.size();
  return PosteriorApprox(std::move(r), lambda, p);
}

inline PosteriorApprox build_kfac_posterior(const KfacFactors& k,
                                            const NetworkSpec& spec, double lambda) {
  require_positive_lambda(lambda);
  if (k.A.size() != spec.num_layers() || k.N <= 0) {
    throw DimensionError("build_kfac_posterior: factors do not match network");
  }
  detail::KfacPosterior r;
  r.inv_n = 1.0 / static_cast<double>(k.N);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    detail::KfacLayer layer;
    layer.offset = layer_offset(spec, l);
    layer.fan_in = spec.fan_in(l);
    layer.fan_out = spec.fan_out(l);
    const SymEig ea = sym_eig(k.A[l]);
    const SymEig eg = sym_eig(k.G[l]);
    layer.qa = ea.vectors;
    layer.da = ea.values.cwiseMax(0.0);
    layer.qg = eg.vectors;
    layer.dg = eg.values.cwiseMax(0.0);
    r.layers.push_back(std::move(layer));
  }
  return PosteriorApprox(std::move(r), lambda, param_count(spec));
}

/// P^T Psi^-1 P = (V^T P)^T (V^T P) + lambda P^T P for the exact GGN
/// precision, accumulated over column blocks of V. Symmetrized on return.
inline Matrix apply_psi_inv_quadform(const CurvatureFactor& f, double lambda,
                                     const Matrix& proj, Index block_cols = 512) {
  if (proj.rows() != f.num_params()) {
    throw DimensionError("apply_psi_inv_quadform: projector has wrong row count");
  }
  Matrix k = lambda * (proj.transpose() * proj);
  for (Index start = 0; start < f.V.cols(); start += block_cols) {
    const Index count = std::min(block_cols, f.V.cols() - start);
    const Matrix vp = f.V.middleCols(start, count).transpose() * proj;
    k.noalias() += vp.transpose() * vp;
  }
  return symmetrize(k);
}

/// Streaming variant computing the factor blocks on the fly.
inline Matrix apply_psi_inv_quadform(const Network& net, const Dataset& data,
                                     double lambda, const Matrix& proj) {
  if (proj.rows() != net.num_params()) {
    throw DimensionError("apply_psi_inv_quadform: projector has wrong row count");
  }
  Matrix k = lambda * (proj.transpose() * proj);
  for_each_factor_block(net, data, 64, [&](Index, const Matrix& block) {
    const Matrix vp = block.transpose() * proj;
    k.noalias() += vp.transpose() * vp;
  });
  return symmetrize(k);
}

inline Vector posterior_variance_diag(const PosteriorApprox& post) {
  return post.variance_diag();
}

}  // namespace sublap
