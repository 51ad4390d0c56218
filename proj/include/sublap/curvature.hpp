#pragma once

// Generalized Gauss-Newton / Fisher curvature.
//
// Every object here is an unaveraged sum over the N training samples, so the
// Laplace precision is simply  V V^T + lambda * I.

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sublap/data.hpp"
#include "sublap/error.hpp"
#include "sublap/io.hpp"
#include "sublap/linalg.hpp"
#include "sublap/model.hpp"
#include "sublap/train.hpp"

namespace sublap {

/// Hessian of -ln p(y|f) w.r.t. the network output f. For the likelihoods
/// used here it does not depend on y: sigma^-2 I for regression and
/// diag(phi) - phi phi^T for softmax classification.
inline Matrix output_hessian(const Eigen::Ref<const Vector>& f, const Task& task) {
  const Index C = f.size();
  if (task.is_regression()) {
    return Matrix::Identity(C, C) / (task.sigma * task.sigma);
  }
  if (!f.allFinite()) throw NumericError("output_hessian: non-finite logits");
  const Vector phi = row_softmax(f);
  Matrix h = -phi * phi.transpose();
  h.diagonal() += phi;
  return h;
}

/// B with B B^T = output_hessian(f): sigma^-1 I, or diag(sqrt(phi)) - phi sqrt(phi)^T.
inline Matrix output_hessian_sqrt(const Eigen::Ref<const Vector>& f,
                                  const Task& task) {
  const Index C = f.size();
  if (task.is_regression()) return Matrix::Identity(C, C) / task.sigma;
  if (!f.allFinite()) throw NumericError("output_hessian_sqrt: non-finite logits");
  const Vector phi = row_softmax(f);
  const Vector root = phi.cwiseSqrt();
  Matrix b = -phi * root.transpose();
  b.diagonal() += root;
  return b;
}

/// V (p x N*C) with sum_i J_i^T H_i J_i = V V^T; columns i*C..(i+1)*C-1 hold
/// J_i^T B_i for sample i.
struct CurvatureFactor {
  Matrix V;
  Index N = 0;
  Index C = 0;

  Index num_params() const { return V.rows(); }
};

struct CurvatureOptions {
  double max_factor_entries = 2e8;  // guard on p * N * C
};

/// Visits the factor in column blocks of at most `batch` samples:
/// fn(first_sample, block) with block of shape p x (samples*C).
template <typename Fn>
void for_each_factor_block(const Network& net, const Dataset& data, Index batch,
                           Fn&& fn) {
  const Index C = net.spec.output_dim();
  const Index p = net.num_params();
  batch = std::max<Index>(batch, 1);
  Matrix jac(C, p);
  for (Index start = 0; start < data.size(); start += batch) {
    const Index count = std::min(batch, data.size() - start);
    Matrix block(p, count * C);
    for (Index k = 0; k < count; ++k) {
      const Vector x = data.X.row(start + k).transpose();
      const SampleBackprop bp = sample_backprop(net, x);
      sample_jacobian_into(net, bp, jac);
      block.middleCols(k * C, C).noalias() =
          jac.transpose() * output_hessian_sqrt(bp.output, data.task);
    }
    fn(start, static_cast<const Matrix&>(block));
  }
}

inline CurvatureFactor curvature_factor(const Network& net, const Dataset& data,
                                        const CurvatureOptions& opts = {}) {
  const Index C = net.spec.output_dim();
  if (data.output_dim() != C) {
    throw DimensionError("curvature_factor: dataset/network output mismatch");
  }
  const double entries = static_cast<double>(net.num_params()) *
                         static_cast<double>(data.size()) * static_cast<double>(C);
  if (entries > opts.max_factor_entries) {
    throw CapacityError("curvature_factor: p*N*C = " + std::to_string(entries) +
                        " exceeds the materialization guard");
  }
  CurvatureFactor f;
  f.N = data.size();
  f.C = C;
  f.V.resize(net.num_params(), data.size() * C);
  for_each_factor_block(net, data, 64, [&](Index start, const Matrix& block) {
    f.V.middleCols(start * C, block.cols()) = block;
  });
  return f;
}

/// Dense V V^T (= N * H_GGN). Guarded at p <= max_params.
inline Matrix ggn_full(const CurvatureFactor& f, Index max_params = 25000) {
  if (f.num_params() > max_params) {
    throw CapacityError("ggn_full: p = " + std::to_string(f.num_params()) +
                        " exceeds guard " + std::to_string(max_params));
  }
  Matrix g = Matrix::Zero(f.num_params(), f.num_params());
  g.selfadjointView<Eigen::Lower>().rankUpdate(f.V);
  return g.selfadjointView<Eigen::Lower>();
}

/// diag(V V^T) = row-wise sums of squares.
inline Vector ggn_diag(const CurvatureFactor& f) {
  return f.V.rowwise().squaredNorm();
}

/// Streaming variant that never stores V.
inline Vector ggn_diag(const Network& net, const Dataset& data) {
  Vector d = Vector::Zero(net.num_params());
  for_each_factor_block(net, data, 64, [&](Index, const Matrix& block) {
    d += block.rowwise().squaredNorm();
  });
  return d;
}

// ---------------------------------------------------------------------------
// KFAC
//
// For layer l with augmented input a_bar = (a, 1) and augmented weight
// W_bar = [W | b], the curvature block in row-major vec(W_bar) order is
// approximated by  (G_l kron A_l) / N  with
//   A_l = sum_i a_bar_i a_bar_i^T,
//   G_l = sum_i (D_li B_i)(D_li B_i)^T,
// D_li the Jacobian of the network output w.r.t. the layer pre-activation.

struct KfacFactors {
  std::vector<Matrix> A;  // (in+1) x (in+1)
  std::vector<Matrix> G;  // out x out
  Index N = 0;
};

inline KfacFactors kfac_factors(const Network& net, const Dataset& data) {
  const std::size_t layers = net.spec.num_layers();
  KfacFactors k;
  k.N = data.size();
  for (std::size_t l = 0; l < layers; ++l) {
    k.A.push_back(Matrix::Zero(net.spec.fan_in(l) + 1, net.spec.fan_in(l) + 1));
    k.G.push_back(Matrix::Zero(net.spec.fan_out(l), net.spec.fan_out(l)));
  }
  Vector abar;
  for (Index i = 0; i < data.size(); ++i) {
    const Vector x = data.X.row(i).transpose();
    const SampleBackprop bp = sample_backprop(net, x);
    const Matrix b = output_hessian_sqrt(bp.output, data.task);
    for (std::size_t l = 0; l < layers; ++l) {
      const Index in = net.spec.fan_in(l);
      abar.resize(in + 1);
      abar.head(in) = bp.inputs[l];
      abar(in) = 1.0;
      k.A[l].selfadjointView<Eigen::Lower>().rankUpdate(abar);
      const Matrix db = bp.deltas[l] * b;
      k.G[l].selfadjointView<Eigen::Lower>().rankUpdate(db);
    }
  }
  for (std::size_t l = 0; l < layers; ++l) {
    k.A[l] = Matrix(k.A[l].selfadjointView<Eigen::Lower>());
    k.G[l] = Matrix(k.G[l].selfadjointView<Eigen::Lower>());
  }
  return k;
}

/// Position of flat layer-local parameter `k` in row-major vec(W_bar).
inline Index kfac_local_to_augmented(Index k, Index fan_in, Index fan_out) {
  if (k < fan_in * fan_out) {
    const Index r = k / fan_in;
    const Index j = k % fan_in;
    return r * (fan_in + 1) + j;
  }
  const Index r = k - fan_in * fan_out;
  return r * (fan_in + 1) + fan_in;
}

/// Dense KFAC curvature block of layer `l` in the flat parameter order.
inline Matrix kfac_block_dense(const KfacFactors& k, const NetworkSpec& spec,
                               std::size_t l) {
  const Index in = spec.fan_in(l);
  const Index out = spec.fan_out(l);
  const Index size = (in + 1) * out;
  Matrix block(size, size);
  const double inv_n = 1.0 / static_cast<double>(k.N);
  for (Index a = 0; a < size; ++a) {
    const Index ia = kfac_local_to_augmented(a, in, out);
    for (Index b = 0; b < size; ++b) {
      const Index ib = kfac_local_to_augmented(b, in, out);
      block(a, b) = k.G[l](ia / (in + 1), ib / (in + 1)) *
                    k.A[l](ia % (in + 1), ib % (in + 1)) * inv_n;
    }
  }
  return block;
}

// ---------------------------------------------------------------------------
// Finite-difference Hessians (validation only)

/// Central second differences of a scalar function.
template <typename F>
Matrix fd_hessian(F&& fn, const Vector& x, double h) {
  const Index n = x.size();
  Matrix hess(n, n);
  Vector xp = x;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      auto eval = [&](double si, double sj) {
        xp = x;
        xp(i) += si * h;
        xp(j) += sj * h;
        return fn(static_cast<const Vector&>(xp));
      };
      const double v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) /
                       (4.0 * h * h);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return hess;
}

/// Central differences of a gradient function, symmetrized.
template <typename G>
Matrix fd_hessian_from_gradient(G&& grad, const Vector& x, double h) {
  const Index n = x.size();
  Matrix hess(n, n);
  Vector xp = x;
  for (Index j = 0; j < n; ++j) {
    xp = x;
    xp(j) += h;
    const Vector gp = grad(static_cast<const Vector&>(xp));
    xp(j) = x(j) - h;
    const Vector gm = grad(static_cast<const Vector&>(xp));
    hess.col(j) = (gp - gm) / (2.0 * h);
  }
  return symmetrize(hess);
}

/// Finite-difference Hessian of sum_i -ln p(y_i|x_i,theta) (+ lambda/2 |theta|^2).
inline Matrix loss_hessian_fd(const Network& net, const Dataset& data,
                              double lambda = 0.0, double h = 1e-4,
                              Index max_params = 500) {
  if (net.num_params() > max_params) {
    throw CapacityError("loss_hessian_fd: p = " + std::to_string(net.num_params()) +
                        " exceeds validation guard " + std::to_string(max_params));
  }
  Network probe = net;
  auto grad = [&](const Vector& theta) {
    probe.theta = theta;
    return Vector(nll_gradient(probe, data) + lambda * theta);
  };
  return fd_hessian_from_gradient(grad, net.theta, h);
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_curvature_factor(const std::string& path, const CurvatureFactor& f) {
  save_matrix_bin(path, "curvature-factor C=" + std::to_string(f.C), f.V);
}

inline CurvatureFactor load_curvature_factor(const std::string& path) {
  TaggedMatrix tm = load_matrix_bin(path);
  const std::string prefix = "curvature-factor C=";
  if (tm.tag.rfind(prefix, 0) != 0) {
    throw ParseError(path + ": not a curvature factor (tag '" + tm.tag + "')");
  }
  CurvatureFactor f;
  f.C = std::stol(tm.tag.substr(prefix.size()));
  if (f.C <= 0 || tm.matrix.cols() % f.C != 0) {
    throw ParseError(path + ": inconsistent output count");
  }
  f.N = tm.matrix.cols() / f.C;
  f.V = std::move(tm.matrix);
  return f;
}

}  // namespace sublap
