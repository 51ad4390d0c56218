#pragma once

#include <cstdint>
#include <random>

#include "sublap/sublap.hpp"

namespace testutil {

using sublap::Index;
using sublap::Matrix;
using sublap::Vector;

inline Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

inline Matrix random_symmetric(Index dim, std::uint64_t seed) {
  const Matrix a = random_matrix(dim, dim, seed);
  return 0.5 * (a + a.transpose());
}

inline Matrix random_spd(Index dim, std::uint64_t seed, double shift = 1.0) {
  const Matrix a = random_matrix(dim, dim, seed);
  Matrix s = a * a.transpose();
  s.diagonal().array() += shift;
  return s;
}

inline sublap::Network random_net(std::vector<Index> widths, std::uint64_t seed,
                                  double scale = 1.0) {
  sublap::NetworkSpec spec;
  spec.widths = std::move(widths);
  sublap::Network net(spec, Vector::Zero(sublap::param_count(spec)));
  net.theta = scale * random_matrix(net.num_params(), 1, seed);
  return net;
}

inline sublap::Dataset regression_data(Index n, Index d, Index C, std::uint64_t seed,
                                       double sigma = 0.5) {
  sublap::Dataset ds;
  ds.task = sublap::Task::regression(sigma);
  ds.X = random_matrix(n, d, seed);
  ds.Y = random_matrix(n, C, seed + 1);
  return ds;
}

inline sublap::Dataset classification_data(Index n, Index d, Index C,
                                           std::uint64_t seed) {
  sublap::Dataset ds;
  ds.task = sublap::Task::classification(C);
  ds.X = random_matrix(n, d, seed);
  std::mt19937_64 rng(seed + 7);
  std::uniform_int_distribution<Index> u(0, C - 1);
  for (Index i = 0; i < n; ++i) ds.labels.push_back(u(rng));
  return ds;
}

/// Central finite-difference Jacobian of forward() w.r.t. theta.
inline Matrix fd_jacobian(const sublap::Network& net, const Matrix& x, double h) {
  sublap::Network probe = net;
  const Index p = net.num_params();
  Matrix j(x.rows() * net.spec.output_dim(), p);
  for (Index k = 0; k < p; ++k) {
    probe.theta = net.theta;
    probe.theta(k) += h;
    const Vector fp = sublap::forward(probe, x);
    probe.theta(k) = net.theta(k) - h;
    const Vector fm = sublap::forward(probe, x);
    j.col(k) = (fp - fm) / (2.0 * h);
  }
  return j;
}

/// Dense sum_i J_i^T H_i J_i assembled sample by sample.
inline Matrix dense_ggn(const sublap::Network& net, const sublap::Dataset& data) {
  const Index p = net.num_params();
  Matrix g = Matrix::Zero(p, p);
  for (Index i = 0; i < data.size(); ++i) {
    const Matrix xi = data.X.row(i);
    const Matrix ji = sublap::jacobian(net, xi).matrix;
    const Vector f = sublap::forward(net, xi);
    g += ji.transpose() * sublap::output_hessian(f, data.task) * ji;
  }
  return g;
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace testutil
