#pragma once

// Fully connected ReLU networks with exact per-sample parameter Jacobians.
//
// Parameter layout (subset projectors index into it): layers in order, each
// layer stores its weight matrix W (out x in) row-major followed by its bias
// b (out). The final layer is linear; softmax is applied downstream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sublap/error.hpp"
#include "sublap/io.hpp"
#include "sublap/linalg.hpp"

namespace sublap {

enum class Activation { ReLU };

struct NetworkSpec {
  std::vector<Index> widths;  // input, hidden..., output
  Activation activation = Activation::ReLU;
  bool bias = true;

  Index input_dim() const { return widths.front(); }
  Index output_dim() const { return widths.back(); }
  std::size_t num_layers() const { return widths.size() - 1; }
  Index fan_in(std::size_t layer) const { return widths[layer]; }
  Index fan_out(std::size_t layer) const { return widths[layer + 1]; }

  void validate() const {
    if (widths.size() < 2) {
      throw ArgumentError("NetworkSpec: need at least input and output width");
    }
    for (Index w : widths) {
      if (w <= 0) throw ArgumentError("NetworkSpec: widths must be positive");
    }
    if (!bias) throw ArgumentError("NetworkSpec: bias-free layers unsupported");
  }
};

inline Index param_count(const NetworkSpec& spec) {
  Index p = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    p += (spec.fan_in(l) + 1) * spec.fan_out(l);
  }
  return p;
}

/// Offset of layer `l`'s weights inside the flat parameter vector; its bias
/// starts at `layer_offset(spec, l) + fan_in * fan_out`.
inline Index layer_offset(const NetworkSpec& spec, std::size_t layer) {
  Index off = 0;
  for (std::size_t l = 0; l < layer; ++l) {
    off += (spec.fan_in(l) + 1) * spec.fan_out(l);
  }
  return off;
}

struct Network {
  NetworkSpec spec;
  Vector theta;

  Network() = default;
  Network(NetworkSpec s, Vector t) : spec(std::move(s)), theta(std::move(t)) {
    spec.validate();
    if (theta.size() != param_count(spec)) {
      throw DimensionError("Network: theta has " +
                           std::to_string(theta.size()) + " entries, spec needs " +
                           std::to_string(param_count(spec)));
    }
    if (!theta.allFinite()) throw NumericError("Network: non-finite parameters");
  }

  using RowMajorMap =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>;

  RowMajorMap weight(std::size_t l) const {
    return RowMajorMap(theta.data() + layer_offset(spec, l), spec.fan_out(l),
                       spec.fan_in(l));
  }
  Eigen::Map<const Vector> bias(std::size_t l) const {
    return Eigen::Map<const Vector>(
        theta.data() + layer_offset(spec, l) + spec.fan_in(l) * spec.fan_out(l),
        spec.fan_out(l));
  }
  Index num_params() const { return theta.size(); }
};

/// Concatenated per-sample parameter Jacobian, rows i*C..(i+1)*C-1 belong to
/// sample i.
struct Jacobian {
  Matrix matrix;
  Index n = 0;
  Index C = 0;

  Index rows() const { return matrix.rows(); }
  Index cols() const { return matrix.cols(); }
  auto sample_block(Index i) const { return matrix.middleRows(i * C, C); }
};

/// PyTorch-style default initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Network init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Vector theta(param_count(spec));
  Index k = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in(l)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const Index count = (spec.fan_in(l) + 1) * spec.fan_out(l);
    for (Index j = 0; j < count; ++j) theta(k++) = dist(rng);
  }
  return Network(spec, std::move(theta));
}

namespace detail {

inline void check_inputs(const Network& net, const Matrix& x) {
  if (x.cols() != net.spec.input_dim()) {
    throw ArgumentError("network expects inputs of width " +
                        std::to_string(net.spec.input_dim()) + ", got " +
                        std::to_string(x.cols()));
  }
  if (!x.allFinite()) throw ArgumentError("network inputs are not finite");
}

}  // namespace detail

/// Outputs as an n x C matrix.
inline Matrix forward_matrix(const Network& net, const Matrix& x) {
  detail::check_inputs(net, x);
  Matrix a = x;
  const std::size_t layers = net.spec.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = a * net.weight(l).transpose();
    z.rowwise() += net.bias(l).transpose();
    if (l + 1 < layers) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

/// Outputs concatenated per sample: (f(x_1), ..., f(x_n)), length n*C.
inline Vector forward(const Network& net, const Matrix& x) {
  const Matrix out = forward_matrix(net, x);
  Vector flat(out.size());
  for (Index i = 0; i < out.rows(); ++i) {
    flat.segment(i * out.cols(), out.cols()) = out.row(i).transpose();
  }
  return flat;
}

/// Per-sample reverse pass for all C outputs at once.
/// `inputs[l]` is the input to layer l, `deltas[l]` is d f / d z_l with shape
/// fan_out(l) x C, i.e. the Jacobian of the network output w.r.t. the
/// pre-activation of layer l (transposed).
struct SampleBackprop {
  std::vector<Vector> inputs;
  std::vector<Matrix> deltas;
  Vector output;
};

inline SampleBackprop sample_backprop(const Network& net,
                                      const Eigen::Ref<const Vector>& x) {
  const std::size_t layers = net.spec.num_layers();
  SampleBackprop bp;
  bp.inputs.resize(layers);
  bp.deltas.resize(layers);
  std::vector<Vector> pre(layers);
  Vector a = x;
  for (std::size_t l = 0; l < layers; ++l) {
    bp.inputs[l] = a;
    pre[l] = net.weight(l) * a + net.bias(l);
    a = (l + 1 < layers) ? Vector(pre[l].cwiseMax(0.0)) : pre[l];
  }
  bp.output = a;

  const Index C = net.spec.output_dim();
  Matrix delta = Matrix::Identity(C, C);
  for (std::size_t l = layers; l-- > 0;) {
    bp.deltas[l] = delta;
    if (l == 0) break;
    delta = net.weight(l).transpose() * delta;
    // ReLU'(0) = 0.
    for (Index r = 0; r < delta.rows(); ++r) {
      if (!(pre[l - 1](r) > 0.0)) delta.row(r).setZero();
    }
  }
  return bp;
}

/// Writes the C x p Jacobian of one sample into `out`.
inline void sample_jacobian_into(const Network& net, const SampleBackprop& bp,
                                 Eigen::Ref<Matrix> out) {
  const Index C = net.spec.output_dim();
  for (std::size_t l = 0; l < net.spec.num_layers(); ++l) {
    const Index in = net.spec.fan_in(l);
    const Index fo = net.spec.fan_out(l);
    const Index off = layer_offset(net.spec, l);
    const Matrix& d = bp.deltas[l];
    const Vector& a = bp.inputs[l];
    for (Index r = 0; r < fo; ++r) {
      for (Index c = 0; c < C; ++c) {
        const double dr = d(r, c);
        out.row(c).segment(off + r * in, in) = dr * a.transpose();
        out(c, off + in * fo + r) = dr;
      }
    }
  }
}

inline Matrix sample_jacobian(const Network& net,
                              const Eigen::Ref<const Vector>& x) {
  Matrix j(net.spec.output_dim(), net.num_params());
  sample_jacobian_into(net, sample_backprop(net, x), j);
  return j;
}

/// Exact Jacobian of the concatenated outputs w.r.t. the parameters.
inline Jacobian jacobian(const Network& net, const Matrix& x) {
  detail::check_inputs(net, x);
  const Index C = net.spec.output_dim();
  Jacobian jac;
  jac.n = x.rows();
  jac.C = C;
  jac.matrix.resize(x.rows() * C, net.num_params());
  for (Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    sample_jacobian_into(net, sample_backprop(net, xi),
                         jac.matrix.middleRows(i * C, C));
  }
  return jac;
}

/// Sum over samples of J_i^T g_i for output-space vectors g (n x C), i.e. the
/// gradient of sum_i <g_i, f(x_i)> without materializing the Jacobian.
inline Vector vjp(const Network& net, const Matrix& x, const Matrix& g) {
  detail::check_inputs(net, x);
  const std::size_t layers = net.spec.num_layers();
  if (g.rows() != x.rows() || g.cols() != net.spec.output_dim()) {
    throw DimensionError("vjp: output gradient has wrong shape");
  }
  std::vector<Matrix> acts(layers);
  std::vector<Matrix> pre(layers);
  Matrix a = x;
  for (std::size_t l = 0; l < layers; ++l) {
    acts[l] = a;
    pre[l] = a * net.weight(l).transpose();
    pre[l].rowwise() += net.bias(l).transpose();
    a = (l + 1 < layers) ? Matrix(pre[l].cwiseMax(0.0)) : pre[l];
  }
  Vector grad(net.num_params());
  Matrix dz = g;
  for (std::size_t l = layers; l-- > 0;) {
    const Index in = net.spec.fan_in(l);
    const Index fo = net.spec.fan_out(l);
    const Index off = layer_offset(net.spec, l);
    const Matrix gw = dz.transpose() * acts[l];  // fo x in
    for (Index r = 0; r < fo; ++r) {
      grad.segment(off + r * in, in) = gw.row(r).transpose();
    }
    grad.segment(off + in * fo, fo) = dz.colwise().sum().transpose();
    if (l == 0) break;
    dz = dz * net.weight(l);
    dz.array() *= (pre[l - 1].array() > 0.0).cast<double>();
  }
  return grad;
}

/// Number of singular values above `tol * largest`.
inline Index jacobian_rank(const Matrix& j, double tol) {
  if (!j.allFinite()) throw NumericError("jacobian_rank: non-finite entries");
  if (j.size() == 0) return 0;
  Eigen::BDCSVD<Matrix> svd(j);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  Index r = 0;
  while (r < sv.size() && sv(r) > tol * sv(0)) ++r;
  return r;
}

inline Index jacobian_rank(const Jacobian& j, double tol) {
  return jacobian_rank(j.matrix, tol);
}

// Network file: JSON object
//   {"format": "sublap-mlp", "version": 1, "widths": [...],
//    "activation": "relu", "bias": true, "theta": [...], "meta": {...}}
// Doubles are written with round-trip precision.

inline nlohmann::json network_to_json(const Network& net,
                                      const nlohmann::json& meta = {}) {
  nlohmann::json j;
  j["format"] = "sublap-mlp";
  j["version"] = 1;
  j["widths"] = net.spec.widths;
  j["activation"] = "relu";
  j["bias"] = true;
  j["theta"] = std::vector<double>(net.theta.data(),
                                   net.theta.data() + net.theta.size());
  if (!meta.is_null()) j["meta"] = meta;
  return j;
}

inline Network network_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "sublap-mlp") {
    throw ParseError("network file: missing or unknown format tag");
  }
  if (j.value("activation", std::string("relu")) != "relu") {
    throw ParseError("network file: unsupported activation");
  }
  NetworkSpec spec;
  spec.widths = j.at("widths").get<std::vector<Index>>();
  const auto theta = j.at("theta").get<std::vector<double>>();
  return Network(spec, Eigen::Map<const Vector>(theta.data(),
                                                static_cast<Index>(theta.size())));
}

inline void save_network(const std::string& path, const Network& net,
                         const nlohmann::json& meta = {}) {
  const std::string text = network_to_json(net, meta).dump(1);
  write_atomically(path, [&](std::ofstream& out) { out << text << '\n'; });
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline Network load_network(const std::string& path) {
  try {
    return network_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace sublap
