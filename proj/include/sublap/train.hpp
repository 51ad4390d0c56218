#pragma once

// MAP training under a Gaussian or categorical likelihood with an isotropic
// Gaussian prior, plus SWAG moment collection.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sublap/data.hpp"
#include "sublap/error.hpp"
#include "sublap/io.hpp"
#include "sublap/model.hpp"

namespace sublap {

struct TrainConfig {
  Index epochs = 1000;
  double lr = 1e-2;
  double warmup_frac = 0.1;
  double decay_frac = 0.5;
  Index batch_size = 0;  // 0: full batch
  double prior_precision = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ArgumentError("TrainConfig: epochs must be >= 1");
    if (!(lr >= 0.0)) throw ArgumentError("TrainConfig: lr must be >= 0");
    if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) {
      throw ArgumentError("TrainConfig: warmup_frac must lie in [0,1)");
    }
    if (!(decay_frac >= 0.0 && decay_frac <= 1.0) || warmup_frac > decay_frac) {
      throw ArgumentError("TrainConfig: need warmup_frac <= decay_frac <= 1");
    }
    if (batch_size < 0) throw ArgumentError("TrainConfig: batch_size < 0");
    if (!(prior_precision > 0.0)) {
      throw ArgumentError("TrainConfig: prior precision must be positive");
    }
  }
};

/// Piecewise-linear learning rate: linear warm-up to `base` over the first
/// warmup steps, constant until the decay start, then linear decay reaching
/// zero at `total`.
struct LrSchedule {
  double base = 0.0;
  Index total = 1;
  Index warmup = 0;
  Index decay_start = 1;

  LrSchedule(double base_lr, Index total_steps, double warmup_frac,
             double decay_frac)
      : base(base_lr), total(std::max<Index>(total_steps, 1)) {
    warmup = static_cast<Index>(std::floor(warmup_frac * static_cast<double>(total)));
    decay_start = static_cast<Index>(std::floor(decay_frac * static_cast<double>(total)));
    decay_start = std::clamp(decay_start, warmup, total);
  }

  double at(Index step) const {
    if (step < 0 || step >= total) return 0.0;
    if (step < warmup) {
      return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    if (step < decay_start) return base;
    return base * static_cast<double>(total - step) /
           static_cast<double>(total - decay_start);
  }
};

// ---------------------------------------------------------------------------
// Likelihood terms

inline Vector row_softmax(const Eigen::Ref<const Vector>& z) {
  const double m = z.maxCoeff();
  Vector e = (z.array() - m).exp();
  return e / e.sum();
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    out.row(i) = row_softmax(logits.row(i).transpose()).transpose();
  }
  return out;
}

namespace detail {

inline double log_sum_exp(const Eigen::Ref<const Vector>& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

}  // namespace detail

/// -sum_i ln p(y_i | x_i, theta) given network outputs (n x C).
inline double nll_from_outputs(const Matrix& out, const Dataset& data) {
  double total = 0.0;
  if (data.task.is_regression()) {
    const double s2 = data.task.sigma * data.task.sigma;
    const double C = static_cast<double>(out.cols());
    total = (out - data.Y).squaredNorm() / (2.0 * s2) +
            static_cast<double>(out.rows()) * 0.5 * C *
                std::log(2.0 * std::numbers::pi * s2);
  } else {
    for (Index i = 0; i < out.rows(); ++i) {
      const Vector z = out.row(i).transpose();
      total += detail::log_sum_exp(z) - z(data.labels[static_cast<std::size_t>(i)]);
    }
  }
  return total;
}

/// d(-ln p)/d f per sample (n x C).
inline Matrix nll_output_gradient(const Matrix& out, const Dataset& data) {
  if (data.task.is_regression()) {
    return (out - data.Y) / (data.task.sigma * data.task.sigma);
  }
  Matrix g = softmax_rows(out);
  for (Index i = 0; i < out.rows(); ++i) {
    g(i, data.labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  return g;
}

inline double nll_sum(const Network& net, const Dataset& data) {
  return nll_from_outputs(forward_matrix(net, data.X), data);
}

/// Unnormalized negative log-posterior: -sum ln p(y|x,theta) + lambda/2 |theta|^2.
inline double loss(const Network& net, const Dataset& batch, double lambda) {
  if (batch.size() == 0) throw ArgumentError("loss: empty batch");
  return nll_sum(net, batch) + 0.5 * lambda * net.theta.squaredNorm();
}

/// Gradient of the negative log-likelihood sum (no prior term).
inline Vector nll_gradient(const Network& net, const Dataset& data) {
  const Matrix out = forward_matrix(net, data.X);
  return vjp(net, data.X, nll_output_gradient(out, data));
}

// ---------------------------------------------------------------------------
// Optimization

struct LossTraceRow {
  Index epoch;
  double train_loss;
  std::optional<double> test_loss;
};

struct TrainResult {
  Network net;
  std::vector<LossTraceRow> trace;
};

namespace detail {

// One SGD step on the per-sample-averaged objective
//   (1/N) [ sum_i -ln p(y_i|x_i,theta) + lambda/2 |theta|^2 ].
// The data term uses the mini-batch mean gradient; the prior term is applied
// as its exact proximal map, so the fixed point is the MAP for every lambda.
inline void sgd_step(Network& net, const Dataset& batch, double lr,
                     double lambda, Index n_total) {
  const Vector g = nll_gradient(net, batch) / static_cast<double>(batch.size());
  net.theta = (net.theta - lr * g) /
              (1.0 + lr * lambda / static_cast<double>(n_total));
}

inline std::vector<std::vector<Index>> make_batches(Index n, Index batch_size,
                                                    std::mt19937_64& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  if (batch_size <= 0 || batch_size >= n) return {perm};
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < n; start += batch_size) {
    const Index end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

inline Index batches_per_epoch(Index n, Index batch_size) {
  if (batch_size <= 0 || batch_size >= n) return 1;
  return (n + batch_size - 1) / batch_size;
}

}  // namespace detail

/// Gradient descent on the negative log-posterior from `init`. Records the
/// full-data loss after every epoch (and the test loss when given).
inline TrainResult train_map(const Network& init, const Dataset& train,
                             const TrainConfig& cfg,
                             const Dataset* test = nullptr) {
  cfg.validate();
  if (train.size() == 0) throw ArgumentError("train_map: empty training set");
  TrainResult res{init, {}};
  const Index n = train.size();
  const Index per_epoch = detail::batches_per_epoch(n, cfg.batch_size);
  const LrSchedule schedule(cfg.lr, cfg.epochs * per_epoch, cfg.warmup_frac,
                            cfg.decay_frac);
  std::mt19937_64 rng(cfg.seed);
  const bool full_batch = per_epoch == 1;
  Index step = 0;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (full_batch) {
      detail::sgd_step(res.net, train, schedule.at(step++), cfg.prior_precision, n);
    } else {
      for (const auto& idx : detail::make_batches(n, cfg.batch_size, rng)) {
        detail::sgd_step(res.net, train.subset(idx), schedule.at(step++),
                         cfg.prior_precision, n);
      }
    }
    const double l = loss(res.net, train, cfg.prior_precision);
    if (!std::isfinite(l) || !res.net.theta.allFinite()) {
      throw TrainingError("train_map: loss diverged at epoch " +
                          std::to_string(epoch + 1));
    }
    LossTraceRow row{epoch + 1, l, std::nullopt};
    if (test != nullptr && test->size() > 0) {
      row.test_loss = loss(res.net, *test, cfg.prior_precision);
    }
    res.trace.push_back(row);
  }
  return res;
}

/// sigma_hat = sqrt(mean squared training residual, averaged over outputs).
inline double estimate_sigma(const Network& net, const Dataset& train) {
  if (!train.task.is_regression()) {
    throw UnsupportedError("estimate_sigma: only defined for regression");
  }
  const Matrix res = forward_matrix(net, train.X) - train.Y;
  return std::sqrt(res.squaredNorm() / static_cast<double>(res.size()));
}

inline void write_loss_trace(const std::string& path,
                             const std::vector<LossTraceRow>& trace) {
  write_atomically(path, [&](std::ofstream& out) {
    out.precision(17);
    out << "epoch,train_loss,test_loss\n";
    for (const auto& r : trace) {
      out << r.epoch << ',' << r.train_loss << ',';
      if (r.test_loss) out << *r.test_loss;
      out << '\n';
    }
  });
}

// ---------------------------------------------------------------------------
// SWAG

struct SwagConfig {
  Index steps = 20;
  Index snapshot_every = 1;
  double constant_lr = 1e-2;
  Index batch_size = 32;
  double prior_precision = 1.0;
  std::uint64_t seed = 0;
};

/// First and second moments of the snapshots.
struct SwagStats {
  Vector mean;
  Vector second_moment;
  Index snapshots = 0;

  Vector variance() const {
    return (second_moment - mean.cwiseProduct(mean)).cwiseMax(0.0);
  }
};

/// SWAG defaults: constant learning rate equal to the training rate, one
/// snapshot per epoch, 20 epochs, mini-batches of the training batch size
/// (32 when training is full batch).
inline SwagConfig default_swag_config(const TrainConfig& train_cfg, Index n) {
  SwagConfig cfg;
  cfg.batch_size = train_cfg.batch_size > 0 ? train_cfg.batch_size : 32;
  const Index per_epoch = detail::batches_per_epoch(n, cfg.batch_size);
  cfg.steps = 20 * per_epoch;
  cfg.snapshot_every = per_epoch;
  cfg.constant_lr = train_cfg.lr;
  cfg.prior_precision = train_cfg.prior_precision;
  cfg.seed = train_cfg.seed + 0x5a5a;
  return cfg;
}

/// Constant-learning-rate SGD started at the MAP, operating on a copy.
inline SwagStats run_swag(const Network& map_net, const Dataset& train,
                          const SwagConfig& cfg) {
  if (cfg.snapshot_every < 1) throw ArgumentError("run_swag: snapshot_every < 1");
  const Index snapshots = cfg.steps / cfg.snapshot_every;
  if (snapshots < 2) {
    throw ArgumentError("run_swag: configuration yields " +
                        std::to_string(snapshots) + " snapshots, need >= 2");
  }
  Network net = map_net;
  const Index n = train.size();
  std::mt19937_64 rng(cfg.seed);
  SwagStats st;
  st.mean = Vector::Zero(net.num_params());
  st.second_moment = Vector::Zero(net.num_params());
  std::vector<std::vector<Index>> batches;
  std::size_t next = 0;
  for (Index step = 1; step <= cfg.steps; ++step) {
    if (next >= batches.size()) {
      batches = detail::make_batches(n, cfg.batch_size, rng);
      next = 0;
    }
    const auto& idx = batches[next++];
    const Dataset batch =
        static_cast<Index>(idx.size()) == n ? train : train.subset(idx);
    detail::sgd_step(net, batch, cfg.constant_lr, cfg.prior_precision, n);
    if (!net.theta.allFinite()) {
      throw TrainingError("run_swag: iterates diverged at step " +
                          std::to_string(step));
    }
    if (step % cfg.snapshot_every == 0) {
      ++st.snapshots;
      const double w = 1.0 / static_cast<double>(st.snapshots);
      st.mean += w * (net.theta - st.mean);
      st.second_moment += w * (net.theta.cwiseProduct(net.theta) - st.second_moment);
    }
  }
  return st;
}

}  // namespace sublap
