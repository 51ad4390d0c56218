#pragma once

// Datasets: CSV ingestion, synthetic generators, standardization and the
// train / test / construction-subset / evaluation-subset split.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sublap/error.hpp"
#include "sublap/linalg.hpp"

namespace sublap {

struct Task {
  enum class Kind { Regression, Classification };
  Kind kind = Kind::Regression;
  double sigma = 1.0;  // observation noise std, regression only
  Index classes = 0;   // classification only

  static Task regression(double sigma) {
    return Task{Kind::Regression, sigma, 0};
  }
  static Task classification(Index classes) {
    return Task{Kind::Classification, 1.0, classes};
  }
  bool is_regression() const { return kind == Kind::Regression; }
  bool is_classification() const { return kind == Kind::Classification; }
};

/// Inputs X (n x d). Regression targets live in Y (n x C); classification
/// targets are class indices in `labels`.
struct Dataset {
  Matrix X;
  Matrix Y;
  std::vector<Index> labels;
  Task task;

  Index size() const { return X.rows(); }
  Index input_dim() const { return X.cols(); }
  Index output_dim() const {
    return task.is_regression() ? Y.cols() : task.classes;
  }

  void validate() const {
    if (!X.allFinite()) throw ArgumentError("Dataset: non-finite inputs");
    if (task.is_regression()) {
      if (Y.rows() != X.rows()) throw DimensionError("Dataset: row mismatch");
      if (!Y.allFinite()) throw ArgumentError("Dataset: non-finite targets");
    } else {
      if (static_cast<Index>(labels.size()) != X.rows()) {
        throw DimensionError("Dataset: label count mismatch");
      }
      for (Index c : labels) {
        if (c < 0 || c >= task.classes) {
          throw ArgumentError("Dataset: class index out of range");
        }
      }
    }
  }

  Dataset subset(const std::vector<Index>& idx) const {
    Dataset out;
    out.task = task;
    out.X.resize(static_cast<Index>(idx.size()), X.cols());
    if (task.is_regression()) out.Y.resize(static_cast<Index>(idx.size()), Y.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Index i = idx[k];
      out.X.row(static_cast<Index>(k)) = X.row(i);
      if (task.is_regression()) {
        out.Y.row(static_cast<Index>(k)) = Y.row(i);
      } else {
        out.labels.push_back(labels[i]);
      }
    }
    return out;
  }

  /// Targets as an n x C matrix; one-hot for classification.
  Matrix target_matrix() const {
    if (task.is_regression()) return Y;
    Matrix t = Matrix::Zero(size(), task.classes);
    for (Index i = 0; i < size(); ++i) t(i, labels[i]) = 1.0;
    return t;
  }
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

}  // namespace detail

struct CsvOptions {
  bool header = false;
};

/// Reads a comma-separated numeric file. `target_columns` are 0-based column
/// indices; all other columns become features. For classification exactly
/// one target column holding integer class indices is expected.
inline Dataset load_csv(const std::string& path,
                        const std::vector<Index>& target_columns,
                        const Task& task, CsvOptions opts = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_csv: cannot open " + path);
  if (target_columns.empty()) throw ArgumentError("load_csv: no target columns");
  if (task.is_classification() && target_columns.size() != 1) {
    throw ArgumentError("load_csv: classification needs one target column");
  }

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (opts.header && line_no == 1) continue;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(width) + " columns, found " +
                       std::to_string(cells.size()));
    }
    std::vector<double> row(width);
    for (std::size_t c = 0; c < width; ++c) {
      const auto v = detail::parse_double(cells[c]);
      if (!v) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": column " +
                         std::to_string(c + 1) + ": invalid numeric cell '" +
                         detail::trim(cells[c]) + "'");
      }
      row[c] = *v;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("load_csv: " + path + " has no data rows");

  std::vector<bool> is_target(width, false);
  for (Index t : target_columns) {
    if (t < 0 || static_cast<std::size_t>(t) >= width) {
      throw ArgumentError("load_csv: target column " + std::to_string(t) +
                          " out of range");
    }
    is_target[static_cast<std::size_t>(t)] = true;
  }
  const Index n = static_cast<Index>(rows.size());
  const Index d = static_cast<Index>(width - target_columns.size());
  Dataset ds;
  ds.task = task;
  ds.X.resize(n, d);
  if (task.is_regression()) {
    ds.Y.resize(n, static_cast<Index>(target_columns.size()));
  }
  for (Index i = 0; i < n; ++i) {
    Index f = 0;
    for (std::size_t c = 0; c < width; ++c) {
      if (!is_target[c]) ds.X(i, f++) = rows[i][c];
    }
    if (task.is_regression()) {
      for (std::size_t t = 0; t < target_columns.size(); ++t) {
        ds.Y(i, static_cast<Index>(t)) =
            rows[i][static_cast<std::size_t>(target_columns[t])];
      }
    } else {
      const double v = rows[i][static_cast<std::size_t>(target_columns[0])];
      if (v != std::floor(v) || v < 0 || v >= static_cast<double>(task.classes)) {
        throw ParseError(path + ": row " + std::to_string(i + 1) +
                         ": class label out of range");
      }
      ds.labels.push_back(static_cast<Index>(v));
    }
  }
  ds.validate();
  return ds;
}

/// Writes features followed by targets, full round-trip precision.
inline void write_csv(const std::string& path, const Dataset& ds,
                      CsvOptions opts = {}) {
  std::ofstream out(path);
  if (!out) throw Error("write_csv: cannot open " + path);
  out.precision(17);
  const Index t_cols = ds.task.is_regression() ? ds.Y.cols() : 1;
  if (opts.header) {
    for (Index j = 0; j < ds.X.cols(); ++j) out << "x" << j << ',';
    for (Index j = 0; j < t_cols; ++j) {
      out << "y" << j << (j + 1 < t_cols ? "," : "\n");
    }
  }
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index j = 0; j < ds.X.cols(); ++j) out << ds.X(i, j) << ',';
    if (ds.task.is_regression()) {
      for (Index j = 0; j < t_cols; ++j) {
        out << ds.Y(i, j) << (j + 1 < t_cols ? "," : "\n");
      }
    } else {
      out << ds.labels[static_cast<std::size_t>(i)] << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

inline double sincos_target(double x) {
  return std::sin(x / 4.0) * std::cos(x / 2.0);
}

/// y = sin(x/4) cos(x/2) + N(0, sigma^2), x uniform on [x_min, x_max].
inline Dataset synth_sincos(Index n, double sigma, double x_min, double x_max,
                            std::uint64_t seed) {
  if (n < 1) throw ArgumentError("synth_sincos: n must be positive");
  if (sigma < 0) throw ArgumentError("synth_sincos: sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(x_min, x_max);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.task = Task::regression(sigma > 0 ? sigma : 1.0);
  ds.X.resize(n, 1);
  ds.Y.resize(n, 1);
  for (Index i = 0; i < n; ++i) {
    const double x = ux(rng);
    ds.X(i, 0) = x;
    ds.Y(i, 0) = sincos_target(x) + sigma * noise(rng);
  }
  return ds;
}

/// Unit-variance Gaussian clusters. Class means have pairwise distance
/// `separation`: vertices of a regular simplex when d >= C, otherwise a
/// regular polygon in the first two coordinates.
inline Dataset synth_blobs(Index n, Index C, Index d, double separation,
                           std::uint64_t seed) {
  if (C < 2) throw ArgumentError("synth_blobs: need at least two classes");
  if (d < 1 || (d < 2 && C > 2)) {
    throw ArgumentError("synth_blobs: input dimension too small");
  }
  Matrix means = Matrix::Zero(C, d);
  if (d >= C) {
    for (Index c = 0; c < C; ++c) {
      means(c, c) = 1.0;
      means.row(c).head(C).array() -= 1.0 / static_cast<double>(C);
    }
    means *= separation / std::sqrt(2.0);
  } else if (C == 2) {
    means(0, 0) = -0.5 * separation;
    means(1, 0) = 0.5 * separation;
  } else {
    const double radius = separation / (2.0 * std::sin(std::numbers::pi / C));
    for (Index c = 0; c < C; ++c) {
      const double phi = 2.0 * std::numbers::pi * c / C;
      means(c, 0) = radius * std::cos(phi);
      means(c, 1) = radius * std::sin(phi);
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<Index> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % C;
  std::shuffle(labels.begin(), labels.end(), rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.task = Task::classification(C);
  ds.X.resize(n, d);
  for (Index i = 0; i < n; ++i) {
    const Index c = labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < d; ++j) ds.X(i, j) = means(c, j) + noise(rng);
  }
  ds.labels = std::move(labels);
  return ds;
}

// ---------------------------------------------------------------------------
// Standardization

/// Per-column mean and population standard deviation (floored at 1e-12).
struct NormalizationStats {
  Vector x_mean, x_std;
  Vector y_mean, y_std;  // empty for classification
};

namespace detail {

inline void column_stats(const Matrix& m, Vector& mean, Vector& std_dev) {
  const double n = static_cast<double>(m.rows());
  mean = m.colwise().mean().transpose();
  std_dev.resize(m.cols());
  for (Index j = 0; j < m.cols(); ++j) {
    const double var = (m.col(j).array() - mean(j)).square().sum() / n;
    std_dev(j) = std::max(std::sqrt(var), 1e-12);
  }
}

inline Matrix standardize(const Matrix& m, const Vector& mean,
                          const Vector& std_dev) {
  Matrix out = m;
  for (Index j = 0; j < m.cols(); ++j) {
    out.col(j) = (m.col(j).array() - mean(j)) / std_dev(j);
  }
  return out;
}

}  // namespace detail

inline Dataset apply_normalization(const Dataset& ds,
                                   const NormalizationStats& stats) {
  Dataset out = ds;
  out.X = detail::standardize(ds.X, stats.x_mean, stats.x_std);
  if (ds.task.is_regression() && stats.y_mean.size() == ds.Y.cols()) {
    out.Y = detail::standardize(ds.Y, stats.y_mean, stats.y_std);
  }
  return out;
}

/// Standardizes features, and regression targets, to zero mean / unit std.
/// The returned statistics are meant to be reused on held-out data.
inline std::pair<Dataset, NormalizationStats> normalize(const Dataset& ds) {
  if (ds.size() < 2) throw ArgumentError("normalize: need at least two rows");
  NormalizationStats stats;
  detail::column_stats(ds.X, stats.x_mean, stats.x_std);
  if (ds.task.is_regression()) {
    detail::column_stats(ds.Y, stats.y_mean, stats.y_std);
  }
  return {apply_normalization(ds, stats), stats};
}

// ---------------------------------------------------------------------------
// Splits

struct SplitConfig {
  double train_fraction = 0.8;
  Index construction_subset_size = 0;  // 0: default n'
  Index eval_subset_size = 0;          // 0: default min(n', |test|)
  std::uint64_t seed = 0;
};

/// Default construction subset size: min(1000, |train|) for regression and
/// the largest n' with n'*C <= 1000 for classification.
inline Index default_construction_size(const Task& task, Index train_size) {
  const Index cap = task.is_regression() ? 1000 : 1000 / task.classes;
  return std::min(cap, train_size);
}

struct Split {
  Dataset train;
  Dataset test;
  Dataset construction;  // X' (subset of train)
  Dataset eval;          // X (subset of test)
  std::vector<Index> train_index;         // into the input dataset
  std::vector<Index> test_index;          // into the input dataset
  std::vector<Index> construction_index;  // into train
  std::vector<Index> eval_index;          // into test
};

inline Split split_and_subset(const Dataset& ds, const SplitConfig& cfg) {
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw ArgumentError("split: train_fraction must lie in (0,1)");
  }
  const Index n = ds.size();
  const Index n_train =
      static_cast<Index>(std::llround(cfg.train_fraction * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n) {
    throw ArgumentError("split: train/test split leaves an empty side");
  }
  const Index n_test = n - n_train;
  const Index n_cons = cfg.construction_subset_size > 0
                           ? cfg.construction_subset_size
                           : default_construction_size(ds.task, n_train);
  if (n_cons > n_train) {
    throw ArgumentError("split: construction subset (" + std::to_string(n_cons) +
                        ") larger than training split (" +
                        std::to_string(n_train) + ")");
  }
  const Index n_eval =
      cfg.eval_subset_size > 0 ? cfg.eval_subset_size : std::min(n_cons, n_test);
  if (n_eval > n_test) {
    throw ArgumentError("split: evaluation subset (" + std::to_string(n_eval) +
                        ") larger than test split (" + std::to_string(n_test) +
                        ")");
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  Split s;
  s.train_index.assign(perm.begin(), perm.begin() + n_train);
  s.test_index.assign(perm.begin() + n_train, perm.end());

  auto draw = [&rng](Index pool, Index k) {
    std::vector<Index> idx(static_cast<std::size_t>(pool));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  };
  s.construction_index = draw(n_train, n_cons);
  s.eval_index = draw(n_test, n_eval);

  s.train = ds.subset(s.train_index);
  s.test = ds.subset(s.test_index);
  s.construction = s.train.subset(s.construction_index);
  s.eval = s.test.subset(s.eval_index);
  return s;
}

/// Standardizes every part of a split with statistics from the training part.
inline NormalizationStats normalize_split(Split& s) {
  auto [train, stats] = normalize(s.train);
  s.train = std::move(train);
  s.test = apply_normalization(s.test, stats);
  s.construction = apply_normalization(s.construction, stats);
  s.eval = apply_normalization(s.eval, stats);
  return stats;
}

}  // namespace sublap
