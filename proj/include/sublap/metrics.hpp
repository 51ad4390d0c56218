#pragma once

// Evaluation metrics: relative error, trace criterion, NLL, dead-parameter
// analysis and agreement between the trace and relative-error rankings.
// Also the metrics CSV schema shared with the plotting scripts:
//
//   dataset,method,s,seed,rel_error,trace,log_trace,nll,nll_diag
//
// Absent values (no reference covariance, zero trace) are empty cells.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "sublap/data.hpp"
#include "sublap/error.hpp"
#include "sublap/io.hpp"
#include "sublap/linalg.hpp"
#include "sublap/model.hpp"
#include "sublap/predictive.hpp"

namespace sublap {

/// ||Sigma_X - Sigma_P||_F / ||Sigma_X||_F.
inline double relative_error(const Matrix& sigma_x, const Matrix& sigma_p) {
  if (sigma_x.rows() != sigma_p.rows() || sigma_x.cols() != sigma_p.cols()) {
    throw DimensionError("relative_error: covariance shapes differ");
  }
  const double denom = sigma_x.norm();
  if (!(denom > 0.0)) {
    throw NumericError("relative_error: reference covariance has zero norm");
  }
  return (sigma_x - sigma_p).norm() / denom;
}

inline double relative_error(const EpistemicCov& sigma_x, const EpistemicCov& sigma_p) {
  return relative_error(sigma_x.sigma, sigma_p.sigma);
}

inline double trace_criterion(const EpistemicCov& sigma_p) { return sigma_p.trace(); }

/// Natural log of the trace; absent for a zero (or roundoff-negative) trace.
inline std::optional<double> log_trace(double trace) {
  if (!(trace > 0.0)) return std::nullopt;
  return std::log(trace);
}

/// -(1/n) ln N(Y | mean, total_cov) with the joint nC-dimensional Gaussian.
inline double nll(const GaussianPred& pred, const Matrix& targets) {
  if (targets.rows() != pred.n || targets.cols() != pred.C) {
    throw DimensionError("nll: targets do not match the predictive");
  }
  const Index dim = pred.mean.size();
  Vector r(dim);
  for (Index i = 0; i < pred.n; ++i) {
    for (Index c = 0; c < pred.C; ++c) r(i * pred.C + c) = targets(i, c) - pred.mean(i * pred.C + c);
  }
  Eigen::LLT<Matrix> llt(pred.total_cov);
  if (llt.info() != Eigen::Success) {
    throw NumericError("nll: predictive covariance is singular");
  }
  const Matrix& l = llt.matrixLLT();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const double quad = llt.matrixL().solve(r).squaredNorm();
  const double total = 0.5 * (quad + logdet +
                              static_cast<double>(dim) * std::log(2.0 * std::numbers::pi));
  return total / static_cast<double>(pred.n);
}

/// Per-point NLL using only the marginal variances, averaged over samples.
inline double nll_diag(const GaussianPred& pred, const Matrix& targets) {
  if (targets.rows() != pred.n || targets.cols() != pred.C) {
    throw DimensionError("nll_diag: targets do not match the predictive");
  }
  double total = 0.0;
  for (Index i = 0; i < pred.n; ++i) {
    for (Index c = 0; c < pred.C; ++c) {
      const Index k = i * pred.C + c;
      const double v = pred.total_cov(k, k);
      if (!(v > 0.0)) throw NumericError("nll_diag: non-positive variance");
      const double r = targets(i, c) - pred.mean(k);
      total += 0.5 * (r * r / v + std::log(2.0 * std::numbers::pi * v));
    }
  }
  return total / static_cast<double>(pred.n);
}

/// -(1/n) sum_i ln probs[i, y_i].
inline double nll(const CategoricalPred& pred, const std::vector<Index>& labels) {
  if (static_cast<Index>(labels.size()) != pred.probs.rows()) {
    throw DimensionError("nll: label count does not match the predictive");
  }
  double total = 0.0;
  for (Index i = 0; i < pred.probs.rows(); ++i) {
    const Index y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= pred.probs.cols()) throw ArgumentError("nll: label out of range");
    total -= std::log(pred.probs(i, y));
  }
  return total / static_cast<double>(pred.probs.rows());
}

// ---------------------------------------------------------------------------
// Dead parameters

struct DeadParameterReport {
  double fraction = 0.0;
  double threshold = 0.0;     // absolute cut-off used
  Vector sensitivity;         // mean |J_.j| per parameter
  std::vector<Index> order;   // parameters by decreasing sensitivity
  std::vector<bool> dead;
};

/// A parameter is dead when its sensitivity is exactly zero or below
/// threshold_rel times the largest sensitivity.
inline DeadParameterReport dead_parameter_fraction(const Jacobian& jac,
                                                   double threshold_rel = 1e-6) {
  if (!jac.matrix.allFinite()) {
    throw NumericError("dead_parameter_fraction: non-finite Jacobian");
  }
  if (jac.rows() == 0 || jac.cols() == 0) {
    throw DimensionError("dead_parameter_fraction: empty Jacobian");
  }
  DeadParameterReport rep;
  rep.sensitivity = jac.matrix.cwiseAbs().colwise().mean().transpose();
  rep.threshold = threshold_rel * rep.sensitivity.maxCoeff();
  rep.order = top_indices(rep.sensitivity, rep.sensitivity.size());
  rep.dead.resize(static_cast<std::size_t>(rep.sensitivity.size()));
  Index count = 0;
  for (Index j = 0; j < rep.sensitivity.size(); ++j) {
    const double s = rep.sensitivity(j);
    const bool d = s == 0.0 || s < rep.threshold;
    rep.dead[static_cast<std::size_t>(j)] = d;
    count += d ? 1 : 0;
  }
  rep.fraction = static_cast<double>(count) / static_cast<double>(rep.sensitivity.size());
  return rep;
}

/// Heatmap data: one row per sample, one column per parameter in order of
/// decreasing mean sensitivity; cell = mean over outputs of |J_{i,c,j}|.
inline void write_sensitivity_csv(const std::string& path, const Jacobian& jac,
                                  const DeadParameterReport& rep) {
  write_atomically(path, [&](std::ofstream& out) {
    out.precision(17);
    out << "sample";
    for (Index j : rep.order) out << ",p" << j;
    out << '\n';
    for (Index i = 0; i < jac.n; ++i) {
      const Vector row = jac.sample_block(i).cwiseAbs().colwise().mean().transpose();
      out << i;
      for (Index j : rep.order) out << ',' << row(j);
      out << '\n';
    }
  });
}

inline void write_sensitivity_summary_csv(const std::string& path,
                                          const DeadParameterReport& rep) {
  write_atomically(path, [&](std::ofstream& out) {
    out.precision(17);
    out << "rank,param,sensitivity,dead\n";
    for (std::size_t r = 0; r < rep.order.size(); ++r) {
      const Index j = rep.order[r];
      out << r << ',' << j << ',' << rep.sensitivity(j) << ','
          << (rep.dead[static_cast<std::size_t>(j)] ? 1 : 0) << '\n';
    }
  });
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
  std::string dataset;
  std::string method;
  Index s = 0;
  std::int64_t seed = 0;
  std::optional<double> rel_error;
  double trace = 0.0;
  std::optional<double> log_trace;
  double nll = 0.0;
  std::optional<double> nll_diag;
};

struct OrderingAgreement {
  Index agree = 0;
  Index total = 0;

  std::optional<double> score() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(agree) / static_cast<double>(total);
  }
};

namespace detail {

inline bool nearly_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace detail

/// Over every group of reports sharing (dataset, s, seed), counts the method
/// pairs where the higher trace comes with the lower relative error. Pairs
/// tied in either quantity (within 1e-12 relative) are excluded.
inline OrderingAgreement ordering_agreement(const std::vector<MetricsReport>& reports) {
  std::map<std::tuple<std::string, Index, std::int64_t>, std::vector<const MetricsReport*>>
      groups;
  for (const auto& r : reports) {
    if (r.rel_error) groups[{r.dataset, r.s, r.seed}].push_back(&r);
  }
  OrderingAgreement out;
  for (const auto& [key, members] : groups) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const MetricsReport& x = *members[a];
        const MetricsReport& y = *members[b];
        if (x.method == y.method) continue;
        if (detail::nearly_equal(x.trace, y.trace, 1e-12) ||
            detail::nearly_equal(*x.rel_error, *y.rel_error, 1e-12)) {
          continue;
        }
        const bool trace_higher = x.trace > y.trace;
        const bool error_lower = *x.rel_error < *y.rel_error;
        ++out.total;
        if (trace_higher == error_lower) ++out.agree;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline const char* kMetricsHeader =
    "dataset,method,s,seed,rel_error,trace,log_trace,nll,nll_diag";

namespace detail {

inline void put_optional(std::ostream& out, const std::optional<double>& v) {
  if (v) out << *v;
}

inline std::optional<double> parse_optional_cell(const std::string& cell) {
  if (trim(cell).empty()) return std::nullopt;
  auto v = parse_double(trim(cell));
  if (!v) throw ParseError("invalid numeric cell '" + cell + "'");
  return v;
}

inline double parse_required_cell(const std::string& cell) {
  auto v = parse_optional_cell(cell);
  if (!v) throw ParseError("missing required numeric cell");
  return *v;
}

inline std::int64_t parse_int_cell(const std::string& cell) {
  const std::string t = trim(cell);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ParseError("invalid integer cell '" + cell + "'");
  }
  return v;
}

}  // namespace detail

inline void write_metrics_row(std::ostream& out, const MetricsReport& r) {
  out << r.dataset << ',' << r.method << ',' << r.s << ',' << r.seed << ',';
  detail::put_optional(out, r.rel_error);
  out << ',' << r.trace << ',';
  detail::put_optional(out, r.log_trace);
  out << ',' << r.nll << ',';
  detail::put_optional(out, r.nll_diag);
  out << '\n';
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<MetricsReport>& reports) {
  write_atomically(path, [&](std::ofstream& out) {
    out.precision(17);
    out << kMetricsHeader << '\n';
    for (const auto& r : reports) write_metrics_row(out, r);
  });
}

inline MetricsReport parse_metrics_row(const std::string& line) {
  const auto cells = detail::split_csv_line(line);
  if (cells.size() != 8 && cells.size() != 9) {
    throw ParseError("expected 8 or 9 cells, got " + std::to_string(cells.size()));
  }
  MetricsReport r;
  r.dataset = detail::trim(cells[0]);
  r.method = detail::trim(cells[1]);
  if (r.dataset.empty() || r.method.empty()) throw ParseError("empty key cell");
  r.s = static_cast<Index>(detail::parse_int_cell(cells[2]));
  r.seed = detail::parse_int_cell(cells[3]);
  r.rel_error = detail::parse_optional_cell(cells[4]);
  r.trace = detail::parse_required_cell(cells[5]);
  r.log_trace = detail::parse_optional_cell(cells[6]);
  r.nll = detail::parse_required_cell(cells[7]);
  if (cells.size() == 9) r.nll_diag = detail::parse_optional_cell(cells[8]);
  return r;
}

struct MetricsFile {
  std::vector<MetricsReport> reports;
  Index skipped = 0;
};

/// Reads a metrics CSV; malformed rows are skipped and counted.
inline MetricsFile read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  MetricsFile out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      first = false;
      if (line.rfind("dataset,", 0) == 0) continue;
    }
    if (detail::trim(line).empty()) continue;
    try {
      out.reports.push_back(parse_metrics_row(line));
    } catch (const ParseError&) {
      ++out.skipped;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation over seeds

struct MeanStderr {
  std::optional<double> mean;
  std::optional<double> stderr_;  // sample std / sqrt(count); needs count >= 2
  Index count = 0;
};

inline MeanStderr mean_stderr(const std::vector<double>& values) {
  MeanStderr out;
  out.count = static_cast<Index>(values.size());
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  const double m = sum / static_cast<double>(values.size());
  out.mean = m;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    out.stderr_ = sd / std::sqrt(static_cast<double>(values.size()));
  }
  return out;
}

struct AggregateRow {
  std::string dataset;
  std::string method;
  Index s = 0;
  Index seeds = 0;
  MeanStderr rel_error, trace, log_trace, nll;
};

/// Groups by (dataset, method, s) in order of first appearance.
inline std::vector<AggregateRow> aggregate(const std::vector<MetricsReport>& reports) {
  using Key = std::tuple<std::string, std::string, Index>;
  std::map<Key, std::size_t> index;
  std::vector<Key> keys;
  std::vector<std::vector<const MetricsReport*>> members;
  for (const auto& r : reports) {
    Key k{r.dataset, r.method, r.s};
    auto [it, inserted] = index.emplace(k, keys.size());
    if (inserted) {
      keys.push_back(k);
      members.emplace_back();
    }
    members[it->second].push_back(&r);
  }
  std::vector<AggregateRow> rows;
  for (std::size_t g = 0; g < keys.size(); ++g) {
    AggregateRow row;
    std::tie(row.dataset, row.method, row.s) = keys[g];
    row.seeds = static_cast<Index>(members[g].size());
    std::vector<double> re, tr, lt, nl;
    for (const MetricsReport* r : members[g]) {
      if (r->rel_error) re.push_back(*r->rel_error);
      tr.push_back(r->trace);
      if (r->log_trace) lt.push_back(*r->log_trace);
      nl.push_back(r->nll);
    }
    row.rel_error = mean_stderr(re);
    row.trace = mean_stderr(tr);
    row.log_trace = mean_stderr(lt);
    row.nll = mean_stderr(nl);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline const char* kAggregateHeader =
    "dataset,method,s,n_seeds,rel_error_mean,rel_error_stderr,trace_mean,trace_stderr,"
    "log_trace_mean,log_trace_stderr,nll_mean,nll_stderr";

inline void write_aggregate_csv(const std::string& path,
                                const std::vector<AggregateRow>& rows) {
  write_atomically(path, [&](std::ofstream& out) {
    out.precision(17);
    out << kAggregateHeader << '\n';
    for (const auto& r : rows) {
      out << r.dataset << ',' << r.method << ',' << r.s << ',' << r.seeds;
      for (const MeanStderr* m : {&r.rel_error, &r.trace, &r.log_trace, &r.nll}) {
        out << ',';
        detail::put_optional(out, m->mean);
        out << ',';
        detail::put_optional(out, m->stderr_);
      }
      out << '\n';
    }
  });
}

}  // namespace sublap
