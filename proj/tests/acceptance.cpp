// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Result CSVs of the desk suite are kept under
// ./acceptance_results for inspection and plotting.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "sublap/sublap.hpp"

using namespace sublap;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = "acceptance_results";
const std::vector<std::int64_t> kSeeds = {0, 1, 2, 3, 4};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

Matrix gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Desk suite

std::string write_synth3d(const fs::path& dir, double& noise_std_units) {
  const Index n = 250;
  const double sigma = 0.1;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.task = Task::regression(sigma);
  ds.X.resize(n, 3);
  ds.Y.resize(n, 1);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 3; ++j) ds.X(i, j) = u(rng);
    ds.Y(i, 0) = std::sin(1.5 * ds.X(i, 0)) * std::cos(ds.X(i, 1)) +
                 0.3 * ds.X(i, 2) * ds.X(i, 2) + sigma * noise(rng);
  }
  const double mean = ds.Y.mean();
  const double sd =
      std::sqrt((ds.Y.array() - mean).square().sum() / static_cast<double>(n));
  noise_std_units = sigma / sd;
  fs::create_directories(dir);
  const std::string path = (dir / "synth3d.csv").string();
  write_csv(path, ds, CsvOptions{true});
  return path;
}

ExperimentConfig base_config() {
  ExperimentConfig cfg;
  cfg.hidden = {16, 16};
  cfg.split.train_fraction = 0.8;
  cfg.split.eval_subset_size = 50;
  cfg.s_grid = {1, 2, 4, 8, 10, 16, 32};
  cfg.seeds = kSeeds;
  cfg.output_dir = kRoot.string();
  cfg.jobs = 0;
  return cfg;
}

ExperimentConfig sincos_config() {
  ExperimentConfig cfg = base_config();
  cfg.dataset.kind = "sincos";
  cfg.dataset.n = 250;
  cfg.dataset.sigma = 0.1;
  return cfg;
}

ExperimentConfig synth3d_config() {
  ExperimentConfig cfg = base_config();
  double noise = 1.0;
  cfg.dataset.kind = "csv";
  cfg.dataset.name = "synth3d";
  cfg.dataset.path = write_synth3d(kRoot / "data", noise);
  cfg.dataset.target_columns = {3};
  cfg.dataset.header = true;
  cfg.dataset.noise_sigma = noise;
  return cfg;
}

ExperimentConfig blobs_config() {
  ExperimentConfig cfg = base_config();
  cfg.dataset.kind = "blobs";
  cfg.dataset.n = 250;
  cfg.dataset.classes = 3;
  cfg.dataset.dim = 2;
  return cfg;
}

/// Everything needed to compare covariances on one (dataset, seed).
struct DeskProblem {
  std::string name;
  SeedArtifacts art;
  CurvatureFactor factor;
  double lambda = 1.0;
  Jacobian jac_eval;
  EpistemicCov sigma_x;
};

DeskProblem load_problem(const ExperimentConfig& cfg, std::int64_t seed, RunLog& log) {
  DeskProblem pr;
  pr.name = cfg.dataset.display_name() + "/seed" + std::to_string(seed);
  pr.art = prepare_seed(cfg, seed, log);
  pr.factor = ensure_factor(cfg, pr.art, log);
  pr.lambda = cfg.prior_precision;
  pr.jac_eval = jacobian(pr.art.net, pr.art.split.eval.X);
  pr.sigma_x = epistemic_cov_full(pr.jac_eval, build_full_posterior(pr.factor, pr.lambda));
  return pr;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome theorem1_exactness(RunLog& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = sincos_config();
  DeskProblem pr = load_problem(cfg, 0, log);
  const Index p = pr.art.net.num_params();
  const PosteriorApprox post = build_full_posterior(pr.factor, pr.lambda);
  const SymEig eig = sym_eig(pr.sigma_x.sigma);
  const LowrankConstruction lc(post, pr.jac_eval, ProjectorKind::LowrankOptGGN);
  const Index rank = lc.usable_rank();
  const double norm_x = pr.sigma_x.sigma.norm();
  const double lam_norm = eig.values.norm();
  double worst_cov = 0.0;
  double worst_err = 0.0;
  for (Index s = 1; s <= rank; ++s) {
    const EpistemicCov sub =
        epistemic_cov_subspace(pr.jac_eval, lc.projector(s), pr.factor, pr.lambda);
    const Matrix us = eig.vectors.leftCols(s);
    const Matrix want = us * eig.values.head(s).asDiagonal() * us.transpose();
    worst_cov = std::max(worst_cov, (sub.sigma - want).norm() / norm_x);
    const double tail = eig.values.tail(eig.values.size() - s).norm() / lam_norm;
    worst_err = std::max(worst_err, std::abs(relative_error(pr.sigma_x, sub) - tail));
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = p == 321 && pr.art.split.train.size() == 200 && pr.jac_eval.n == 50 &&
           rank >= 1 && worst_cov <= 1e-8 && worst_err <= 1e-6 && secs < 60.0;
  o.detail = "p=" + std::to_string(p) + " N=" + std::to_string(pr.art.split.train.size()) +
             " n=" + std::to_string(pr.jac_eval.n) + " rank=" + std::to_string(rank) +
             " max|Sigma_P-U_sL_sU_s^T|/|Sigma_X|=" + fmt(worst_cov) +
             " max|relerr-tail|=" + fmt(worst_err) + " time=" + fmt(secs) + "s";
  return o;
}

Outcome optimal_beats_all(const std::vector<MetricsReport>& reports) {
  std::map<std::tuple<std::string, std::int64_t, Index>, double> best;
  for (const auto& r : reports) {
    if (r.method == to_string(ProjectorKind::LowrankOptGGN) && r.rel_error) {
      best[{r.dataset, r.seed, r.s}] = *r.rel_error;
    }
  }
  Index compared = 0;
  Index violations = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& r : reports) {
    if (r.method == to_string(ProjectorKind::LowrankOptGGN) || !r.rel_error) continue;
    const auto it = best.find({r.dataset, r.seed, r.s});
    if (it == best.end()) continue;
    ++compared;
    const double gap = it->second - *r.rel_error;
    worst = std::max(worst, gap);
    if (gap > 1e-9) ++violations;
  }
  Outcome o;
  o.pass = compared > 0 && violations == 0;
  o.detail = std::to_string(compared) + " comparisons, " + std::to_string(violations) +
             " violations, max(opt - other)=" + fmt(worst);
  return o;
}

Outcome loewner_suite(std::vector<DeskProblem>& problems) {
  std::mt19937_64 rng(7);
  Index checked = 0;
  Index violations = 0;
  double worst_eig = std::numeric_limits<double>::infinity();
  double worst_trace = 0.0;
  for (auto& pr : problems) {
    const Index p = pr.art.net.num_params();
    const double tr_x = pr.sigma_x.trace();
    const double nc = static_cast<double>(pr.sigma_x.dim());
    std::uniform_int_distribution<Index> us(1, std::min<Index>(p, 64));
    for (int t = 0; t < 20; ++t) {
      const Index s = us(rng);
      const Matrix proj = gaussian_matrix(p, s, rng);
      require_full_column_rank(proj);
      const EpistemicCov sub =
          epistemic_cov_subspace(pr.jac_eval, proj, pr.factor, pr.lambda);
      const Matrix diff = pr.sigma_x.sigma - sub.sigma;
      const double min_eig =
          Eigen::SelfAdjointEigenSolver<Matrix>(diff, Eigen::EigenvaluesOnly).eigenvalues()(0);
      const double eig_ratio = min_eig / (tr_x / nc);
      const double trace_ratio = sub.trace() / tr_x;
      worst_eig = std::min(worst_eig, eig_ratio);
      worst_trace = std::max(worst_trace, trace_ratio);
      if (min_eig < -1e-8 * tr_x / nc || sub.trace() > tr_x * (1.0 + 1e-8)) ++violations;
      ++checked;
    }
  }
  Outcome o;
  o.pass = checked == 100 && violations == 0;
  o.detail = std::to_string(checked) + " projectors on " + std::to_string(problems.size()) +
             " problems, min eig(Sigma_X-Sigma_P)/(TrSigma_X/nC)=" + fmt(worst_eig) +
             ", max Tr ratio=" + fmt(worst_trace);
  return o;
}

double factor_vs_dense(const Network& net, const Dataset& data) {
  const CurvatureFactor f = curvature_factor(net, data);
  const Index p = net.num_params();
  Matrix dense = Matrix::Zero(p, p);
  for (Index i = 0; i < data.size(); ++i) {
    const Matrix xi = data.X.row(i);
    const Matrix ji = jacobian(net, xi).matrix;
    dense += ji.transpose() * output_hessian(forward(net, xi), data.task) * ji;
  }
  return (ggn_full(f) - dense).norm() / dense.norm();
}

/// Per direction u: GGN quadratic form sum_i w_i^T H_i w_i against the Monte
/// Carlo Fisher sum_i E_y[(w_i^T (phi_i - e_y))^2], w_i = J_i u.
bool mc_fisher_check(std::string& detail) {
  NetworkSpec spec;
  spec.widths = {2, 4, 3};
  const Network net = init_network(spec, 11);
  const Index n = 20;
  const Index draws = 5000;
  std::mt19937_64 rng(12);
  const Matrix x = gaussian_matrix(n, 2, rng);
  Dataset data;
  data.task = Task::classification(3);
  data.X = x;
  data.labels.assign(static_cast<std::size_t>(n), 0);
  const Matrix ggn = ggn_full(curvature_factor(net, data));
  const Index p = net.num_params();

  std::vector<Vector> dirs;
  for (int k = 0; k < 5; ++k) dirs.push_back(gaussian_matrix(p, 1, rng).col(0));
  for (Index k : {Index{0}, p - 1}) dirs.push_back(Vector::Unit(p, k));

  std::vector<Matrix> jac(static_cast<std::size_t>(n));
  std::vector<Vector> phi(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Matrix xi = x.row(i);
    jac[static_cast<std::size_t>(i)] = jacobian(net, xi).matrix;
    phi[static_cast<std::size_t>(i)] = row_softmax(forward(net, xi));
  }
  bool ok = true;
  double worst_z = 0.0;
  for (const Vector& u : dirs) {
    const double exact = u.dot(ggn * u);
    double est = 0.0;
    double var = 0.0;
    for (Index i = 0; i < n; ++i) {
      const Vector w = jac[static_cast<std::size_t>(i)] * u;
      const Vector& ph = phi[static_cast<std::size_t>(i)];
      std::discrete_distribution<Index> cat(ph.data(), ph.data() + ph.size());
      double sum = 0.0;
      double sum_sq = 0.0;
      for (Index m = 0; m < draws; ++m) {
        const Index y = cat(rng);
        const double g = w.dot(ph) - w(y);
        sum += g * g;
        sum_sq += g * g * g * g;
      }
      const double mean = sum / static_cast<double>(draws);
      const double sample_var =
          (sum_sq - static_cast<double>(draws) * mean * mean) / static_cast<double>(draws - 1);
      est += mean;
      var += sample_var / static_cast<double>(draws);
    }
    const double se = std::sqrt(var);
    const double z = se > 0.0 ? std::abs(est - exact) / se : (est == exact ? 0.0 : 1e300);
    worst_z = std::max(worst_z, z);
    if (z > 3.0) ok = false;
  }
  detail = "MC Fisher (" + std::to_string(n * draws) + " samples, " +
           std::to_string(dirs.size()) + " directions) max |diff|/SE=" + fmt(worst_z);
  return ok;
}

Outcome curvature_identities() {
  std::mt19937_64 rng(3);
  double worst_a = 0.0;
  {
    NetworkSpec reg;
    reg.widths = {2, 5, 2};
    Dataset d;
    d.task = Task::regression(0.4);
    d.X = gaussian_matrix(30, 2, rng);
    d.Y = gaussian_matrix(30, 2, rng);
    worst_a = std::max(worst_a, factor_vs_dense(init_network(reg, 1), d));
    NetworkSpec cls;
    cls.widths = {3, 6, 4, 3};
    Dataset c;
    c.task = Task::classification(3);
    c.X = gaussian_matrix(30, 3, rng);
    for (int i = 0; i < 30; ++i) c.labels.push_back(i % 3);
    worst_a = std::max(worst_a, factor_vs_dense(init_network(cls, 2), c));
  }
  std::string fisher_detail;
  const bool b_ok = mc_fisher_check(fisher_detail);

  NetworkSpec lin;
  lin.widths = {3, 2};
  const Network net = init_network(lin, 5);
  Dataset d;
  d.task = Task::regression(0.5);
  d.X = gaussian_matrix(25, 3, rng);
  d.Y = gaussian_matrix(25, 2, rng);
  const Matrix h_fd = loss_hessian_fd(net, d);
  const Matrix g = ggn_full(curvature_factor(net, d));
  const double c_err = (h_fd - g).norm() / g.norm();

  Outcome o;
  o.pass = worst_a <= 1e-10 && b_ok && c_err <= 1e-4;
  o.detail = "(a) |VV^T-dense|/|dense|=" + fmt(worst_a) + "; (b) " + fisher_detail +
             "; (c) linear-model |H_fd-GGN|/|GGN|=" + fmt(c_err);
  return o;
}

Outcome subset_full_recovery(std::vector<DeskProblem>& problems) {
  double worst = 0.0;
  for (auto& pr : problems) {
    const Projector proj =
        subset_projector(pr.art.net.theta.cwiseAbs(), pr.art.net.num_params());
    const EpistemicCov sub = epistemic_cov_subspace(pr.jac_eval, proj, pr.factor, pr.lambda);
    worst = std::max(worst, relative_error(pr.sigma_x, sub));
  }
  Outcome o;
  o.pass = !problems.empty() && worst < 1e-8;
  o.detail = std::to_string(problems.size()) + " problems, max relative error at s=p: " +
             fmt(worst);
  return o;
}

Outcome ordering(const std::vector<MetricsReport>& reports) {
  const OrderingAgreement oa = ordering_agreement(reports);
  Outcome o;
  const auto sc = oa.score();
  o.pass = sc && *sc >= 0.9;
  o.detail = "agreement " + (sc ? fmt(*sc) : std::string("n/a")) + " (" +
             std::to_string(oa.agree) + "/" + std::to_string(oa.total) + " pairs)";
  return o;
}

Outcome lowrank_beats_subset(const std::vector<MetricsReport>& reports,
                             const std::string& dataset) {
  std::map<std::int64_t, double> kfac;
  std::map<std::int64_t, double> best_subset;
  for (const auto& r : reports) {
    if (r.dataset != dataset || r.s != 10 || !r.rel_error) continue;
    if (r.method == to_string(ProjectorKind::LowrankKfac)) kfac[r.seed] = *r.rel_error;
    if (is_subset_kind(projector_kind_from_string(r.method))) {
      auto [it, inserted] = best_subset.emplace(r.seed, *r.rel_error);
      if (!inserted) it->second = std::min(it->second, *r.rel_error);
    }
  }
  Outcome o;
  Index wins = 0;
  std::ostringstream det;
  for (std::int64_t seed : kSeeds) {
    const bool have = kfac.count(seed) && best_subset.count(seed);
    const bool win = have && kfac[seed] < best_subset[seed];
    wins += win ? 1 : 0;
    det << " seed" << seed << ": kfac=" << (kfac.count(seed) ? fmt(kfac[seed]) : "-")
        << " best-subset=" << (best_subset.count(seed) ? fmt(best_subset[seed]) : "-");
  }
  o.pass = wins == static_cast<Index>(kSeeds.size());
  o.detail = std::to_string(wins) + "/" + std::to_string(kSeeds.size()) + " seeds;" + det.str();
  return o;
}

double scalar_nll(const Network& net, const Dataset& test, double sigma, double v) {
  const Index n = test.size();
  const EpistemicCov cov{v * Matrix::Identity(n, n), n, 1};
  return nll(predict_regression(net, test.X, cov, sigma), test.Y);
}

Outcome nll_pathology(RunLog& log) {
  ExperimentConfig known = sincos_config();
  known.noise = NoiseMode::Known;
  const SeedArtifacts art_known = prepare_seed(known, 0, log);
  const SeedArtifacts art_est = prepare_seed(sincos_config(), 0, log);
  const Dataset& test = art_known.split.test;
  const Matrix resid = forward_matrix(art_known.net, test.X) - test.Y;
  const double mse = resid.squaredNorm() / static_cast<double>(resid.size());
  const double sigma = art_known.sigma;
  const double step = 1e-3 * mse;
  const Index steps = 3000;

  Index argmin = 0;
  double best = std::numeric_limits<double>::infinity();
  for (Index k = 0; k <= steps; ++k) {
    const double val = scalar_nll(art_known.net, test, sigma, step * static_cast<double>(k));
    if (val < best) {
      best = val;
      argmin = k;
    }
  }
  const double v_star = step * static_cast<double>(argmin);
  const double target = mse - sigma * sigma;
  const bool known_ok = std::abs(v_star - target) <= step;

  const double sigma_hat = art_est.sigma;
  bool monotone = true;
  double prev = scalar_nll(art_est.net, art_est.split.test, sigma_hat, 0.0);
  const Index est_steps = 300;
  const double est_step = 1e-2 * mse;
  double worst_drop = 0.0;
  for (Index k = 1; k <= est_steps; ++k) {
    const double val =
        scalar_nll(art_est.net, art_est.split.test, sigma_hat, est_step * static_cast<double>(k));
    if (val < prev) {
      monotone = false;
      worst_drop = std::max(worst_drop, prev - val);
    }
    prev = val;
  }
  Outcome o;
  o.pass = known_ok && monotone;
  o.detail = "known sigma=" + fmt(sigma) + " MSE_test=" + fmt(mse) + " argmin=" +
             fmt(v_star) + " MSE-sigma^2=" + fmt(target) + " step=" + fmt(step) +
             "; sigma_hat=" + fmt(sigma_hat) + " non-decreasing=" + (monotone ? "yes" : "no") +
             (monotone ? "" : " (largest drop " + fmt(worst_drop) + ")");
  return o;
}

Outcome gauge(DeskProblem& pr) {
  const Index s = std::min<Index>(10, LowrankConstruction(build_full_posterior(pr.factor, pr.lambda),
                                                          pr.jac_eval, ProjectorKind::LowrankOptGGN)
                                          .usable_rank());
  const Projector proj = optimal_projector(pr.factor, pr.lambda, pr.jac_eval, s);
  auto sigma_of = [&](const Matrix& p) {
    return epistemic_cov_subspace(pr.jac_eval, p, pr.factor, pr.lambda).sigma;
  };
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> scale(0.5, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Matrix a = Eigen::HouseholderQR<Matrix>(gaussian_matrix(s, s, rng)).householderQ();
    const Matrix b = Eigen::HouseholderQR<Matrix>(gaussian_matrix(s, s, rng)).householderQ();
    Vector d(s);
    for (Index k = 0; k < s; ++k) d(k) = scale(rng);
    const Matrix q = a * d.asDiagonal() * b;
    worst = std::max(worst, gauge_invariance_check(proj, q, sigma_of));
  }
  Outcome o;
  o.pass = worst <= 1e-7;
  o.detail = pr.name + " s=" + std::to_string(s) + ", 20 Q with cond<=4, max discrepancy " +
             fmt(worst);
  return o;
}

Outcome jacobian_fd() {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<Index> width(1, 8);
  std::uniform_int_distribution<Index> depth(0, 3);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    NetworkSpec spec;
    spec.widths.push_back(width(rng) % 4 + 1);
    const Index hidden = depth(rng);
    for (Index h = 0; h < hidden; ++h) spec.widths.push_back(width(rng) + 1);
    spec.widths.push_back(width(rng) % 3 + 1);
    Network net = init_network(spec, static_cast<std::uint64_t>(100 + t));
    net.theta = gaussian_matrix(net.num_params(), 1, rng).col(0);
    const Matrix x = gaussian_matrix(6, spec.widths.front(), rng);
    const Matrix j = jacobian(net, x).matrix;
    const double h = 1e-6;
    Network probe = net;
    for (Index k = 0; k < net.num_params(); ++k) {
      probe.theta = net.theta;
      probe.theta(k) += h;
      const Vector fp = forward(probe, x);
      probe.theta(k) = net.theta(k) - h;
      const Vector fm = forward(probe, x);
      worst = std::max(worst, ((fp - fm) / (2.0 * h) - j.col(k)).cwiseAbs().maxCoeff());
    }
  }
  Outcome o;
  o.pass = worst <= 1e-5;
  o.detail = "20 random nets, max |J - J_fd| = " + fmt(worst);
  return o;
}

}  // namespace

int main() {
  RunLog log(nullptr);
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);

  std::map<int, std::pair<std::string, Outcome>> results;
  auto run = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail
              << std::endl;
    results[id] = {name, o};
  };

  run(1, "optimal subspace reproduces leading eigenpairs", [&] { return theorem1_exactness(log); });

  std::vector<ExperimentConfig> suite;
  std::vector<MetricsReport> reports;
  std::string suite_error;
  try {
    suite = {sincos_config(), synth3d_config(), blobs_config()};
    for (const auto& cfg : suite) {
      const RunSummary sum = run_experiment(cfg, log);
      if (sum.failed_seeds > 0 || sum.cells.failed > 0) {
        suite_error += cfg.dataset.display_name() + ": " + std::to_string(sum.cells.failed) +
                       " failed cells, " + std::to_string(sum.failed_seeds) + " failed seeds; ";
      }
      reports.insert(reports.end(), sum.reports.begin(), sum.reports.end());
    }
  } catch (const std::exception& e) {
    suite_error += e.what();
  }
  auto with_suite = [&](const std::function<Outcome()>& fn) {
    return [&, fn] {
      Outcome o = fn();
      if (!suite_error.empty()) {
        o.pass = false;
        o.detail += " [suite errors: " + suite_error + "]";
      }
      return o;
    };
  };

  run(2, "optimal projector has the lowest relative error",
      with_suite([&] { return optimal_beats_all(reports); }));

  std::vector<DeskProblem> problems;
  std::string problem_error;
  try {
    if (suite.size() == 3) {
      for (const auto& cfg : suite) problems.push_back(load_problem(cfg, 0, log));
      problems.push_back(load_problem(suite[0], 1, log));
      problems.push_back(load_problem(suite[2], 1, log));
    }
  } catch (const std::exception& e) {
    problem_error = e.what();
  }
  auto need_problems = [&](std::size_t count) {
    if (problems.size() < count) {
      throw Error("desk problems unavailable: " + problem_error);
    }
  };

  run(3, "subspace covariance is dominated in the Loewner order", [&] {
    need_problems(5);
    return loewner_suite(problems);
  });
  run(4, "curvature identities", [&] { return curvature_identities(); });
  run(5, "subset projector at s=p recovers the full covariance", [&] {
    need_problems(3);
    std::vector<DeskProblem> first(problems.begin(), problems.begin() + 3);
    return subset_full_recovery(first);
  });
  run(6, "trace criterion agrees with relative error ordering",
      with_suite([&] { return ordering(reports); }));
  run(7, "lowrank-kfac beats every subset method at s=10 on blobs",
      with_suite([&] { return lowrank_beats_subset(reports, "blobs"); }));
  run(8, "NLL minimum tracks test MSE", [&] { return nll_pathology(log); });
  run(9, "gauge invariance of the optimal projector", [&] {
    need_problems(1);
    return gauge(problems[0]);
  });
  run(10, "Jacobian agrees with finite differences", [&] { return jacobian_fd(); });

  Index failed = 0;
  for (const auto& [id, r] : results) failed += r.second.pass ? 0 : 1;
  std::cout << (results.size() - static_cast<std::size_t>(failed)) << "/" << results.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
