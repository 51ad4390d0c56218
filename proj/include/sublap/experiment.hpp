#pragma once

// Config-driven pipeline: data -> MAP training -> curvature -> posteriors ->
// projectors -> metrics, swept over subspace sizes and seeds.
//
// Layout of an output directory for dataset `name`:
//
//   <output_dir>/<name>/seed_<k>/map.json             MAP checkpoint
//   <output_dir>/<name>/seed_<k>/loss_trace.csv
//   <output_dir>/<name>/seed_<k>/factor.bin           curvature factor V
//   <output_dir>/<name>/seed_<k>/cache.json           cache fingerprint
//   <output_dir>/<name>/seed_<k>/run_metrics.csv
//   <output_dir>/<name>/seed_<k>/sensitivity.csv      heatmap data
//   <output_dir>/<name>/seed_<k>/projectors/*.bin     (optional)
//   <output_dir>/<name>/metrics.csv                   all seeds
//   <output_dir>/<name>/aggregate.csv                 mean / stderr over seeds
//   <output_dir>/<name>/dead_parameters.csv

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sublap/curvature.hpp"
#include "sublap/data.hpp"
#include "sublap/error.hpp"
#include "sublap/linalg.hpp"
#include "sublap/metrics.hpp"
#include "sublap/model.hpp"
#include "sublap/posterior.hpp"
#include "sublap/predictive.hpp"
#include "sublap/subspace.hpp"
#include "sublap/train.hpp"

namespace sublap {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct DatasetConfig {
  std::string name;             // defaults to `kind`
  std::string kind = "sincos";  // sincos | blobs | csv
  std::uint64_t seed = 0;       // generation seed, shared by all runs
  // sincos
  Index n = 250;
  double sigma = 0.1;
  double x_min = -10.0;
  double x_max = 10.0;
  // blobs
  Index classes = 3;
  Index dim = 2;
  double separation = 3.0;
  // csv
  std::string path;
  std::vector<Index> target_columns;
  std::string task = "regression";  // regression | classification
  bool header = true;
  double noise_sigma = 1.0;          // csv regression noise, standardized units

  std::string display_name() const { return name.empty() ? kind : name; }
};

enum class NoiseMode { Known, Estimate };

struct ExperimentConfig {
  DatasetConfig dataset;
  std::vector<Index> hidden = {128, 128};
  SplitConfig split;
  TrainConfig train;
  double prior_precision = 1.0;
  std::vector<ProjectorKind> projectors = all_projector_kinds();
  std::vector<Index> s_grid = {1, 2, 4, 8, 16, 32};
  std::vector<std::int64_t> seeds = {0, 1, 2, 3, 4};
  std::string output_dir = "results";
  NoiseMode noise = NoiseMode::Estimate;
  double dead_threshold = 1e-6;
  Index max_full_params = 5000;
  double rank_tol = 1e-10;
  Index jobs = 0;  // parallel seeds; 0 = hardware concurrency
  bool save_projectors = false;

  void validate() const {
    if (projectors.empty()) throw ArgumentError("config: no projector kinds");
    if (s_grid.empty()) throw ArgumentError("config: empty s_grid");
    for (std::size_t i = 0; i < s_grid.size(); ++i) {
      if (s_grid[i] < 1) throw ArgumentError("config: s_grid entries must be >= 1");
      if (i > 0 && s_grid[i] <= s_grid[i - 1]) {
        throw ArgumentError("config: s_grid must be strictly ascending");
      }
    }
    if (seeds.empty()) throw ArgumentError("config: no seeds");
    if (!(prior_precision > 0.0)) throw ArgumentError("config: prior_precision <= 0");
    if (!(dead_threshold >= 0.0)) throw ArgumentError("config: dead_threshold < 0");
    if (!(rank_tol > 0.0 && rank_tol < 1.0)) throw ArgumentError("config: rank_tol outside (0,1)");
    const auto& k = dataset.kind;
    if (k != "sincos" && k != "blobs" && k != "csv") {
      throw ArgumentError("config: unknown dataset kind '" + k + "'");
    }
    if (k == "csv" && dataset.path.empty()) {
      throw ArgumentError("config: csv dataset needs a path");
    }
    for (Index h : hidden) {
      if (h < 1) throw ArgumentError("config: hidden widths must be positive");
    }
    train.validate();
  }
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!j.is_object()) throw ArgumentError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw ArgumentError("config: unknown key '" + where + (where.empty() ? "" : ".") +
                          key + "'");
    }
  }
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ArgumentError(std::string("config: bad value for '") + key + "': " +
                          e.what());
    }
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  detail::reject_unknown_keys(
      j,
      {"dataset", "network", "split", "train", "prior_precision", "projectors", "s_grid",
       "seeds", "output_dir", "noise", "dead_threshold", "max_full_params", "rank_tol", "jobs",
       "save_projectors"},
      "");
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    detail::reject_unknown_keys(d,
                                {"name", "kind", "seed", "n", "sigma", "x_min", "x_max",
                                 "classes", "dim", "separation", "path",
                                 "target_columns", "task", "header", "noise_sigma"},
                                "dataset");
    auto& ds = cfg.dataset;
    detail::read_key(d, "name", ds.name);
    detail::read_key(d, "kind", ds.kind);
    detail::read_key(d, "seed", ds.seed);
    detail::read_key(d, "n", ds.n);
    detail::read_key(d, "sigma", ds.sigma);
    detail::read_key(d, "x_min", ds.x_min);
    detail::read_key(d, "x_max", ds.x_max);
    detail::read_key(d, "classes", ds.classes);
    detail::read_key(d, "dim", ds.dim);
    detail::read_key(d, "separation", ds.separation);
    detail::read_key(d, "path", ds.path);
    detail::read_key(d, "target_columns", ds.target_columns);
    detail::read_key(d, "task", ds.task);
    detail::read_key(d, "header", ds.header);
    detail::read_key(d, "noise_sigma", ds.noise_sigma);
  }
  if (j.contains("network")) {
    const json& n = j.at("network");
    detail::reject_unknown_keys(n, {"hidden"}, "network");
    detail::read_key(n, "hidden", cfg.hidden);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    detail::reject_unknown_keys(
        s, {"train_fraction", "construction_subset_size", "eval_subset_size"}, "split");
    detail::read_key(s, "train_fraction", cfg.split.train_fraction);
    detail::read_key(s, "construction_subset_size", cfg.split.construction_subset_size);
    detail::read_key(s, "eval_subset_size", cfg.split.eval_subset_size);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::reject_unknown_keys(
        t, {"epochs", "lr", "warmup_frac", "decay_frac", "batch_size"}, "train");
    detail::read_key(t, "epochs", cfg.train.epochs);
    detail::read_key(t, "lr", cfg.train.lr);
    detail::read_key(t, "warmup_frac", cfg.train.warmup_frac);
    detail::read_key(t, "decay_frac", cfg.train.decay_frac);
    detail::read_key(t, "batch_size", cfg.train.batch_size);
  }
  detail::read_key(j, "prior_precision", cfg.prior_precision);
  cfg.train.prior_precision = cfg.prior_precision;
  if (j.contains("projectors")) {
    cfg.projectors.clear();
    for (const auto& name : j.at("projectors")) {
      cfg.projectors.push_back(projector_kind_from_string(name.get<std::string>()));
    }
  }
  detail::read_key(j, "s_grid", cfg.s_grid);
  detail::read_key(j, "seeds", cfg.seeds);
  detail::read_key(j, "output_dir", cfg.output_dir);
  if (j.contains("noise")) {
    const std::string mode = j.at("noise").get<std::string>();
    if (mode == "known") {
      cfg.noise = NoiseMode::Known;
    } else if (mode == "estimate") {
      cfg.noise = NoiseMode::Estimate;
    } else {
      throw ArgumentError("config: noise must be 'known' or 'estimate'");
    }
  }
  detail::read_key(j, "dead_threshold", cfg.dead_threshold);
  detail::read_key(j, "max_full_params", cfg.max_full_params);
  detail::read_key(j, "rank_tol", cfg.rank_tol);
  detail::read_key(j, "jobs", cfg.jobs);
  detail::read_key(j, "save_projectors", cfg.save_projectors);
  cfg.validate();
  return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  json j;
  j["dataset"] = {{"name", d.name},       {"kind", d.kind},
                  {"seed", d.seed},       {"n", d.n},
                  {"sigma", d.sigma},     {"x_min", d.x_min},
                  {"x_max", d.x_max},     {"classes", d.classes},
                  {"dim", d.dim},         {"separation", d.separation},
                  {"path", d.path},       {"target_columns", d.target_columns},
                  {"task", d.task},       {"header", d.header},
                  {"noise_sigma", d.noise_sigma}};
  j["network"] = {{"hidden", cfg.hidden}};
  j["split"] = {{"train_fraction", cfg.split.train_fraction},
                {"construction_subset_size", cfg.split.construction_subset_size},
                {"eval_subset_size", cfg.split.eval_subset_size}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"lr", cfg.train.lr},
                {"warmup_frac", cfg.train.warmup_frac},
                {"decay_frac", cfg.train.decay_frac},
                {"batch_size", cfg.train.batch_size}};
  j["prior_precision"] = cfg.prior_precision;
  json kinds = json::array();
  for (ProjectorKind k : cfg.projectors) kinds.push_back(to_string(k));
  j["projectors"] = kinds;
  j["s_grid"] = cfg.s_grid;
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["noise"] = cfg.noise == NoiseMode::Known ? "known" : "estimate";
  j["dead_threshold"] = cfg.dead_threshold;
  j["max_full_params"] = cfg.max_full_params;
  j["rank_tol"] = cfg.rank_tol;
  j["jobs"] = cfg.jobs;
  j["save_projectors"] = cfg.save_projectors;
  return j;
}

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ArgumentError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ArgumentError("override path '" + path + "' is not an object");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

inline ExperimentConfig load_config(const std::string& path,
                                    const std::vector<std::string>& overrides = {}) {
  json j = path.empty() ? json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Logging

/// Thread-safe line logger; the sink defaults to stderr.
class RunLog {
 public:
  explicit RunLog(std::ostream* sink = &std::cerr) : sink_(sink) {}

  void info(const std::string& msg) { write("info", msg); }
  void warn(const std::string& msg) { write("warn", msg); }
  void error(const std::string& msg) { write("error", msg); }

 private:
  void write(const char* level, const std::string& msg) {
    if (sink_ == nullptr) return;
    std::lock_guard<std::mutex> lock(mu_);
    (*sink_) << "[" << level << "] " << msg << '\n';
  }

  std::ostream* sink_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Per-seed stages

inline Dataset make_dataset(const DatasetConfig& d) {
  if (d.kind == "sincos") return synth_sincos(d.n, d.sigma, d.x_min, d.x_max, d.seed);
  if (d.kind == "blobs") return synth_blobs(d.n, d.classes, d.dim, d.separation, d.seed);
  if (d.kind == "csv") {
    Task task = d.task == "classification" ? Task::classification(d.classes)
                                           : Task::regression(d.noise_sigma);
    if (d.task != "classification" && d.task != "regression") {
      throw ArgumentError("config: dataset.task must be regression or classification");
    }
    return load_csv(d.path, d.target_columns, task, CsvOptions{d.header});
  }
  throw ArgumentError("unknown dataset kind '" + d.kind + "'");
}

inline std::string seed_dir(const ExperimentConfig& cfg, std::int64_t seed) {
  return (fs::path(cfg.output_dir) / cfg.dataset.display_name() /
          ("seed_" + std::to_string(seed)))
      .string();
}

inline std::string dataset_dir(const ExperimentConfig& cfg) {
  return (fs::path(cfg.output_dir) / cfg.dataset.display_name()).string();
}

struct SeedArtifacts {
  std::int64_t seed = 0;
  Split split;
  Network net;
  double sigma = 1.0;  // regression noise used for curvature and predictive
  std::optional<CurvatureFactor> factor;
  std::vector<LossTraceRow> loss_trace;
  bool retrained = false;
};

namespace detail {

inline std::string fingerprint(const ExperimentConfig& cfg, std::int64_t seed) {
  json j = config_to_json(cfg);
  json key = {{"dataset", j["dataset"]}, {"network", j["network"]},
              {"split", j["split"]},     {"train", j["train"]},
              {"prior_precision", j["prior_precision"]}, {"seed", seed}};
  return key.dump();
}

inline std::uint64_t seed_u64(std::int64_t seed) { return static_cast<std::uint64_t>(seed); }

}  // namespace detail

/// Data split, normalization and MAP network for one seed. A checkpoint with
/// a matching fingerprint is reused; otherwise the network is trained and
/// saved.
inline SeedArtifacts prepare_seed(const ExperimentConfig& cfg, std::int64_t seed,
                                  RunLog& log, bool allow_train = true) {
  SeedArtifacts art;
  art.seed = seed;
  const Dataset ds = make_dataset(cfg.dataset);
  SplitConfig sc = cfg.split;
  sc.seed = detail::seed_u64(seed);
  art.split = split_and_subset(ds, sc);
  const NormalizationStats stats = normalize_split(art.split);
  if (cfg.dataset.kind == "sincos") {
    // The generator noise is given in raw target units.
    const double scale = stats.y_std.mean();
    for (Dataset* part : {&art.split.train, &art.split.test, &art.split.construction,
                          &art.split.eval}) {
      part->task.sigma /= scale;
    }
  }

  NetworkSpec spec;
  spec.widths.push_back(ds.input_dim());
  for (Index h : cfg.hidden) spec.widths.push_back(h);
  spec.widths.push_back(ds.output_dim());

  const std::string dir = seed_dir(cfg, seed);
  fs::create_directories(dir);
  const std::string ckpt = (fs::path(dir) / "map.json").string();
  const std::string fp = detail::fingerprint(cfg, seed);

  bool loaded = false;
  if (fs::exists(ckpt)) {
    try {
      const json j = read_json_file(ckpt);
      if (j.contains("meta") && j["meta"].value("fingerprint", "") == fp) {
        art.net = network_from_json(j);
        loaded = true;
        log.info(cfg.dataset.display_name() + " seed " + std::to_string(seed) +
                 ": reusing checkpoint " + ckpt);
      }
    } catch (const std::exception& e) {
      log.warn("ignoring unreadable checkpoint " + ckpt + ": " + e.what());
    }
  }
  if (!loaded) {
    if (!allow_train) throw ArgumentError("no matching checkpoint at " + ckpt);
    TrainConfig tc = cfg.train;
    tc.seed = detail::seed_u64(seed);
    const Network init = init_network(spec, detail::seed_u64(seed));
    TrainResult res = train_map(init, art.split.train, tc, &art.split.test);
    art.net = std::move(res.net);
    art.loss_trace = std::move(res.trace);
    art.retrained = true;
    json meta = {{"fingerprint", fp},
                 {"seed", seed},
                 {"final_train_loss",
                  art.loss_trace.empty() ? 0.0 : art.loss_trace.back().train_loss}};
    save_network(ckpt, art.net, meta);
    write_loss_trace((fs::path(dir) / "loss_trace.csv").string(), art.loss_trace);
    log.info(cfg.dataset.display_name() + " seed " + std::to_string(seed) +
             ": trained " + std::to_string(art.net.num_params()) + " parameters");
  }

  if (art.split.train.task.is_regression()) {
    if (cfg.noise == NoiseMode::Estimate) {
      art.sigma = estimate_sigma(art.net, art.split.train);
    } else {
      art.sigma = art.split.train.task.sigma;
    }
    for (Dataset* part : {&art.split.train, &art.split.test, &art.split.construction,
                          &art.split.eval}) {
      part->task.sigma = art.sigma;
    }
  }
  return art;
}

/// Loads the cached curvature factor when it matches the checkpoint and
/// noise level, otherwise computes and caches it.
inline const CurvatureFactor& ensure_factor(const ExperimentConfig& cfg,
                                            SeedArtifacts& art, RunLog& log) {
  if (art.factor) return *art.factor;
  const std::string dir = seed_dir(cfg, art.seed);
  const std::string path = (fs::path(dir) / "factor.bin").string();
  const std::string meta_path = (fs::path(dir) / "cache.json").string();
  const json want = {{"fingerprint", detail::fingerprint(cfg, art.seed)},
                     {"sigma", art.sigma}};
  if (!art.retrained && fs::exists(path) && fs::exists(meta_path)) {
    try {
      if (read_json_file(meta_path) == want) {
        art.factor = load_curvature_factor(path);
        if (art.factor->num_params() == art.net.num_params() &&
            art.factor->N == art.split.train.size()) {
          return *art.factor;
        }
        art.factor.reset();
      }
    } catch (const std::exception& e) {
      log.warn("ignoring unreadable curvature cache " + path + ": " + e.what());
      art.factor.reset();
    }
  }
  art.factor = curvature_factor(art.net, art.split.train);
  save_curvature_factor(path, *art.factor);
  write_atomically(meta_path, [&](std::ofstream& out) { out << want.dump(2) << '\n'; });
  return *art.factor;
}

// ---------------------------------------------------------------------------
// Sweep

struct CellOutcome {
  Index ok = 0;
  Index skipped = 0;
  Index failed = 0;
};

struct SeedResult {
  std::vector<MetricsReport> reports;
  CellOutcome cells;
  std::optional<double> dead_fraction;
};

namespace detail {

struct EvalContext {
  const ExperimentConfig& cfg;
  SeedArtifacts& art;
  RunLog& log;
  Jacobian jac_eval;
  std::optional<EpistemicCov> sigma_x;
};

inline MetricsReport evaluate_projector(EvalContext& ctx, const Projector& proj) {
  const SubspacePredictive sp = subspace_predictive(ctx.jac_eval, proj.P,
                                                    *ctx.art.factor,
                                                    ctx.cfg.prior_precision);
  const EpistemicCov cov = sp.cov();
  MetricsReport r;
  r.dataset = ctx.cfg.dataset.display_name();
  r.method = to_string(proj.kind);
  r.s = proj.s();
  r.seed = ctx.art.seed;
  if (ctx.sigma_x) r.rel_error = relative_error(*ctx.sigma_x, cov);
  r.trace = cov.trace();
  r.log_trace = log_trace(r.trace);
  const Dataset& eval = ctx.art.split.eval;
  if (eval.task.is_regression()) {
    const GaussianPred pred = predict_regression(ctx.art.net, eval.X, cov, ctx.art.sigma);
    r.nll = nll(pred, eval.Y);
    r.nll_diag = nll_diag(pred, eval.Y);
  } else {
    r.nll = nll(predict_classification_probit(ctx.art.net, eval.X, cov), eval.labels);
  }
  return r;
}

}  // namespace detail

/// Builds the stage shared by every s of one projector kind and returns a
/// function producing the projector for a given s.
inline std::function<Projector(Index)> projector_family(
    const ExperimentConfig& cfg, SeedArtifacts& art, ProjectorKind kind,
    const Jacobian& jac_eval, const std::optional<PosteriorApprox>& full_post) {
  const CurvatureFactor& factor = *art.factor;
  switch (kind) {
    case ProjectorKind::SubsetMagnitude: {
      const Vector scores = art.net.theta.cwiseAbs();
      return [scores, kind](Index s) { return subset_projector(scores, s, kind); };
    }
    case ProjectorKind::SubsetDiagonal: {
      const Vector scores =
          build_diag_posterior(ggn_diag(factor), cfg.prior_precision).variance_diag();
      return [scores, kind](Index s) { return subset_projector(scores, s, kind); };
    }
    case ProjectorKind::SubsetSwag: {
      TrainConfig tc = cfg.train;
      tc.seed = detail::seed_u64(art.seed);
      const SwagConfig sw = default_swag_config(tc, art.split.train.size());
      const Vector scores = run_swag(art.net, art.split.train, sw).variance();
      return [scores, kind](Index s) { return subset_projector(scores, s, kind); };
    }
    case ProjectorKind::LowrankDiagonal: {
      auto lc = std::make_shared<LowrankConstruction>(
          build_diag_posterior(ggn_diag(factor), cfg.prior_precision),
          jacobian(art.net, art.split.construction.X), kind, cfg.rank_tol);
      return [lc](Index s) { return lc->projector(s); };
    }
    case ProjectorKind::LowrankKfac: {
      auto lc = std::make_shared<LowrankConstruction>(
          build_kfac_posterior(kfac_factors(art.net, art.split.train), art.net.spec,
                               cfg.prior_precision),
          jacobian(art.net, art.split.construction.X), kind, cfg.rank_tol);
      return [lc](Index s) { return lc->projector(s); };
    }
    case ProjectorKind::LowrankOptGGN: {
      if (!full_post) {
        throw CapacityError("optimal projector needs the full GGN posterior");
      }
      auto lc = std::make_shared<LowrankConstruction>(*full_post, jac_eval, kind,
                                                      cfg.rank_tol);
      return [lc](Index s) { return lc->projector(s); };
    }
    case ProjectorKind::Full: {
      if (!full_post) throw CapacityError("p exceeds max_full_params");
      const Index p = art.net.num_params();
      return [p](Index) { return full_projector(p); };
    }
  }
  throw ArgumentError("unknown projector kind");
}

/// Every (projector kind, s) cell for one prepared seed. Cells with s beyond
/// the usable rank are skipped with a logged reason; any other error fails
/// only that cell.
inline SeedResult evaluate_seed(const ExperimentConfig& cfg, SeedArtifacts& art,
                                RunLog& log) {
  SeedResult out;
  const std::string tag =
      cfg.dataset.display_name() + " seed " + std::to_string(art.seed) + ": ";
  ensure_factor(cfg, art, log);
  const Index p = art.net.num_params();
  const std::string dir = seed_dir(cfg, art.seed);

  detail::EvalContext ctx{cfg, art, log, jacobian(art.net, art.split.eval.X), {}};

  std::optional<PosteriorApprox> full_post;
  if (p <= cfg.max_full_params) {
    full_post = build_full_posterior(*art.factor, cfg.prior_precision, cfg.max_full_params);
    ctx.sigma_x = epistemic_cov_full(ctx.jac_eval, *full_post);
  } else {
    log.warn(tag + "p = " + std::to_string(p) +
             " exceeds max_full_params; relative errors are not reported");
  }

  // Dead-parameter analysis on the training Jacobian.
  try {
    const Jacobian jac_train = jacobian(art.net, art.split.train.X);
    const DeadParameterReport dead = dead_parameter_fraction(jac_train, cfg.dead_threshold);
    out.dead_fraction = dead.fraction;
    write_sensitivity_csv((fs::path(dir) / "sensitivity.csv").string(), jac_train, dead);
    write_sensitivity_summary_csv((fs::path(dir) / "sensitivity_summary.csv").string(),
                                  dead);
  } catch (const Error& e) {
    log.error(tag + "dead-parameter analysis failed: " + e.what());
    ++out.cells.failed;
  }

  if (cfg.save_projectors) fs::create_directories(fs::path(dir) / "projectors");

  auto run_cell = [&](ProjectorKind kind, Index s, const std::function<Projector()>& build) {
    const std::string cell = tag + to_string(kind) + " s=" + std::to_string(s) + ": ";
    try {
      const Projector proj = build();
      if (cfg.save_projectors) {
        save_projector((fs::path(dir) / "projectors" /
                        (to_string(kind) + "_s" + std::to_string(s) + ".bin"))
                           .string(),
                       proj);
      }
      out.reports.push_back(detail::evaluate_projector(ctx, proj));
      ++out.cells.ok;
    } catch (const RankError& e) {
      log.info(cell + "skipped: " + e.what());
      ++out.cells.skipped;
    } catch (const Error& e) {
      log.error(cell + e.what());
      ++out.cells.failed;
    }
  };

  for (ProjectorKind kind : cfg.projectors) {
    if (kind == ProjectorKind::Full) {
      if (!full_post) {
        log.info(tag + "none-full skipped: p exceeds max_full_params");
        ++out.cells.skipped;
        continue;
      }
      run_cell(kind, p, [&] { return full_projector(p); });
      continue;
    }

    std::function<Projector(Index)> make;
    try {
      make = projector_family(cfg, art, kind, ctx.jac_eval, full_post);
    } catch (const Error& e) {
      log.error(tag + to_string(kind) + ": construction failed: " + e.what());
      out.cells.failed += static_cast<Index>(cfg.s_grid.size());
      continue;
    }

    for (Index s : cfg.s_grid) {
      if (s > p) {
        log.info(tag + to_string(kind) + " s=" + std::to_string(s) +
                 ": skipped: exceeds parameter count " + std::to_string(p));
        ++out.cells.skipped;
        continue;
      }
      run_cell(kind, s, [&] { return make(s); });
    }
  }

  write_metrics_csv((fs::path(dir) / "run_metrics.csv").string(), out.reports);
  return out;
}

/// Builds and saves every configured projector for one prepared seed under
/// seed_<k>/projectors/. Returns the number of files written.
inline CellOutcome project_seed(const ExperimentConfig& cfg, SeedArtifacts& art,
                                RunLog& log) {
  CellOutcome out;
  ensure_factor(cfg, art, log);
  const Index p = art.net.num_params();
  const fs::path dir = fs::path(seed_dir(cfg, art.seed)) / "projectors";
  fs::create_directories(dir);
  const std::string tag =
      cfg.dataset.display_name() + " seed " + std::to_string(art.seed) + ": ";
  const Jacobian jac_eval = jacobian(art.net, art.split.eval.X);
  std::optional<PosteriorApprox> full_post;
  if (p <= cfg.max_full_params) {
    full_post = build_full_posterior(*art.factor, cfg.prior_precision, cfg.max_full_params);
  }
  for (ProjectorKind kind : cfg.projectors) {
    std::vector<Index> sizes = cfg.s_grid;
    if (kind == ProjectorKind::Full) sizes = {p};
    std::function<Projector(Index)> make;
    try {
      make = projector_family(cfg, art, kind, jac_eval, full_post);
    } catch (const Error& e) {
      log.error(tag + to_string(kind) + ": construction failed: " + e.what());
      out.failed += static_cast<Index>(sizes.size());
      continue;
    }
    for (Index s : sizes) {
      const std::string cell = tag + to_string(kind) + " s=" + std::to_string(s) + ": ";
      if (s > p) {
        log.info(cell + "skipped: exceeds parameter count");
        ++out.skipped;
        continue;
      }
      try {
        save_projector(
            (dir / (to_string(kind) + "_s" + std::to_string(s) + ".bin")).string(),
            make(s));
        ++out.ok;
      } catch (const RankError& e) {
        log.info(cell + "skipped: " + e.what());
        ++out.skipped;
      } catch (const Error& e) {
        log.error(cell + e.what());
        ++out.failed;
      }
    }
  }
  return out;
}

struct RunSummary {
  std::vector<MetricsReport> reports;
  std::vector<AggregateRow> aggregate;
  OrderingAgreement agreement;
  CellOutcome cells;
  Index failed_seeds = 0;

  bool all_succeeded() const { return cells.failed == 0 && failed_seeds == 0; }
};

/// Runs every seed (in parallel up to cfg.jobs) and writes the combined,
/// aggregate and dead-parameter CSVs. Output order follows cfg.seeds.
inline RunSummary run_experiment(const ExperimentConfig& cfg, RunLog& log) {
  cfg.validate();
  fs::create_directories(dataset_dir(cfg));

  struct Slot {
    std::optional<SeedResult> result;
    std::string error;
  };
  std::vector<Slot> slots(cfg.seeds.size());
  auto work = [&](std::size_t i) {
    try {
      SeedArtifacts art = prepare_seed(cfg, cfg.seeds[i], log);
      slots[i].result = evaluate_seed(cfg, art, log);
    } catch (const std::exception& e) {
      slots[i].error = e.what();
    }
  };

  const std::size_t jobs = cfg.jobs > 0
                               ? static_cast<std::size_t>(cfg.jobs)
                               : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  for (std::size_t start = 0; start < slots.size(); start += jobs) {
    const std::size_t end = std::min(slots.size(), start + jobs);
    std::vector<std::future<void>> futures;
    for (std::size_t i = start; i < end; ++i) {
      futures.push_back(std::async(std::launch::async, work, i));
    }
    for (auto& f : futures) f.get();
  }

  RunSummary sum;
  std::vector<std::pair<std::int64_t, double>> dead;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i].result) {
      log.error(cfg.dataset.display_name() + " seed " + std::to_string(cfg.seeds[i]) +
                ": " + slots[i].error);
      ++sum.failed_seeds;
      continue;
    }
    const SeedResult& r = *slots[i].result;
    sum.reports.insert(sum.reports.end(), r.reports.begin(), r.reports.end());
    sum.cells.ok += r.cells.ok;
    sum.cells.skipped += r.cells.skipped;
    sum.cells.failed += r.cells.failed;
    if (r.dead_fraction) dead.emplace_back(cfg.seeds[i], *r.dead_fraction);
  }
  sum.aggregate = aggregate(sum.reports);
  sum.agreement = ordering_agreement(sum.reports);

  const fs::path dd = dataset_dir(cfg);
  write_metrics_csv((dd / "metrics.csv").string(), sum.reports);
  write_aggregate_csv((dd / "aggregate.csv").string(), sum.aggregate);
  write_atomically((dd / "dead_parameters.csv").string(), [&](std::ofstream& out) {
    out.precision(17);
    out << "dataset,seed,threshold_rel,dead_fraction\n";
    for (const auto& [seed, frac] : dead) {
      out << cfg.dataset.display_name() << ',' << seed << ',' << cfg.dead_threshold << ','
          << frac << '\n';
    }
  });
  return sum;
}

// ---------------------------------------------------------------------------
// Report

struct RankingRow {
  std::string dataset;
  Index s = 0;
  std::vector<std::string> by_rel_error;  // ascending mean relative error
  std::vector<std::string> by_trace;      // descending mean trace
};

struct ComparisonReport {
  std::vector<RankingRow> rankings;
  OrderingAgreement agreement;
  Index files = 0;
  Index skipped_rows = 0;
};

/// Reads every metrics.csv below `result_dir` and ranks methods per
/// (dataset, s) by mean relative error and mean trace over seeds.
inline ComparisonReport compare_report(const std::string& result_dir) {
  if (!fs::is_directory(result_dir)) {
    throw ArgumentError("compare_report: '" + result_dir + "' is not a directory");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(result_dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw ArgumentError("compare_report: no metrics.csv under '" + result_dir + "'");
  }
  ComparisonReport rep;
  std::vector<MetricsReport> all;
  for (const auto& f : files) {
    MetricsFile mf = read_metrics_csv(f.string());
    rep.skipped_rows += mf.skipped;
    all.insert(all.end(), mf.reports.begin(), mf.reports.end());
    ++rep.files;
  }
  rep.agreement = ordering_agreement(all);

  std::map<std::pair<std::string, Index>, std::vector<const AggregateRow*>> groups;
  const std::vector<AggregateRow> agg = aggregate(all);
  for (const auto& row : agg) groups[{row.dataset, row.s}].push_back(&row);
  for (const auto& [key, rows] : groups) {
    RankingRow rr;
    rr.dataset = key.first;
    rr.s = key.second;
    std::vector<const AggregateRow*> by_err;
    for (const AggregateRow* r : rows) {
      if (r->rel_error.mean) by_err.push_back(r);
    }
    std::stable_sort(by_err.begin(), by_err.end(), [](const auto* a, const auto* b) {
      return *a->rel_error.mean < *b->rel_error.mean;
    });
    for (const AggregateRow* r : by_err) rr.by_rel_error.push_back(r->method);
    std::vector<const AggregateRow*> by_tr = rows;
    std::stable_sort(by_tr.begin(), by_tr.end(), [](const auto* a, const auto* b) {
      return *a->trace.mean > *b->trace.mean;
    });
    for (const AggregateRow* r : by_tr) rr.by_trace.push_back(r->method);
    rep.rankings.push_back(std::move(rr));
  }
  return rep;
}

inline std::string format_report(const ComparisonReport& rep) {
  std::ostringstream out;
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " > " : "") + v[i];
    return s.empty() ? std::string("-") : s;
  };
  for (const auto& r : rep.rankings) {
    out << r.dataset << " s=" << r.s << '\n';
    out << "  by rel_error: " << join(r.by_rel_error) << '\n';
    out << "  by trace:     " << join(r.by_trace) << '\n';
  }
  out << "ordering agreement: ";
  if (auto sc = rep.agreement.score()) {
    out << *sc << " (" << rep.agreement.agree << "/" << rep.agreement.total << " pairs)";
  } else {
    out << "n/a (no comparable pairs)";
  }
  out << '\n';
  out << "files: " << rep.files << ", malformed rows skipped: " << rep.skipped_rows
      << '\n';
  return out.str();
}

inline void write_ranking_csv(const std::string& path, const ComparisonReport& rep) {
  write_atomically(path, [&](std::ofstream& out) {
    out << "dataset,s,rank,method_by_rel_error,method_by_trace\n";
    for (const auto& r : rep.rankings) {
      const std::size_t n = std::max(r.by_rel_error.size(), r.by_trace.size());
      for (std::size_t k = 0; k < n; ++k) {
        out << r.dataset << ',' << r.s << ',' << (k + 1) << ','
            << (k < r.by_rel_error.size() ? r.by_rel_error[k] : "") << ','
            << (k < r.by_trace.size() ? r.by_trace[k] : "") << '\n';
      }
    }
  });
}

}  // namespace sublap
