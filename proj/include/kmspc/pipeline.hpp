#ifndef KMSPC_PIPELINE_HPP
#define KMSPC_PIPELINE_HPP

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kmspc/calibration.hpp"
#include "kmspc/chart_io.hpp"
#include "kmspc/common.hpp"
#include "kmspc/dataset.hpp"
#include "kmspc/kernel.hpp"
#include "kmspc/kpca.hpp"
#include "kmspc/mcmc.hpp"
#include "kmspc/metrics.hpp"
#include "kmspc/propagate.hpp"
#include "kmspc/svg.hpp"
#include "kmspc/unsupervised.hpp"

namespace kmspc {

inline const char* library_version() { return "0.1.0"; }

enum class RouteKind { Gpc, Kpcr, Unsupervised };

struct Route {
  RouteKind kind = RouteKind::Gpc;
  UnsupervisedMethodId method = UnsupervisedMethodId::M1;
};

inline Route parse_route(const std::string& s) {
  if (s == "gpc") return {RouteKind::Gpc, UnsupervisedMethodId::M1};
  if (s == "kpcr") return {RouteKind::Kpcr, UnsupervisedMethodId::M1};
  const std::string prefix = "unsupervised:";
  if (s.rfind(prefix, 0) == 0) {
    std::string method = s.substr(prefix.size());
    for (auto& c : method) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    try {
      return {RouteKind::Unsupervised, parse_method(method)};
    } catch (const InputError& e) {
      throw ValidationError(e.what());
    }
  }
  throw ValidationError("route must be gpc, kpcr, or unsupervised:<m1..m10>, got '" +
                        s + "'");
}

inline std::string route_name(const Route& r) {
  switch (r.kind) {
    case RouteKind::Gpc: return "gpc";
    case RouteKind::Kpcr: return "kpcr";
    case RouteKind::Unsupervised:
      return std::string("unsupervised:") + method_name(r.method);
  }
  return "gpc";
}

inline OptimizerMethod parse_optimizer(const std::string& s) {
  if (s == "lbfgs") return OptimizerMethod::LBFGS;
  if (s == "nelder-mead") return OptimizerMethod::NelderMead;
  if (s == "genetic") return OptimizerMethod::GeneticAlgorithm;
  if (s == "kernel-flows") return OptimizerMethod::KernelFlows;
  throw ValidationError(
      "optimizer must be lbfgs, nelder-mead, genetic, or kernel-flows, got '" + s +
      "'");
}

inline std::string optimizer_name(OptimizerMethod m) {
  switch (m) {
    case OptimizerMethod::LBFGS: return "lbfgs";
    case OptimizerMethod::NelderMead: return "nelder-mead";
    case OptimizerMethod::GeneticAlgorithm: return "genetic";
    case OptimizerMethod::KernelFlows: return "kernel-flows";
  }
  return "lbfgs";
}

inline RetentionPolicy parse_retention(const std::string& s) {
  const auto colon = s.find(':');
  if (colon != std::string::npos) {
    const std::string head = s.substr(0, colon);
    const std::string tail = s.substr(colon + 1);
    try {
      if (head == "energy") return RetentionPolicy::energy(std::stod(tail));
      if (head == "fixed")
        return RetentionPolicy::fixed(static_cast<Index>(std::stoll(tail)));
    } catch (const std::exception&) {
      throw ValidationError("retention value '" + tail + "' is not numeric");
    }
  }
  throw ValidationError("retention must be energy:<frac> or fixed:<r>, got '" + s +
                        "'");
}

inline std::string retention_name(const RetentionPolicy& p) {
  if (p.kind == RetentionPolicy::Kind::Energy)
    return "energy:" + format_double(p.energy_fraction);
  return "fixed:" + std::to_string(p.fixed_r);
}

// Resolved run settings. String-typed inputs are parsed once, here, so every
// later stage works with typed values only.
struct RunConfig {
  std::string healthy_path;
  std::string monitor_path;      // optional
  std::string calibration_path;  // required for gpc/kpcr
  std::string out_dir = "kmspc_out";
  char delimiter = ',';
  std::string label_column = "label";
  std::string time_column = "time";

  KernelFamily kernel = KernelFamily::SE;
  Route route;
  OptimizerMethod optimizer = OptimizerMethod::LBFGS;
  int optimizer_iters = 0;  // 0 selects the per-method default
  SamplerKind sampler = SamplerKind::DRAM;
  Index draws = 2000;
  double burn_in = 0.4;
  double step_size = 0.0;  // 0 requests warm-up tuning
  int leapfrog = 20;
  int tree_depth = 10;
  double stage2_scale = 0.2;
  Index adapt_start = 200;
  double init_cov_scale = 0.1;
  double prior_sd = 1.0;

  RetentionPolicy retention = RetentionPolicy::energy(0.95);
  Index kpcr_components = 2;
  double kpcr_sigma = -1.0;
  double confidence = 0.99;
  double credible = 0.05;
  std::uint64_t seed = 0;
  int workers = 1;
  std::vector<Index> diagnose;  // monitor row indices; empty selects argmax T2
  double init_lengthscale = 1.0;
  double init_signal_sd = 1.0;
  double init_noise_sd = 0.1;
  bool deterministic = false;
};

namespace detail {

inline std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

inline double config_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' needs a number, got '" + value +
                          "'");
  }
}

inline long long config_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' needs an integer, got '" +
                          value + "'");
  }
}

inline std::uint64_t config_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key +
                          "' needs an unsigned integer, got '" + value + "'");
  }
}

inline std::vector<Index> config_index_list(const std::string& key,
                                            const std::string& value) {
  std::vector<Index> out;
  std::string cell;
  std::istringstream ss(value);
  while (std::getline(ss, cell, ',')) {
    cell = trim_ws(cell);
    if (cell.empty()) continue;
    out.push_back(static_cast<Index>(config_int(key, cell)));
  }
  return out;
}

}  // namespace detail

// Flat key = value lines; '#' starts a comment; later assignments win.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("parse_config_file: cannot open '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim_ws(detail::strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(line_no) +
                            " is not 'key = value': '" + line + "'");
    const std::string key = detail::trim_ws(line.substr(0, eq));
    const std::string value = detail::trim_ws(line.substr(eq + 1));
    if (key.empty())
      throw ValidationError("config line " + std::to_string(line_no) +
                            " has an empty key");
    kv[key] = value;
  }
  return kv;
}

inline RunConfig config_from_map(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "healthy") cfg.healthy_path = value;
    else if (key == "monitor") cfg.monitor_path = value;
    else if (key == "calibration") cfg.calibration_path = value;
    else if (key == "out") cfg.out_dir = value;
    else if (key == "delimiter") {
      if (value.size() != 1)
        throw ValidationError("config key 'delimiter' needs one character");
      cfg.delimiter = value[0];
    } else if (key == "label_column") cfg.label_column = value;
    else if (key == "time_column") cfg.time_column = value;
    else if (key == "kernel") {
      if (value == "se") cfg.kernel = KernelFamily::SE;
      else if (value == "ard") cfg.kernel = KernelFamily::ARD;
      else throw ValidationError("kernel must be se or ard, got '" + value + "'");
    } else if (key == "route") cfg.route = parse_route(value);
    else if (key == "optimizer") cfg.optimizer = parse_optimizer(value);
    else if (key == "optimizer_iters")
      cfg.optimizer_iters = static_cast<int>(detail::config_int(key, value));
    else if (key == "sampler") {
      try {
        cfg.sampler = parse_sampler(value);
      } catch (const InputError& e) {
        throw ValidationError(e.what());
      }
    } else if (key == "draws")
      cfg.draws = static_cast<Index>(detail::config_int(key, value));
    else if (key == "burn_in") cfg.burn_in = detail::config_double(key, value);
    else if (key == "step_size") cfg.step_size = detail::config_double(key, value);
    else if (key == "leapfrog")
      cfg.leapfrog = static_cast<int>(detail::config_int(key, value));
    else if (key == "tree_depth")
      cfg.tree_depth = static_cast<int>(detail::config_int(key, value));
    else if (key == "stage2_scale")
      cfg.stage2_scale = detail::config_double(key, value);
    else if (key == "adapt_start")
      cfg.adapt_start = static_cast<Index>(detail::config_int(key, value));
    else if (key == "init_cov_scale")
      cfg.init_cov_scale = detail::config_double(key, value);
    else if (key == "prior_sd") cfg.prior_sd = detail::config_double(key, value);
    else if (key == "retention") cfg.retention = parse_retention(value);
    else if (key == "kpcr_components")
      cfg.kpcr_components = static_cast<Index>(detail::config_int(key, value));
    else if (key == "kpcr_sigma") cfg.kpcr_sigma = detail::config_double(key, value);
    else if (key == "confidence") cfg.confidence = detail::config_double(key, value);
    else if (key == "credible") cfg.credible = detail::config_double(key, value);
    else if (key == "seed") cfg.seed = detail::config_u64(key, value);
    else if (key == "workers")
      cfg.workers = static_cast<int>(detail::config_int(key, value));
    else if (key == "diagnose") cfg.diagnose = detail::config_index_list(key, value);
    else if (key == "init_lengthscale")
      cfg.init_lengthscale = detail::config_double(key, value);
    else if (key == "init_signal_sd")
      cfg.init_signal_sd = detail::config_double(key, value);
    else if (key == "init_noise_sd")
      cfg.init_noise_sd = detail::config_double(key, value);
    else if (key == "mode") {
      if (value == "deterministic") cfg.deterministic = true;
      else if (value == "probabilistic") cfg.deterministic = false;
      else
        throw ValidationError("mode must be probabilistic or deterministic, got '" +
                              value + "'");
    } else throw ValidationError("unknown config key '" + key + "'");
  }
  return cfg;
}

inline void validate_config(const RunConfig& cfg) {
  if (cfg.healthy_path.empty())
    throw ValidationError("config: 'healthy' data path is required");
  if (cfg.kernel == KernelFamily::ARD && cfg.route.kind == RouteKind::Unsupervised)
    throw ValidationError(
        "config: ARD kernel cannot be combined with an unsupervised route; the "
        "tuned lengthscale is isotropic");
  if (cfg.route.kind != RouteKind::Unsupervised && cfg.calibration_path.empty())
    throw ValidationError("config: route '" + route_name(cfg.route) +
                          "' requires a labeled 'calibration' dataset");
  if (cfg.draws < 1) throw ValidationError("config: draws must be >= 1");
  if (!(cfg.burn_in >= 0.0 && cfg.burn_in < 1.0))
    throw ValidationError("config: burn_in must lie in [0, 1)");
  if (!(cfg.confidence > 0.0 && cfg.confidence < 1.0))
    throw ValidationError("config: confidence must lie in (0, 1)");
  if (!(cfg.credible > 0.0 && cfg.credible < 1.0))
    throw ValidationError("config: credible must lie in (0, 1)");
  if (cfg.workers < 1) throw ValidationError("config: workers must be >= 1");
  if (!(cfg.prior_sd > 0.0)) throw ValidationError("config: prior_sd must be > 0");
  if (!(cfg.init_lengthscale > 0.0 && cfg.init_signal_sd > 0.0 &&
        cfg.init_noise_sd > 0.0))
    throw ValidationError("config: initial kernel parameters must be > 0");
  if (cfg.kpcr_components < 1)
    throw ValidationError("config: kpcr_components must be >= 1");
}

// Resolved configuration in a fixed key order, for the manifest.
inline std::vector<std::pair<std::string, std::string>> config_items(
    const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("healthy", c.healthy_path);
  kv.emplace_back("monitor", c.monitor_path);
  kv.emplace_back("calibration", c.calibration_path);
  kv.emplace_back("out", c.out_dir);
  kv.emplace_back("delimiter", std::string(1, c.delimiter));
  kv.emplace_back("label_column", c.label_column);
  kv.emplace_back("time_column", c.time_column);
  kv.emplace_back("kernel", c.kernel == KernelFamily::ARD ? "ard" : "se");
  kv.emplace_back("route", route_name(c.route));
  kv.emplace_back("optimizer", optimizer_name(c.optimizer));
  kv.emplace_back("optimizer_iters", std::to_string(c.optimizer_iters));
  kv.emplace_back("sampler", sampler_name(c.sampler));
  kv.emplace_back("draws", std::to_string(c.draws));
  kv.emplace_back("burn_in", format_double(c.burn_in));
  kv.emplace_back("step_size", format_double(c.step_size));
  kv.emplace_back("leapfrog", std::to_string(c.leapfrog));
  kv.emplace_back("tree_depth", std::to_string(c.tree_depth));
  kv.emplace_back("stage2_scale", format_double(c.stage2_scale));
  kv.emplace_back("adapt_start", std::to_string(c.adapt_start));
  kv.emplace_back("init_cov_scale", format_double(c.init_cov_scale));
  kv.emplace_back("prior_sd", format_double(c.prior_sd));
  kv.emplace_back("retention", retention_name(c.retention));
  kv.emplace_back("kpcr_components", std::to_string(c.kpcr_components));
  kv.emplace_back("kpcr_sigma", format_double(c.kpcr_sigma));
  kv.emplace_back("confidence", format_double(c.confidence));
  kv.emplace_back("credible", format_double(c.credible));
  kv.emplace_back("seed", std::to_string(c.seed));
  kv.emplace_back("workers", std::to_string(c.workers));
  std::string diag;
  for (std::size_t i = 0; i < c.diagnose.size(); ++i) {
    if (i) diag += ",";
    diag += std::to_string(c.diagnose[i]);
  }
  kv.emplace_back("diagnose", diag);
  kv.emplace_back("init_lengthscale", format_double(c.init_lengthscale));
  kv.emplace_back("init_signal_sd", format_double(c.init_signal_sd));
  kv.emplace_back("init_noise_sd", format_double(c.init_noise_sd));
  kv.emplace_back("mode", c.deterministic ? "deterministic" : "probabilistic");
  return kv;
}

struct RunManifest {
  std::string version = library_version();
  std::string status = "ok";
  std::string failed_stage;
  std::string error;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, double>> theta_hat;
  std::vector<std::pair<std::string, std::string>> summary;
  std::vector<std::string> stages_completed;
  std::vector<std::pair<std::string, double>> wall_times;
};

inline std::vector<std::string> param_names(const KernelSpec& spec) {
  std::vector<std::string> names;
  if (spec.family == KernelFamily::ARD)
    for (Index j = 0; j < spec.dimension; ++j)
      names.push_back("log_lengthscale_" + std::to_string(j));
  else
    names.emplace_back("log_lengthscale");
  names.emplace_back("log_signal_sd");
  names.emplace_back("log_noise_sd");
  return names;
}

// Wall times go to a separate file: they are the one output that legitimately
// differs between reruns, and keeping them out of the manifest preserves the
// byte-identical reproduction guarantee for everything else.
inline void write_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream out(path);
  detail::require_stream(out, path);
  out << "version = " << m.version << '\n';
  out << "status = " << m.status << '\n';
  if (!m.failed_stage.empty()) out << "failed_stage = " << m.failed_stage << '\n';
  if (!m.error.empty()) out << "error = " << m.error << '\n';
  out << "seed = " << m.seed << '\n';
  for (const auto& [k, v] : m.config) out << "config." << k << " = " << v << '\n';
  for (const auto& [k, v] : m.theta_hat)
    out << "theta_hat." << k << " = " << format_double(v) << '\n';
  for (const auto& [k, v] : m.summary) out << k << " = " << v << '\n';
  std::string stages;
  for (std::size_t i = 0; i < m.stages_completed.size(); ++i) {
    if (i) stages += ",";
    stages += m.stages_completed[i];
  }
  out << "stages_completed = " << stages << '\n';
  detail::require_stream(out, path);
}

inline void write_timings(const std::string& path, const RunManifest& m) {
  std::ofstream out(path);
  detail::require_stream(out, path);
  char buf[64];
  for (const auto& [stage, seconds] : m.wall_times) {
    std::snprintf(buf, sizeof(buf), "%.6f", seconds);
    out << stage << " = " << buf << '\n';
  }
  detail::require_stream(out, path);
}

// In-memory products shared between pipeline stages.
struct PipelineContext {
  Dataset healthy_raw;
  Dataset monitor_raw;
  bool has_monitor = false;
  Scaler scaler;
  Matrix X_healthy;  // scaled
  Matrix X_monitor;  // scaled; healthy copy when no monitor file is given
  KernelSpec spec;
  Vector theta_hat;
  std::vector<std::string> names;
  std::vector<int> pseudo_labels;
  Chain chain;
  DeterministicChart point_chart;  // at the posterior-mean parameters
  DrawStatistics stats;
  ProbabilisticChart chart_t2;
  ProbabilisticChart chart_spe;
  std::vector<Index> diagnosed;
  std::vector<ContributionBlock> contrib_t2;
  std::vector<ContributionBlock> contrib_spe;
};

namespace detail {

class StageTimer {
 public:
  StageTimer(RunManifest& m, std::string stage)
      : manifest_(m), stage_(std::move(stage)),
        t0_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_)
            .count();
    manifest_.wall_times.emplace_back(stage_, dt);
  }

 private:
  RunManifest& manifest_;
  std::string stage_;
  std::chrono::steady_clock::time_point t0_;
};

inline Vector labels_to_vector(const std::vector<int>& labels) {
  Vector y(static_cast<Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    y[static_cast<Index>(i)] = static_cast<double>(labels[i]);
  return y;
}

inline bool has_both_classes(const std::vector<int>& labels) {
  bool any0 = false, any1 = false;
  for (int v : labels) (v == 0 ? any0 : any1) = true;
  return any0 && any1;
}

}  // namespace detail

inline LoadOptions load_options(const RunConfig& cfg) {
  LoadOptions opts;
  opts.delimiter = cfg.delimiter;
  opts.label_column = cfg.label_column;
  opts.time_column = cfg.time_column;
  return opts;
}

inline void stage_ingest(const RunConfig& cfg, PipelineContext& ctx) {
  const LoadOptions opts = load_options(cfg);
  ctx.healthy_raw = load_dataset(cfg.healthy_path, opts);
  if (ctx.healthy_raw.has_labels())
    for (std::size_t i = 0; i < ctx.healthy_raw.labels.size(); ++i)
      if (ctx.healthy_raw.labels[i] != 0)
        throw ValidationError("healthy dataset row " + std::to_string(i + 2) +
                              " is labeled faulty");
  ctx.scaler = fit_scaler(ctx.healthy_raw);
  ctx.X_healthy = apply_scaler(ctx.scaler, ctx.healthy_raw).X;
  ctx.has_monitor = !cfg.monitor_path.empty();
  if (ctx.has_monitor) {
    ctx.monitor_raw = load_dataset(cfg.monitor_path, opts);
    if (ctx.monitor_raw.variables != ctx.healthy_raw.variables)
      throw ValidationError(
          "monitor dataset variables do not match the healthy dataset");
    ctx.X_monitor = apply_scaler(ctx.scaler, ctx.monitor_raw).X;
  } else {
    ctx.monitor_raw = ctx.healthy_raw;
    ctx.X_monitor = ctx.X_healthy;
  }
  ctx.spec.family = cfg.kernel;
  ctx.spec.dimension = ctx.X_healthy.cols();
  ctx.names = param_names(ctx.spec);
}

inline KernelParams initial_params(const RunConfig& cfg, const KernelSpec& spec) {
  KernelParams init;
  init.log_lengthscales =
      Vector::Constant(spec.lengthscale_count(), std::log(cfg.init_lengthscale));
  init.log_signal_sd = std::log(cfg.init_signal_sd);
  init.log_noise_sd = std::log(cfg.init_noise_sd);
  return init;
}

inline CalibrationObjective calibration_objective(const RunConfig& cfg,
                                                  const PipelineContext& ctx) {
  const Dataset calib = load_dataset(cfg.calibration_path, load_options(cfg));
  if (!calib.has_labels())
    throw ValidationError("calibration dataset '" + cfg.calibration_path +
                          "' has no '" + cfg.label_column + "' column");
  if (calib.variables != ctx.healthy_raw.variables)
    throw ValidationError(
        "calibration dataset variables do not match the healthy dataset");
  CalibrationObjective co;
  co.kind = cfg.route.kind == RouteKind::Kpcr ? LikelihoodKind::KpcrDiscrimination
                                              : LikelihoodKind::GpMarginal;
  co.X = apply_scaler(ctx.scaler, calib).X;
  co.y = detail::labels_to_vector(calib.labels);
  co.r = cfg.kpcr_components;
  co.sigma = cfg.kpcr_sigma;
  return co;
}

inline void stage_calibrate(const RunConfig& cfg, PipelineContext& ctx) {
  if (cfg.route.kind == RouteKind::Unsupervised) {
    UnsupervisedMethod method;
    method.id = cfg.route.method;
    method.seed = cfg.seed;
    method.workers = cfg.workers;
    const double lengthscale = tune_unsupervised(method, ctx.X_healthy);
    ctx.theta_hat.resize(3);
    ctx.theta_hat << std::log(lengthscale), std::log(cfg.init_signal_sd),
        std::log(cfg.init_noise_sd);
    return;
  }
  OptimizerConfig ocfg;
  ocfg.method = cfg.optimizer;
  ocfg.max_iters = cfg.optimizer_iters;
  ocfg.seed = cfg.seed;
  ocfg.workers = cfg.workers;
  const CalibrationResult result = calibrate(calibration_objective(cfg, ctx), ocfg,
                                             initial_params(cfg, ctx.spec));
  ctx.theta_hat = result.theta_hat.to_vector();
}

// Healthy-only path: a provisional chart at the tuned parameters labels the
// monitored stream, and those pseudo-labels become the supervised target for
// sampling.
inline void stage_pseudo_label(const RunConfig& cfg, PipelineContext& ctx,
                               const std::string& out_path) {
  const KernelParams params = KernelParams::from_vector(ctx.theta_hat);
  const KpcaModel model =
      fit_kpca(ctx.X_healthy, ctx.spec, params, cfg.retention, cfg.workers);
  const MonitoringStatistics healthy_stats =
      monitor(model, ctx.X_healthy, cfg.workers);
  const ControlLimits limits = control_limits(healthy_stats, cfg.confidence);
  const PseudoLabels pl =
      assign_pseudo_labels(model, limits, ctx.X_monitor, cfg.workers);
  ctx.pseudo_labels = pl.labels;
  Dataset labeled = ctx.monitor_raw;
  labeled.labels = pl.labels;
  save_dataset(out_path, labeled, load_options(cfg));
}

inline LogPosterior posterior_for(const RunConfig& cfg, const PipelineContext& ctx) {
  LogPosterior lp;
  lp.prior.means = ctx.theta_hat;
  lp.prior.sds = Vector::Constant(ctx.theta_hat.size(), cfg.prior_sd);
  const KernelSpec spec = ctx.spec;
  if (cfg.route.kind == RouteKind::Unsupervised) {
    const Matrix X = ctx.X_monitor;
    const Vector y = detail::labels_to_vector(ctx.pseudo_labels);
    const int workers = cfg.workers;
    lp.log_likelihood = [spec, X, y, workers](const Vector& theta) -> double {
      try {
        return gp_log_marginal(spec, KernelParams::from_vector(theta), X, y,
                               workers);
      } catch (const Error&) {
        return -std::numeric_limits<double>::infinity();
      }
    };
    return lp;
  }
  CalibrationObjective co = calibration_objective(cfg, ctx);
  Objective obj = make_objective(spec, co, nullptr, cfg.workers);
  lp.log_likelihood = obj.value;
  return lp;
}

inline void stage_sample(const RunConfig& cfg, PipelineContext& ctx) {
  const LogPosterior lp = posterior_for(cfg, ctx);
  switch (cfg.sampler) {
    case SamplerKind::AM: {
      AmConfig scfg;
      scfg.n_draws = cfg.draws;
      scfg.burn_in_fraction = cfg.burn_in;
      scfg.adapt_start = cfg.adapt_start;
      scfg.init_cov_scale = cfg.init_cov_scale;
      scfg.seed = cfg.seed;
      ctx.chain = sample_am(lp, ctx.theta_hat, scfg);
      break;
    }
    case SamplerKind::DRAM: {
      DramConfig scfg;
      scfg.n_draws = cfg.draws;
      scfg.burn_in_fraction = cfg.burn_in;
      scfg.adapt_start = cfg.adapt_start;
      scfg.init_cov_scale = cfg.init_cov_scale;
      scfg.stage2_scale = cfg.stage2_scale;
      scfg.seed = cfg.seed;
      ctx.chain = sample_dram(lp, ctx.theta_hat, scfg);
      break;
    }
    case SamplerKind::HMC: {
      HmcConfig scfg;
      scfg.n_draws = cfg.draws;
      scfg.burn_in_fraction = cfg.burn_in;
      scfg.step_size = cfg.step_size;
      scfg.n_leapfrog = cfg.leapfrog;
      scfg.seed = cfg.seed;
      ctx.chain = sample_hmc(lp, ctx.theta_hat, scfg);
      break;
    }
    case SamplerKind::NUTS: {
      NutsConfig scfg;
      scfg.n_draws = cfg.draws;
      scfg.burn_in_fraction = cfg.burn_in;
      scfg.step_size = cfg.step_size;
      scfg.max_tree_depth = cfg.tree_depth;
      scfg.seed = cfg.seed;
      ctx.chain = sample_nuts(lp, ctx.theta_hat, scfg);
      break;
    }
  }
}

inline Vector chart_timestamps(const PipelineContext& ctx) {
  if (ctx.has_monitor && ctx.monitor_raw.has_time()) return ctx.monitor_raw.time;
  if (!ctx.has_monitor && ctx.healthy_raw.has_time()) return ctx.healthy_raw.time;
  Vector t(ctx.X_monitor.rows());
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  return t;
}

inline void stage_propagate(const RunConfig& cfg, PipelineContext& ctx) {
  PropagateConfig pcfg;
  pcfg.confidence = cfg.confidence;
  pcfg.workers = cfg.workers;
  ctx.point_chart = posterior_mean_chart(ctx.chain, ctx.X_healthy, ctx.X_monitor,
                                         cfg.retention, ctx.spec, pcfg);
  ctx.diagnosed = cfg.diagnose;
  if (ctx.diagnosed.empty()) {
    Index argmax = 0;
    ctx.point_chart.t2.maxCoeff(&argmax);
    ctx.diagnosed.push_back(argmax);
  }
  pcfg.contribution_timestamps = ctx.diagnosed;
  ctx.stats = propagate(ctx.chain, ctx.X_healthy, ctx.X_monitor, cfg.retention,
                        ctx.spec, pcfg);
  ctx.chart_t2 = summarize_chart(ctx.stats, ChartKind::T2, cfg.credible);
  ctx.chart_spe = summarize_chart(ctx.stats, ChartKind::SPE, cfg.credible);
  ctx.contrib_t2.clear();
  ctx.contrib_spe.clear();
  for (const Index ts : ctx.diagnosed) {
    for (const ChartKind kind : {ChartKind::T2, ChartKind::SPE}) {
      const ContributionBand band =
          summarize_contributions(ctx.stats, ts, kind, cfg.credible);
      ContributionBlock block;
      block.timestamp = ts;
      block.variables = ctx.healthy_raw.variables;
      block.mean = band.mean;
      block.lower = band.lower;
      block.upper = band.upper;
      block.rank.assign(static_cast<std::size_t>(band.mean.size()), 0);
      for (std::size_t pos = 0; pos < band.ranking.size(); ++pos)
        block.rank[static_cast<std::size_t>(band.ranking[pos])] =
            static_cast<Index>(pos) + 1;
      (kind == ChartKind::T2 ? ctx.contrib_t2 : ctx.contrib_spe)
          .push_back(std::move(block));
    }
  }
}

inline void write_chart_files(const RunConfig& cfg, const PipelineContext& ctx) {
  const Vector ts = chart_timestamps(ctx);
  const std::filesystem::path dir(cfg.out_dir);
  write_chart_csv((dir / "chart_t2.csv").string(),
                  make_chart_table(ts, ctx.point_chart.t2,
                                   ctx.point_chart.limits.t2_limit, ctx.chart_t2));
  write_chart_csv((dir / "chart_spe.csv").string(),
                  make_chart_table(ts, ctx.point_chart.spe,
                                   ctx.point_chart.limits.spe_limit, ctx.chart_spe));
  write_contrib_csv((dir / "contrib_t2.csv").string(), ctx.contrib_t2);
  write_contrib_csv((dir / "contrib_spe.csv").string(), ctx.contrib_spe);
}

// Alarms come from the point chart; scores for the ranking metric are the
// point statistics themselves. Label-dependent rows need both classes.
inline std::vector<std::pair<std::string, double>> evaluate_chart_files(
    const std::string& chart_t2_path, const std::string& chart_spe_path,
    const std::vector<int>& labels) {
  const ChartTable t2 = read_chart_csv(chart_t2_path);
  const ChartTable spe = read_chart_csv(chart_spe_path);
  if (t2.rows() != spe.rows())
    throw InputError("evaluate_chart_files: chart lengths disagree");
  const Index n = t2.rows();
  std::vector<int> alarm_t2(static_cast<std::size_t>(n));
  std::vector<int> alarm_spe(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    alarm_t2[static_cast<std::size_t>(i)] = t2.point[i] > t2.point_limit[i] ? 1 : 0;
    alarm_spe[static_cast<std::size_t>(i)] =
        spe.point[i] > spe.point_limit[i] ? 1 : 0;
  }
  std::vector<std::pair<std::string, double>> rows;
  const double rate_t2 =
      std::accumulate(alarm_t2.begin(), alarm_t2.end(), 0.0) / double(n);
  const double rate_spe =
      std::accumulate(alarm_spe.begin(), alarm_spe.end(), 0.0) / double(n);
  if (!labels.empty() && static_cast<Index>(labels.size()) != n)
    throw InputError("evaluate_chart_files: label count does not match the charts");
  if (!labels.empty() && detail::has_both_classes(labels)) {
    const auto [far_t2, fdr_t2] = far_fdr(alarm_t2, labels);
    const auto [far_spe, fdr_spe] = far_fdr(alarm_spe, labels);
    rows.emplace_back("far_t2", far_t2);
    rows.emplace_back("fdr_t2", fdr_t2);
    rows.emplace_back("far_spe", far_spe);
    rows.emplace_back("fdr_spe", fdr_spe);
    rows.emplace_back("ci", composite_indicator(far_t2, fdr_t2, far_spe, fdr_spe));
    std::vector<double> score_t2(static_cast<std::size_t>(n));
    std::vector<double> score_spe(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      score_t2[static_cast<std::size_t>(i)] = t2.point[i];
      score_spe[static_cast<std::size_t>(i)] = spe.point[i];
    }
    rows.emplace_back("auc_t2", auc(score_t2, labels));
    rows.emplace_back("auc_spe", auc(score_spe, labels));
    rows.emplace_back("f1_t2", f1(alarm_t2, labels));
    rows.emplace_back("f1_spe", f1(alarm_spe, labels));
  }
  rows.emplace_back("alarm_rate_t2", rate_t2);
  rows.emplace_back("alarm_rate_spe", rate_spe);
  return rows;
}

inline void summarize_posterior(const PipelineContext& ctx, RunManifest& manifest) {
  const Index post = ctx.chain.draws.rows() - ctx.chain.burn_in;
  manifest.summary.emplace_back("sampler.acceptance_rate",
                                format_double(ctx.chain.acceptance_rate));
  manifest.summary.emplace_back("sampler.draws",
                                std::to_string(ctx.chain.draws.rows()));
  manifest.summary.emplace_back("sampler.burn_in",
                                std::to_string(ctx.chain.burn_in));
  const Matrix tail = ctx.chain.draws.bottomRows(post);
  for (Index j = 0; j < tail.cols(); ++j) {
    const std::string& name = ctx.names[static_cast<std::size_t>(j)];
    const double mean = tail.col(j).mean();
    const double sd =
        post > 1 ? std::sqrt((tail.col(j).array() - mean).square().sum() /
                             double(post - 1))
                 : 0.0;
    manifest.summary.emplace_back("posterior.mean." + name, format_double(mean));
    manifest.summary.emplace_back("posterior.sd." + name, format_double(sd));
  }
  if (post >= 100) {
    const EssReport report = ess(ctx.chain, ctx.chain.burn_in);
    for (Index j = 0; j < report.ess.size(); ++j)
      manifest.summary.emplace_back(
          "posterior.ess." + ctx.names[static_cast<std::size_t>(j)],
          format_double(report.ess[j]));
  }
  manifest.summary.emplace_back("propagation.retained",
                                std::to_string(ctx.stats.retained));
  manifest.summary.emplace_back("propagation.skipped",
                                std::to_string(ctx.stats.skipped));
  std::string diag;
  for (std::size_t i = 0; i < ctx.diagnosed.size(); ++i) {
    if (i) diag += ",";
    diag += std::to_string(ctx.diagnosed[i]);
  }
  manifest.summary.emplace_back("propagation.diagnosed", diag);
}

inline RunManifest run_pipeline(const RunConfig& cfg) {
  validate_config(cfg);
  RunManifest manifest;
  manifest.seed = cfg.seed;
  manifest.config = config_items(cfg);
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  PipelineContext ctx;
  std::string stage;
  try {
    {
      stage = "ingest";
      detail::StageTimer timer(manifest, stage);
      stage_ingest(cfg, ctx);
      manifest.stages_completed.push_back(stage);
    }
    {
      stage = "calibrate";
      detail::StageTimer timer(manifest, stage);
      stage_calibrate(cfg, ctx);
      write_theta((dir / "theta_hat.txt").string(), ctx.names, ctx.theta_hat);
      for (Index i = 0; i < ctx.theta_hat.size(); ++i)
        manifest.theta_hat.emplace_back(ctx.names[static_cast<std::size_t>(i)],
                                        ctx.theta_hat[i]);
      manifest.stages_completed.push_back(stage);
    }
    if (cfg.route.kind == RouteKind::Unsupervised) {
      stage = "pseudo-label";
      detail::StageTimer timer(manifest, stage);
      stage_pseudo_label(cfg, ctx, (dir / "pseudo_labels.csv").string());
      manifest.stages_completed.push_back(stage);
    }
    if (cfg.deterministic) {
      stage = "chart";
      detail::StageTimer timer(manifest, stage);
      ctx.chain.draws = ctx.theta_hat.transpose();
      ctx.chain.log_post = Vector::Zero(1);
      ctx.chain.burn_in = 0;
      ctx.chain.acceptance_rate = 1.0;
      stage_propagate(cfg, ctx);
      write_chart_files(cfg, ctx);
      manifest.stages_completed.push_back(stage);
    } else {
      {
        stage = "sample";
        detail::StageTimer timer(manifest, stage);
        stage_sample(cfg, ctx);
        write_chain_csv((dir / "chain.csv").string(), ctx.chain, ctx.names);
        manifest.stages_completed.push_back(stage);
      }
      {
        stage = "propagate";
        detail::StageTimer timer(manifest, stage);
        stage_propagate(cfg, ctx);
        write_chart_files(cfg, ctx);
        manifest.stages_completed.push_back(stage);
      }
    }
    summarize_posterior(ctx, manifest);
    {
      stage = "evaluate";
      detail::StageTimer timer(manifest, stage);
      const std::vector<int> labels =
          ctx.has_monitor && ctx.monitor_raw.has_labels() ? ctx.monitor_raw.labels
                                                          : std::vector<int>{};
      const auto rows =
          evaluate_chart_files((dir / "chart_t2.csv").string(),
                               (dir / "chart_spe.csv").string(), labels);
      write_metrics_csv((dir / "metrics.csv").string(), rows);
      manifest.stages_completed.push_back(stage);
    }
    {
      stage = "plot";
      detail::StageTimer timer(manifest, stage);
      emit_plots(cfg.out_dir);
      manifest.stages_completed.push_back(stage);
    }
  } catch (const Error& e) {
    manifest.status = "failed";
    manifest.failed_stage = stage;
    manifest.error = e.what();
    write_manifest((dir / "manifest.txt").string(), manifest);
    write_timings((dir / "timings.txt").string(), manifest);
    throw;
  }
  write_manifest((dir / "manifest.txt").string(), manifest);
  write_timings((dir / "timings.txt").string(), manifest);
  return manifest;
}

}  // namespace kmspc

#endif  // KMSPC_PIPELINE_HPP
