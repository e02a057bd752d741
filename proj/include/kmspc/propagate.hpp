#ifndef KMSPC_PROPAGATE_HPP
#define KMSPC_PROPAGATE_HPP

#include <algorithm>
#include <numeric>
#include <vector>

#include "kmspc/kpca.hpp"
#include "kmspc/mcmc.hpp"

namespace kmspc {

enum class ChartKind { T2, SPE };

inline const char* chart_name(ChartKind k) {
  return k == ChartKind::T2 ? "t2" : "spe";
}

struct PropagateConfig {
  double confidence = 0.99;
  std::vector<Index> contribution_timestamps;  // row indices into X_monitor
  int workers = 1;
};

struct DrawStatistics {
  Matrix t2;          // retained draws x monitored samples
  Matrix spe;
  Vector t2_limits;   // one limit per retained draw
  Vector spe_limits;
  std::vector<Index> timestamps;
  std::vector<Matrix> contrib_t2;   // per timestamp: retained draws x p
  std::vector<Matrix> contrib_spe;
  Index retained = 0;
  Index skipped = 0;
  double confidence = 0.99;
};

struct DeterministicChart {
  Vector t2;
  Vector spe;
  ControlLimits limits;
  Vector theta_log;
  std::vector<Index> timestamps;
  std::vector<Vector> contrib_t2;   // per timestamp: length p
  std::vector<Vector> contrib_spe;
};

struct ProbabilisticChart {
  ChartKind kind = ChartKind::T2;
  double credible_level = 0.05;
  Vector mean;
  Vector median;
  Vector lower;
  Vector upper;
  double limit_mean = 0.0;
  double limit_lower = 0.0;
  double limit_upper = 0.0;
};

struct ContributionBand {
  ChartKind kind = ChartKind::T2;
  Index timestamp = 0;
  double credible_level = 0.05;
  Vector mean;
  Vector lower;
  Vector upper;
  std::vector<Index> ranking;  // variable indices by decreasing |mean|
};

// One full monitoring pass at a fixed parameter vector: fit on healthy data,
// compute healthy limits, score the monitored window, and evaluate
// contributions at the requested timestamps.
inline DeterministicChart run_deterministic_chart(
    const KernelSpec& spec, const Vector& theta_log, const Matrix& X_healthy,
    const Matrix& X_monitor, const RetentionPolicy& policy,
    const PropagateConfig& cfg = PropagateConfig{}) {
  const KernelParams params = KernelParams::from_vector(theta_log);
  const KpcaModel model = fit_kpca(X_healthy, spec, params, policy, cfg.workers);
  const MonitoringStatistics healthy = monitor(model, X_healthy, cfg.workers);
  DeterministicChart chart;
  chart.theta_log = theta_log;
  chart.limits = control_limits(healthy, cfg.confidence);
  const MonitoringStatistics monitored = monitor(model, X_monitor, cfg.workers);
  chart.t2 = monitored.t2;
  chart.spe = monitored.spe;
  chart.timestamps = cfg.contribution_timestamps;
  for (Index ts : cfg.contribution_timestamps) {
    if (ts < 0 || ts >= X_monitor.rows())
      throw InputError("contribution timestamp outside the monitored window");
    const Vector x = X_monitor.row(ts);
    chart.contrib_t2.push_back(t2_contributions(model, x));
    chart.contrib_spe.push_back(spe_contributions(model, x));
  }
  return chart;
}

inline Vector posterior_draw_rows(const Chain& chain, Index i) {
  return chain.draws.row(chain.burn_in + i).transpose();
}

// Refit the monitoring model under every retained posterior draw. Draws whose
// Gram degenerates are skipped and counted; more than 20% skipped aborts.
inline DrawStatistics propagate(const Chain& chain, const Matrix& X_healthy,
                                const Matrix& X_monitor,
                                const RetentionPolicy& policy,
                                const KernelSpec& spec,
                                const PropagateConfig& cfg = PropagateConfig{}) {
  const Index n_draws = chain.draws.rows() - chain.burn_in;
  if (n_draws < 1)
    throw InputError("propagate: need at least one post-burn-in draw");
  if (!X_healthy.allFinite() || !X_monitor.allFinite())
    throw InputError("propagate: non-finite entries in the data");
  if (X_healthy.cols() != X_monitor.cols())
    throw InputError("propagate: healthy and monitored column counts differ");
  if (X_healthy.rows() < 20)
    throw InputError("propagate: need at least 20 healthy samples for limits");
  if (chain.draws.cols() != spec.lengthscale_count() + 2)
    throw InputError("propagate: draw length does not match the kernel spec");
  const Index n_mon = X_monitor.rows();
  const Index p = X_monitor.cols();
  const Index n_ts = static_cast<Index>(cfg.contribution_timestamps.size());
  for (Index ts : cfg.contribution_timestamps)
    if (ts < 0 || ts >= n_mon)
      throw InputError("contribution timestamp outside the monitored window");

  Matrix t2_all(n_draws, n_mon), spe_all(n_draws, n_mon);
  Vector t2_lim(n_draws), spe_lim(n_draws);
  std::vector<Matrix> ct2(static_cast<std::size_t>(n_ts), Matrix(n_draws, p));
  std::vector<Matrix> cspe(static_cast<std::size_t>(n_ts), Matrix(n_draws, p));
  std::vector<char> ok(static_cast<std::size_t>(n_draws), 0);

  parallel_for(n_draws, cfg.workers, [&](Index i) {
    const Vector theta = posterior_draw_rows(chain, i);
    if (!theta.allFinite()) return;
    try {
      const KernelParams params = KernelParams::from_vector(theta);
      const KpcaModel model = fit_kpca(X_healthy, spec, params, policy, 1);
      const MonitoringStatistics healthy = monitor(model, X_healthy, 1);
      const ControlLimits lim = control_limits(healthy, cfg.confidence);
      const MonitoringStatistics mon = monitor(model, X_monitor, 1);
      t2_all.row(i) = mon.t2.transpose();
      spe_all.row(i) = mon.spe.transpose();
      t2_lim[i] = lim.t2_limit;
      spe_lim[i] = lim.spe_limit;
      for (Index t = 0; t < n_ts; ++t) {
        const Vector x = X_monitor.row(cfg.contribution_timestamps[static_cast<std::size_t>(t)]);
        ct2[static_cast<std::size_t>(t)].row(i) = t2_contributions(model, x).transpose();
        cspe[static_cast<std::size_t>(t)].row(i) = spe_contributions(model, x).transpose();
      }
      ok[static_cast<std::size_t>(i)] = 1;
    } catch (const DegenerateDataError&) {
    } catch (const NumericalError&) {
    } catch (const InputError&) {
    }
  });

  DrawStatistics out;
  out.confidence = cfg.confidence;
  out.timestamps = cfg.contribution_timestamps;
  out.retained = static_cast<Index>(
      std::count(ok.begin(), ok.end(), static_cast<char>(1)));
  out.skipped = n_draws - out.retained;
  if (double(out.skipped) > 0.2 * double(n_draws))
    throw PropagationError("propagate: more than 20% of draws produced a degenerate model");

  out.t2 = Matrix(out.retained, n_mon);
  out.spe = Matrix(out.retained, n_mon);
  out.t2_limits = Vector(out.retained);
  out.spe_limits = Vector(out.retained);
  out.contrib_t2.assign(static_cast<std::size_t>(n_ts), Matrix(out.retained, p));
  out.contrib_spe.assign(static_cast<std::size_t>(n_ts), Matrix(out.retained, p));
  Index r = 0;
  for (Index i = 0; i < n_draws; ++i) {
    if (!ok[static_cast<std::size_t>(i)]) continue;
    out.t2.row(r) = t2_all.row(i);
    out.spe.row(r) = spe_all.row(i);
    out.t2_limits[r] = t2_lim[i];
    out.spe_limits[r] = spe_lim[i];
    for (Index t = 0; t < n_ts; ++t) {
      out.contrib_t2[static_cast<std::size_t>(t)].row(r) = ct2[static_cast<std::size_t>(t)].row(i);
      out.contrib_spe[static_cast<std::size_t>(t)].row(r) = cspe[static_cast<std::size_t>(t)].row(i);
    }
    ++r;
  }
  return out;
}

namespace detail {

struct ColumnSummary {
  double mean, median, lower, upper;
};

inline ColumnSummary summarize_column(const Vector& v, double alpha) {
  std::vector<double> vals(v.data(), v.data() + v.size());
  ColumnSummary s;
  s.mean = mean_of(vals);
  s.median = median_of(vals);
  s.lower = quantile_linear(vals, alpha / 2.0);
  s.upper = quantile_linear(vals, 1.0 - alpha / 2.0);
  return s;
}

}  // namespace detail

inline ProbabilisticChart summarize_chart(const DrawStatistics& stats,
                                          ChartKind kind, double alpha) {
  if (stats.retained < 1)
    throw InputError("summarize_chart: no retained draws");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InputError("summarize_chart: credible level outside (0,1)");
  const Matrix& values = kind == ChartKind::T2 ? stats.t2 : stats.spe;
  const Vector& limits = kind == ChartKind::T2 ? stats.t2_limits : stats.spe_limits;

  ProbabilisticChart chart;
  chart.kind = kind;
  chart.credible_level = alpha;
  const Index n = values.cols();
  chart.mean = Vector(n);
  chart.median = Vector(n);
  chart.lower = Vector(n);
  chart.upper = Vector(n);
  for (Index t = 0; t < n; ++t) {
    const auto s = detail::summarize_column(values.col(t), alpha);
    chart.mean[t] = s.mean;
    chart.median[t] = s.median;
    chart.lower[t] = s.lower;
    chart.upper[t] = s.upper;
  }
  const auto lim = detail::summarize_column(limits, alpha);
  chart.limit_mean = lim.mean;
  chart.limit_lower = lim.lower;
  chart.limit_upper = lim.upper;
  return chart;
}

inline ContributionBand summarize_contributions(const DrawStatistics& stats,
                                                Index timestamp, ChartKind kind,
                                                double alpha) {
  if (stats.retained < 1)
    throw InputError("summarize_contributions: no retained draws");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InputError("summarize_contributions: credible level outside (0,1)");
  const auto it =
      std::find(stats.timestamps.begin(), stats.timestamps.end(), timestamp);
  if (it == stats.timestamps.end())
    throw InputError("summarize_contributions: timestamp was not diagnosed");
  const std::size_t slot =
      static_cast<std::size_t>(it - stats.timestamps.begin());
  const Matrix& values =
      kind == ChartKind::T2 ? stats.contrib_t2[slot] : stats.contrib_spe[slot];

  ContributionBand band;
  band.kind = kind;
  band.timestamp = timestamp;
  band.credible_level = alpha;
  const Index p = values.cols();
  band.mean = Vector(p);
  band.lower = Vector(p);
  band.upper = Vector(p);
  for (Index d = 0; d < p; ++d) {
    const auto s = detail::summarize_column(values.col(d), alpha);
    band.mean[d] = s.mean;
    band.lower[d] = s.lower;
    band.upper[d] = s.upper;
  }
  band.ranking.resize(static_cast<std::size_t>(p));
  std::iota(band.ranking.begin(), band.ranking.end(), Index{0});
  std::stable_sort(band.ranking.begin(), band.ranking.end(),
                   [&band](Index a, Index b) {
                     return std::abs(band.mean[a]) > std::abs(band.mean[b]);
                   });
  return band;
}

// Deterministic chart at the log-space mean of the post-burn-in draws.
inline DeterministicChart posterior_mean_chart(
    const Chain& chain, const Matrix& X_healthy, const Matrix& X_monitor,
    const RetentionPolicy& policy, const KernelSpec& spec,
    const PropagateConfig& cfg = PropagateConfig{}) {
  const Index n_draws = chain.draws.rows() - chain.burn_in;
  if (n_draws < 1)
    throw InputError("posterior_mean_chart: need at least one post-burn-in draw");
  const Vector theta_bar =
      chain.draws.bottomRows(n_draws).colwise().mean().transpose();
  return run_deterministic_chart(spec, theta_bar, X_healthy, X_monitor, policy,
                                 cfg);
}

}  // namespace kmspc

#endif  // KMSPC_PROPAGATE_HPP
