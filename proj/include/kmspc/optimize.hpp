#ifndef KMSPC_OPTIMIZE_HPP
#define KMSPC_OPTIMIZE_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "kmspc/common.hpp"

namespace kmspc {

// An objective to maximize. `subset_value`, when present, evaluates the same
// objective restricted to a subset of sample indices; optimizers that exploit
// sample structure (Kernel Flows) use it, all others ignore it.
struct Objective {
  std::function<double(const Vector&)> value;
  std::function<double(const Vector&, const std::vector<Index>&)> subset_value;
  Index n_samples = 0;
};

enum class OptimizerMethod { LBFGS, NelderMead, GeneticAlgorithm, KernelFlows };

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::LBFGS;
  int max_iters = 0;  // 0 selects the per-method default
  double convergence_tol = 1e-8;
  std::uint64_t seed = 0;
  int workers = 1;

  double fd_step = 1e-5;
  int lbfgs_memory = 8;

  double simplex_scale = 0.5;

  int population = 30;
  int tournament = 3;
  double mutation_sd = 0.1;
  double crossover_rate = 0.7;
  double init_spread = 0.5;

  double batch_fraction = 0.5;
  double kf_step = 0.05;

  int default_iters() const {
    switch (method) {
      case OptimizerMethod::LBFGS: return 100;
      case OptimizerMethod::NelderMead: return 400;
      case OptimizerMethod::GeneticAlgorithm: return 100;
      case OptimizerMethod::KernelFlows: return 200;
    }
    return 100;
  }
};

struct OptimizeResult {
  Vector x;
  double f = -std::numeric_limits<double>::infinity();
  std::vector<double> loss_trace;  // negated objective, per accepted step
  bool converged = false;
};

// Central finite differences; also the gradient every optimizer here uses.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f,
                          const Vector& x, double step, int workers = 1) {
  Vector g(x.size());
  parallel_for(x.size(), workers, [&](Index d) {
    Vector xp = x, xm = x;
    xp[d] += step;
    xm[d] -= step;
    g[d] = (f(xp) - f(xm)) / (2.0 * step);
  });
  return g;
}

namespace detail {

inline double safe_value(const std::function<double(const Vector&)>& f,
                         const Vector& x) {
  const double v = f(x);
  return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
}

inline OptimizeResult lbfgs_maximize(const Objective& obj,
                                     const OptimizerConfig& cfg,
                                     const Vector& init) {
  const int max_iters = cfg.max_iters > 0 ? cfg.max_iters : cfg.default_iters();
  auto g = [&](const Vector& x) { return -safe_value(obj.value, x); };

  Vector x = init;
  double gx = g(x);
  OptimizeResult res;
  res.loss_trace.push_back(gx);
  Vector grad = -fd_gradient(obj.value, x, cfg.fd_step, cfg.workers);

  std::vector<Vector> s_hist, y_hist;
  std::vector<double> rho_hist;

  for (int iter = 0; iter < max_iters; ++iter) {
    if (!grad.allFinite()) break;

    // Two-loop recursion.
    Vector q = grad;
    const int m = static_cast<int>(s_hist.size());
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vector dir = -q;
    double slope = grad.dot(dir);
    if (slope > -1e-14 * std::max(1.0, grad.norm() * dir.norm())) {
      dir = -grad;
      slope = grad.dot(dir);
    }

    double t = 1.0;
    if (iter == 0) {
      const double gn = grad.template lpNorm<Eigen::Infinity>();
      if (gn > 1.0) t = 1.0 / gn;
    }
    double gx_new = std::numeric_limits<double>::infinity();
    Vector x_new;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = x + t * dir;
      gx_new = g(x_new);
      if (gx_new <= gx + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      res.converged = grad.template lpNorm<Eigen::Infinity>() < 1e-6;
      break;
    }

    Vector grad_new = -fd_gradient(obj.value, x_new, cfg.fd_step, cfg.workers);
    Vector s = x_new - x;
    Vector yv = grad_new - grad;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.lbfgs_memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }

    const double delta = gx - gx_new;
    x = std::move(x_new);
    gx = gx_new;
    grad = std::move(grad_new);
    res.loss_trace.push_back(gx);

    if (grad.template lpNorm<Eigen::Infinity>() < 1e-7 ||
        delta <= cfg.convergence_tol * (1.0 + std::abs(gx))) {
      res.converged = true;
      break;
    }
  }

  res.x = x;
  res.f = -gx;
  return res;
}

inline OptimizeResult nelder_mead_maximize(const Objective& obj,
                                           const OptimizerConfig& cfg,
                                           const Vector& init) {
  const int max_iters = cfg.max_iters > 0 ? cfg.max_iters : cfg.default_iters();
  auto g = [&](const Vector& x) { return -safe_value(obj.value, x); };
  const Index m = init.size();

  std::vector<Vector> verts(m + 1, init);
  std::vector<double> vals(m + 1);
  for (Index d = 0; d < m; ++d) verts[d + 1][d] += cfg.simplex_scale;
  for (Index i = 0; i <= m; ++i) vals[i] = g(verts[i]);

  auto order = [&] {
    std::vector<Index> idx(m + 1);
    for (Index i = 0; i <= m; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](Index a, Index b) { return vals[a] < vals[b]; });
    std::vector<Vector> nv(m + 1);
    std::vector<double> nf(m + 1);
    for (Index i = 0; i <= m; ++i) {
      nv[i] = verts[idx[i]];
      nf[i] = vals[idx[i]];
    }
    verts = std::move(nv);
    vals = std::move(nf);
  };
  order();

  OptimizeResult res;
  res.loss_trace.push_back(vals[0]);

  for (int iter = 0; iter < max_iters; ++iter) {
    Vector centroid = Vector::Zero(m);
    for (Index i = 0; i < m; ++i) centroid += verts[i];
    centroid /= double(m);

    const Vector xr = centroid + (centroid - verts[m]);
    const double fr = g(xr);
    if (fr < vals[0]) {
      const Vector xe = centroid + 2.0 * (centroid - verts[m]);
      const double fe = g(xe);
      if (fe < fr) {
        verts[m] = xe;
        vals[m] = fe;
      } else {
        verts[m] = xr;
        vals[m] = fr;
      }
    } else if (fr < vals[m - 1]) {
      verts[m] = xr;
      vals[m] = fr;
    } else {
      const bool outside = fr < vals[m];
      Vector xc = centroid - 0.5 * (centroid - verts[m]);
      if (outside) xc = centroid + 0.5 * (centroid - verts[m]);
      const double fc = g(xc);
      if (fc < (outside ? fr : vals[m])) {
        verts[m] = xc;
        vals[m] = fc;
      } else {
        for (Index i = 1; i <= m; ++i) {
          verts[i] = verts[0] + 0.5 * (verts[i] - verts[0]);
          vals[i] = g(verts[i]);
        }
      }
    }
    order();
    res.loss_trace.push_back(vals[0]);
    if (vals[m] - vals[0] <= cfg.convergence_tol * (1.0 + std::abs(vals[0]))) {
      res.converged = true;
      break;
    }
  }

  res.x = verts[0];
  res.f = -vals[0];
  return res;
}

inline OptimizeResult ga_maximize(const Objective& obj,
                                  const OptimizerConfig& cfg,
                                  const Vector& init) {
  const int generations = cfg.max_iters > 0 ? cfg.max_iters : cfg.default_iters();
  const Index m = init.size();
  const int P = std::max(2, cfg.population);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, P - 1);

  std::vector<Vector> pop(P);
  std::vector<double> fit(P);
  pop[0] = init;
  for (int i = 1; i < P; ++i) {
    pop[i] = init;
    for (Index d = 0; d < m; ++d) pop[i][d] += cfg.init_spread * gauss(rng);
  }
  auto evaluate = [&] {
    parallel_for(P, cfg.workers,
                 [&](Index i) { fit[i] = safe_value(obj.value, pop[i]); });
  };
  evaluate();

  OptimizeResult res;
  int best_i = int(std::max_element(fit.begin(), fit.end()) - fit.begin());
  Vector best_x = pop[best_i];
  double best_f = fit[best_i];
  res.loss_trace.push_back(-best_f);

  auto tournament = [&]() -> int {
    int winner = pick(rng);
    for (int t = 1; t < cfg.tournament; ++t) {
      const int c = pick(rng);
      if (fit[c] > fit[winner]) winner = c;
    }
    return winner;
  };

  int stale = 0;
  for (int gen = 0; gen < generations; ++gen) {
    std::vector<Vector> next(P);
    next[0] = best_x;
    for (int i = 1; i < P; ++i) {
      const Vector& a = pop[tournament()];
      const Vector& b = pop[tournament()];
      Vector child = a;
      if (unif(rng) < cfg.crossover_rate)
        for (Index d = 0; d < m; ++d) {
          const double alpha = unif(rng);
          child[d] = alpha * a[d] + (1.0 - alpha) * b[d];
        }
      for (Index d = 0; d < m; ++d) child[d] += cfg.mutation_sd * gauss(rng);
      next[i] = std::move(child);
    }
    pop = std::move(next);
    evaluate();
    fit[0] = best_f;

    const int gi = int(std::max_element(fit.begin(), fit.end()) - fit.begin());
    if (fit[gi] > best_f) {
      if (fit[gi] - best_f > cfg.convergence_tol * (1.0 + std::abs(best_f)))
        stale = 0;
      best_f = fit[gi];
      best_x = pop[gi];
    } else {
      ++stale;
    }
    res.loss_trace.push_back(-best_f);
    if (stale >= 30) {
      res.converged = true;
      break;
    }
  }

  res.x = best_x;
  res.f = best_f;
  return res;
}

// Sample indices 0..n-1 without replacement, first `count` of a partial
// Fisher-Yates pass, so the draw depends only on the RNG state.
inline std::vector<Index> sample_indices(Index n, Index count,
                                         std::mt19937_64& rng) {
  std::vector<Index> idx(n);
  for (Index i = 0; i < n; ++i) idx[i] = i;
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

inline OptimizeResult kernel_flows_maximize(const Objective& obj,
                                            const OptimizerConfig& cfg,
                                            const Vector& init) {
  const int iters = cfg.max_iters > 0 ? cfg.max_iters : cfg.default_iters();
  std::mt19937_64 rng(cfg.seed);
  const bool has_samples = static_cast<bool>(obj.subset_value) && obj.n_samples >= 4;

  Vector x = init;
  double fx = safe_value(obj.value, x);
  OptimizeResult res;
  Vector best_x = x;
  double best_f = fx;
  res.loss_trace.push_back(-best_f);

  int tiny_steps = 0;
  for (int iter = 0; iter < iters; ++iter) {
    Vector grad;
    if (has_samples) {
      const Index n = obj.n_samples;
      const Index batch_n = std::max<Index>(
          2, static_cast<Index>(std::llround(cfg.batch_fraction * double(n))));
      auto batch = sample_indices(n, batch_n, rng);
      std::vector<Index> sub(batch.begin(), batch.begin() + std::max<Index>(1, batch_n / 2));
      // rho = 1 - objective(sub) / objective(batch), descended by SGD.
      auto rho = [&](const Vector& v) {
        const double fb = obj.subset_value(v, batch);
        const double fs = obj.subset_value(v, sub);
        if (!std::isfinite(fb) || !std::isfinite(fs) || std::abs(fb) < 1e-12)
          return std::numeric_limits<double>::infinity();
        return 1.0 - fs / fb;
      };
      if (!std::isfinite(rho(x))) continue;
      grad = -fd_gradient(rho, x, cfg.fd_step, cfg.workers);
    } else {
      grad = fd_gradient(obj.value, x, cfg.fd_step, cfg.workers);
    }
    if (!grad.allFinite()) break;
    x += cfg.kf_step * grad;
    fx = safe_value(obj.value, x);
    if (fx > best_f) {
      best_f = fx;
      best_x = x;
    }
    res.loss_trace.push_back(-best_f);
    if (cfg.kf_step * grad.template lpNorm<Eigen::Infinity>() <
        cfg.convergence_tol * 10.0) {
      if (++tiny_steps >= 20) {
        res.converged = true;
        break;
      }
    } else {
      tiny_steps = 0;
    }
  }

  res.x = best_x;
  res.f = best_f;
  return res;
}

}  // namespace detail

inline OptimizeResult maximize(const Objective& obj, const OptimizerConfig& cfg,
                               const Vector& init) {
  if (!obj.value) throw InputError("maximize: objective has no value function");
  const double f0 = detail::safe_value(obj.value, init);
  if (!std::isfinite(f0))
    throw InputError("maximize: objective non-finite at the initial point");

  OptimizeResult res;
  switch (cfg.method) {
    case OptimizerMethod::LBFGS:
      res = detail::lbfgs_maximize(obj, cfg, init);
      break;
    case OptimizerMethod::NelderMead:
      res = detail::nelder_mead_maximize(obj, cfg, init);
      break;
    case OptimizerMethod::GeneticAlgorithm:
      res = detail::ga_maximize(obj, cfg, init);
      break;
    case OptimizerMethod::KernelFlows:
      res = detail::kernel_flows_maximize(obj, cfg, init);
      break;
  }
  if (res.f < f0) {
    res.x = init;
    res.f = f0;
  }
  return res;
}

}  // namespace kmspc

#endif  // KMSPC_OPTIMIZE_HPP
