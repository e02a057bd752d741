#ifndef KMSPC_MCMC_HPP
#define KMSPC_MCMC_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "kmspc/common.hpp"

namespace kmspc {

using TargetFn = std::function<double(const Vector&)>;

enum class SamplerKind { AM, DRAM, HMC, NUTS };

inline const char* sampler_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::AM: return "am";
    case SamplerKind::DRAM: return "dram";
    case SamplerKind::HMC: return "hmc";
    case SamplerKind::NUTS: return "nuts";
  }
  return "?";
}

inline SamplerKind parse_sampler(const std::string& s) {
  if (s == "am") return SamplerKind::AM;
  if (s == "dram") return SamplerKind::DRAM;
  if (s == "hmc") return SamplerKind::HMC;
  if (s == "nuts") return SamplerKind::NUTS;
  throw InputError("unknown sampler: " + s);
}

struct PriorSpec {
  Vector means;
  Vector sds;
};

inline void validate_prior(const PriorSpec& prior) {
  if (prior.means.size() != prior.sds.size())
    throw InputError("prior means and sds differ in length");
  for (Index i = 0; i < prior.sds.size(); ++i)
    if (!(prior.sds[i] > 0.0)) throw InputError("prior sds must be positive");
}

struct LogPosterior {
  PriorSpec prior;
  TargetFn log_likelihood;
};

// Independent Gaussian priors on each log-parameter plus the likelihood.
// Non-finite likelihood values collapse to -inf so samplers reject them.
inline double log_posterior(const LogPosterior& lp, const Vector& theta_log) {
  validate_prior(lp.prior);
  if (theta_log.size() != lp.prior.means.size())
    throw InputError("log_posterior: parameter length mismatch");
  double v = 0.0;
  for (Index j = 0; j < theta_log.size(); ++j) {
    const double z = (theta_log[j] - lp.prior.means[j]) / lp.prior.sds[j];
    v += -std::log(lp.prior.sds[j]) - 0.5 * std::log(2.0 * M_PI) - 0.5 * z * z;
  }
  if (lp.log_likelihood) {
    const double ll = lp.log_likelihood(theta_log);
    if (std::isnan(ll)) return -std::numeric_limits<double>::infinity();
    v += ll;
  }
  return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
}

struct Chain {
  Matrix draws;       // M x m, draw 0 is the initial point
  Vector log_post;    // length M
  double acceptance_rate = 0.0;
  SamplerKind sampler = SamplerKind::AM;
  std::uint64_t seed = 0;
  Index burn_in = 0;
};

struct AmConfig {
  Index n_draws = 5000;
  double burn_in_fraction = 0.4;
  double init_cov_scale = 0.1;
  Index adapt_start = 200;
  double epsilon_reg = 1e-6;
  std::uint64_t seed = 0;
};

struct DramConfig : AmConfig {
  double stage2_scale = 0.2;
};

struct HmcConfig {
  Index n_draws = 1000;
  double burn_in_fraction = 0.2;
  double step_size = 0.0;  // 0 requests the crude 100-iteration warm-up
  int n_leapfrog = 20;
  Vector mass_diag;        // empty means unit masses
  double fd_step = 1e-5;
  std::uint64_t seed = 0;
};

struct NutsConfig {
  Index n_draws = 1000;
  double burn_in_fraction = 0.2;
  double step_size = 0.0;
  int max_tree_depth = 10;
  double divergence_threshold = 1000.0;
  Vector mass_diag;
  double fd_step = 1e-5;
  std::uint64_t seed = 0;
};

namespace detail {

inline Index burn_count(Index n_draws, double fraction) {
  Index b = static_cast<Index>(std::llround(fraction * double(n_draws)));
  if (b < 0) b = 0;
  if (b >= n_draws) b = n_draws - 1;
  return b;
}

inline double require_finite_init(const TargetFn& target, const Vector& init) {
  const double v = target(init);
  if (!std::isfinite(v))
    throw InputError("sampler: log posterior not finite at the initial point");
  return v;
}

// Streaming mean and scatter for the adaptive proposal covariance.
struct RunningCov {
  Index count = 0;
  Vector mean;
  Matrix scatter;

  void init(Index m) {
    mean = Vector::Zero(m);
    scatter = Matrix::Zero(m, m);
  }
  void add(const Vector& x) {
    ++count;
    const Vector delta = x - mean;
    mean += delta / double(count);
    scatter += delta * (x - mean).transpose();
  }
  Matrix cov() const { return scatter / double(count - 1); }
};

struct AmState {
  std::mt19937_64 rng;
  std::normal_distribution<double> gauss{0.0, 1.0};
  std::uniform_real_distribution<double> unif{0.0, 1.0};
  RunningCov hist;

  explicit AmState(std::uint64_t seed) : rng(seed) {}

  Vector normal_vec(Index m) {
    Vector z(m);
    for (Index i = 0; i < m; ++i) z[i] = gauss(rng);
    return z;
  }
};

inline Matrix proposal_chol(const AmState& st, const AmConfig& cfg, Index t,
                            Index m) {
  if (t <= cfg.adapt_start || st.hist.count < 2)
    return cfg.init_cov_scale * Matrix::Identity(m, m);
  Matrix S = (2.38 * 2.38 / double(m)) * st.hist.cov() +
             cfg.epsilon_reg * Matrix::Identity(m, m);
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success)
    return cfg.init_cov_scale * Matrix::Identity(m, m);
  return llt.matrixL();
}

}  // namespace detail

inline Chain sample_am(const TargetFn& target, const Vector& init,
                       const AmConfig& cfg) {
  const Index m = init.size();
  const Index M = cfg.n_draws;
  if (M < 1) throw InputError("sample_am: n_draws must be positive");
  double lp_cur = detail::require_finite_init(target, init);

  Chain chain;
  chain.sampler = SamplerKind::AM;
  chain.seed = cfg.seed;
  chain.burn_in = detail::burn_count(M, cfg.burn_in_fraction);
  chain.draws = Matrix(M, m);
  chain.log_post = Vector(M);
  chain.draws.row(0) = init.transpose();
  chain.log_post[0] = lp_cur;

  detail::AmState st(cfg.seed);
  st.hist.init(m);
  st.hist.add(init);

  Vector x = init;
  Index accepted = 0;
  for (Index t = 1; t < M; ++t) {
    const Matrix L = detail::proposal_chol(st, cfg, t, m);
    const Vector prop = x + L * st.normal_vec(m);
    const double lp_prop = target(prop);
    const double log_u = std::log(st.unif(st.rng));
    if (log_u < lp_prop - lp_cur) {
      x = prop;
      lp_cur = lp_prop;
      ++accepted;
    }
    chain.draws.row(t) = x.transpose();
    chain.log_post[t] = lp_cur;
    st.hist.add(x);
  }
  chain.acceptance_rate = M > 1 ? double(accepted) / double(M - 1) : 0.0;
  return chain;
}

inline Chain sample_am(const LogPosterior& lp, const Vector& init,
                       const AmConfig& cfg) {
  return sample_am([&lp](const Vector& v) { return log_posterior(lp, v); },
                   init, cfg);
}

// Two-stage delayed rejection on top of the AM proposal. Stage one is
// byte-identical to AM; the second stage fires only after a rejection, so a
// never-rejecting target reproduces the AM trajectory for the same seed.
inline Chain sample_dram(const TargetFn& target, const Vector& init,
                         const DramConfig& cfg) {
  const Index m = init.size();
  const Index M = cfg.n_draws;
  if (M < 1) throw InputError("sample_dram: n_draws must be positive");
  double lp_cur = detail::require_finite_init(target, init);

  Chain chain;
  chain.sampler = SamplerKind::DRAM;
  chain.seed = cfg.seed;
  chain.burn_in = detail::burn_count(M, cfg.burn_in_fraction);
  chain.draws = Matrix(M, m);
  chain.log_post = Vector(M);
  chain.draws.row(0) = init.transpose();
  chain.log_post[0] = lp_cur;

  detail::AmState st(cfg.seed);
  st.hist.init(m);
  st.hist.add(init);

  Vector x = init;
  Index accepted = 0;
  for (Index t = 1; t < M; ++t) {
    const Matrix L = detail::proposal_chol(st, cfg, t, m);
    const Vector y1 = x + L * st.normal_vec(m);
    const double lp_y1 = target(y1);
    const double log_u1 = std::log(st.unif(st.rng));
    if (log_u1 < lp_y1 - lp_cur) {
      x = y1;
      lp_cur = lp_y1;
      ++accepted;
    } else {
      // Stage 2: narrower proposal, reversibility-preserving acceptance.
      const Vector y2 = x + cfg.stage2_scale * (L * st.normal_vec(m));
      const double lp_y2 = target(y2);
      const double log_u2 = std::log(st.unif(st.rng));
      if (std::isfinite(lp_y2)) {
        auto solve_L = [&L](const Vector& v) -> Vector {
          return L.triangularView<Eigen::Lower>().solve(v);
        };
        const double q_back = -0.5 * solve_L(y1 - y2).squaredNorm();
        const double q_fwd = -0.5 * solve_L(y1 - x).squaredNorm();
        // log(1 - alpha1) terms of the delayed-rejection ratio
        const double d_back = std::min(0.0, lp_y1 - lp_y2);
        const double d_fwd = std::min(0.0, lp_y1 - lp_cur);
        double log_alpha2 = -std::numeric_limits<double>::infinity();
        if (d_back < 0.0 && d_fwd < 0.0) {
          log_alpha2 = (lp_y2 - lp_cur) + (q_back - q_fwd) +
                       std::log1p(-std::exp(d_back)) -
                       std::log1p(-std::exp(d_fwd));
        }
        if (log_u2 < log_alpha2) {
          x = y2;
          lp_cur = lp_y2;
          ++accepted;
        }
      }
    }
    chain.draws.row(t) = x.transpose();
    chain.log_post[t] = lp_cur;
    st.hist.add(x);
  }
  chain.acceptance_rate = M > 1 ? double(accepted) / double(M - 1) : 0.0;
  return chain;
}

inline Chain sample_dram(const LogPosterior& lp, const Vector& init,
                         const DramConfig& cfg) {
  return sample_dram([&lp](const Vector& v) { return log_posterior(lp, v); },
                     init, cfg);
}

inline Vector target_gradient(const TargetFn& target, const Vector& x,
                              double fd_step) {
  Vector g(x.size());
  for (Index d = 0; d < x.size(); ++d) {
    Vector xp = x, xm = x;
    xp[d] += fd_step;
    xm[d] -= fd_step;
    g[d] = (target(xp) - target(xm)) / (2.0 * fd_step);
  }
  return g;
}

inline double kinetic_energy(const Vector& p, const Vector& mass_diag) {
  double k = 0.0;
  for (Index i = 0; i < p.size(); ++i) k += p[i] * p[i] / mass_diag[i];
  return 0.5 * k;
}

inline double hamiltonian(const TargetFn& target, const Vector& x,
                          const Vector& p, const Vector& mass_diag) {
  return -target(x) + kinetic_energy(p, mass_diag);
}

struct PhasePoint {
  Vector x;
  Vector p;
};

inline PhasePoint leapfrog(const TargetFn& target, Vector x, Vector p,
                           double step, int n_steps, const Vector& mass_diag,
                           double fd_step) {
  if (n_steps <= 0) return {std::move(x), std::move(p)};
  Vector g = target_gradient(target, x, fd_step);
  for (int s = 0; s < n_steps; ++s) {
    p += 0.5 * step * g;
    for (Index i = 0; i < x.size(); ++i) x[i] += step * p[i] / mass_diag[i];
    g = target_gradient(target, x, fd_step);
    p += 0.5 * step * g;
  }
  return {std::move(x), std::move(p)};
}

// U-turn test: the trajectory endpoints stop moving apart when the
// displacement projected on either end's velocity turns negative.
inline bool uturn(const Vector& x_minus, const Vector& x_plus,
                  const Vector& p_minus, const Vector& p_plus,
                  const Vector& mass_diag) {
  const Vector dx = x_plus - x_minus;
  double fwd = 0.0, bwd = 0.0;
  for (Index i = 0; i < dx.size(); ++i) {
    fwd += dx[i] * p_plus[i] / mass_diag[i];
    bwd += dx[i] * p_minus[i] / mass_diag[i];
  }
  return fwd < 0.0 || bwd < 0.0;
}

namespace detail {

inline Vector mass_or_unit(const Vector& mass_diag, Index m) {
  if (mass_diag.size() == 0) return Vector::Ones(m);
  if (mass_diag.size() != m)
    throw InputError("mass_diag length does not match parameter count");
  for (Index i = 0; i < m; ++i)
    if (!(mass_diag[i] > 0.0)) throw InputError("mass_diag must be positive");
  return mass_diag;
}

// Crude step-size warm-up: 100 trial transitions, multiplicative update
// toward 65% acceptance, then frozen. Runs on its own RNG stream.
inline double tune_step_size(const TargetFn& target, const Vector& init,
                             int n_leapfrog, const Vector& mass,
                             double fd_step, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x7a3du));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double step = 0.1;
  Vector x = init;
  double lp_x = target(x);
  for (int it = 0; it < 100; ++it) {
    Vector p(x.size());
    for (Index i = 0; i < x.size(); ++i) p[i] = std::sqrt(mass[i]) * gauss(rng);
    const double h0 = -lp_x + kinetic_energy(p, mass);
    auto prop = leapfrog(target, x, p, step, std::max(1, n_leapfrog), mass, fd_step);
    const double lp_prop = target(prop.x);
    const double h1 = -lp_prop + kinetic_energy(prop.p, mass);
    double alpha = 0.0;
    if (std::isfinite(h1)) alpha = std::min(1.0, std::exp(h0 - h1));
    if (unif(rng) < alpha) {
      x = std::move(prop.x);
      lp_x = lp_prop;
    }
    step *= std::exp(0.15 * (alpha - 0.65));
    step = std::min(std::max(step, 1e-6), 10.0);
  }
  return step;
}

}  // namespace detail

inline Chain sample_hmc(const TargetFn& target, const Vector& init,
                        const HmcConfig& cfg) {
  const Index m = init.size();
  const Index M = cfg.n_draws;
  if (M < 1) throw InputError("sample_hmc: n_draws must be positive");
  double lp_cur = detail::require_finite_init(target, init);
  const Vector mass = detail::mass_or_unit(cfg.mass_diag, m);
  const double step =
      cfg.step_size > 0.0
          ? cfg.step_size
          : detail::tune_step_size(target, init, cfg.n_leapfrog, mass,
                                   cfg.fd_step, cfg.seed);

  Chain chain;
  chain.sampler = SamplerKind::HMC;
  chain.seed = cfg.seed;
  chain.burn_in = detail::burn_count(M, cfg.burn_in_fraction);
  chain.draws = Matrix(M, m);
  chain.log_post = Vector(M);
  chain.draws.row(0) = init.transpose();
  chain.log_post[0] = lp_cur;

  std::mt19937_64 rng(derive_seed(cfg.seed, 1));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Vector x = init;
  Index accepted = 0;
  for (Index t = 1; t < M; ++t) {
    Vector p(m);
    for (Index i = 0; i < m; ++i) p[i] = std::sqrt(mass[i]) * gauss(rng);
    const double h0 = -lp_cur + kinetic_energy(p, mass);
    auto prop = leapfrog(target, x, p, step, cfg.n_leapfrog, mass, cfg.fd_step);
    const double lp_prop = target(prop.x);
    const double h1 = -lp_prop + kinetic_energy(prop.p, mass);
    const double log_u = std::log(unif(rng));
    if (std::isfinite(h1) && prop.x.allFinite() && log_u < h0 - h1) {
      x = std::move(prop.x);
      lp_cur = lp_prop;
      ++accepted;
    }
    chain.draws.row(t) = x.transpose();
    chain.log_post[t] = lp_cur;
  }
  chain.acceptance_rate = M > 1 ? double(accepted) / double(M - 1) : 0.0;
  return chain;
}

inline Chain sample_hmc(const LogPosterior& lp, const Vector& init,
                        const HmcConfig& cfg) {
  return sample_hmc([&lp](const Vector& v) { return log_posterior(lp, v); },
                    init, cfg);
}

namespace detail {

struct NutsTree {
  Vector x_minus, p_minus, x_plus, p_plus;
  Vector sample;
  double sample_lp = 0.0;
  double log_sum_w = -std::numeric_limits<double>::infinity();
  bool stop = false;  // divergence or internal U-turn
};

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

struct NutsContext {
  const TargetFn& target;
  const Vector& mass;
  double step;
  double fd_step;
  double h0;
  double divergence_threshold;
  std::mt19937_64& rng;
  std::uniform_real_distribution<double>& unif;
};

inline NutsTree nuts_leaf(NutsContext& ctx, const Vector& x, const Vector& p,
                          int direction) {
  auto next = leapfrog(ctx.target, x, p, direction > 0 ? ctx.step : -ctx.step,
                       1, ctx.mass, ctx.fd_step);
  NutsTree leaf;
  const double lp = ctx.target(next.x);
  const double h = -lp + kinetic_energy(next.p, ctx.mass);
  leaf.x_minus = next.x;
  leaf.p_minus = next.p;
  leaf.x_plus = next.x;
  leaf.p_plus = next.p;
  leaf.sample = std::move(next.x);
  leaf.sample_lp = lp;
  if (!std::isfinite(h) || h - ctx.h0 > ctx.divergence_threshold) {
    leaf.stop = true;
    leaf.log_sum_w = -std::numeric_limits<double>::infinity();
  } else {
    leaf.log_sum_w = ctx.h0 - h;
  }
  return leaf;
}

inline NutsTree nuts_build(NutsContext& ctx, const Vector& x, const Vector& p,
                           int direction, int depth) {
  if (depth == 0) return nuts_leaf(ctx, x, p, direction);
  NutsTree first = nuts_build(ctx, x, p, direction, depth - 1);
  if (first.stop) return first;
  NutsTree second =
      direction > 0
          ? nuts_build(ctx, first.x_plus, first.p_plus, direction, depth - 1)
          : nuts_build(ctx, first.x_minus, first.p_minus, direction, depth - 1);

  NutsTree merged;
  merged.x_minus = direction > 0 ? first.x_minus : second.x_minus;
  merged.p_minus = direction > 0 ? first.p_minus : second.p_minus;
  merged.x_plus = direction > 0 ? second.x_plus : first.x_plus;
  merged.p_plus = direction > 0 ? second.p_plus : first.p_plus;
  merged.log_sum_w = log_sum_exp(first.log_sum_w, second.log_sum_w);
  const double u = ctx.unif(ctx.rng);
  if (std::log(u) < second.log_sum_w - merged.log_sum_w) {
    merged.sample = second.sample;
    merged.sample_lp = second.sample_lp;
  } else {
    merged.sample = first.sample;
    merged.sample_lp = first.sample_lp;
  }
  merged.stop = second.stop || uturn(merged.x_minus, merged.x_plus,
                                     merged.p_minus, merged.p_plus, ctx.mass);
  return merged;
}

}  // namespace detail

inline Chain sample_nuts(const TargetFn& target, const Vector& init,
                         const NutsConfig& cfg) {
  const Index m = init.size();
  const Index M = cfg.n_draws;
  if (M < 1) throw InputError("sample_nuts: n_draws must be positive");
  double lp_cur = detail::require_finite_init(target, init);
  const Vector mass = detail::mass_or_unit(cfg.mass_diag, m);
  const double step =
      cfg.step_size > 0.0
          ? cfg.step_size
          : detail::tune_step_size(target, init, 1, mass, cfg.fd_step, cfg.seed);
  const int doublings = std::max(1, cfg.max_tree_depth);

  Chain chain;
  chain.sampler = SamplerKind::NUTS;
  chain.seed = cfg.seed;
  chain.burn_in = detail::burn_count(M, cfg.burn_in_fraction);
  chain.draws = Matrix(M, m);
  chain.log_post = Vector(M);
  chain.draws.row(0) = init.transpose();
  chain.log_post[0] = lp_cur;

  std::mt19937_64 rng(derive_seed(cfg.seed, 1));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Vector x = init;
  Index moved = 0;
  for (Index t = 1; t < M; ++t) {
    Vector p(m);
    for (Index i = 0; i < m; ++i) p[i] = std::sqrt(mass[i]) * gauss(rng);
    const double h0 = -lp_cur + kinetic_energy(p, mass);
    detail::NutsContext ctx{target, mass,  step, cfg.fd_step,
                            h0,     cfg.divergence_threshold, rng, unif};

    detail::NutsTree tree;
    tree.x_minus = x;
    tree.p_minus = p;
    tree.x_plus = x;
    tree.p_plus = p;
    tree.sample = x;
    tree.sample_lp = lp_cur;
    tree.log_sum_w = 0.0;  // weight of the start point relative to h0

    for (int depth = 0; depth < doublings; ++depth) {
      const int direction = unif(rng) < 0.5 ? -1 : 1;
      detail::NutsTree sub =
          direction > 0
              ? detail::nuts_build(ctx, tree.x_plus, tree.p_plus, direction, depth)
              : detail::nuts_build(ctx, tree.x_minus, tree.p_minus, direction, depth);
      if (sub.stop) break;
      const double total = detail::log_sum_exp(tree.log_sum_w, sub.log_sum_w);
      const double u = unif(rng);
      if (std::log(u) < sub.log_sum_w - total) {
        tree.sample = sub.sample;
        tree.sample_lp = sub.sample_lp;
      }
      tree.log_sum_w = total;
      if (direction > 0) {
        tree.x_plus = sub.x_plus;
        tree.p_plus = sub.p_plus;
      } else {
        tree.x_minus = sub.x_minus;
        tree.p_minus = sub.p_minus;
      }
      if (uturn(tree.x_minus, tree.x_plus, tree.p_minus, tree.p_plus, mass))
        break;
    }

    if ((tree.sample - x).squaredNorm() > 0.0) ++moved;
    x = tree.sample;
    lp_cur = tree.sample_lp;
    chain.draws.row(t) = x.transpose();
    chain.log_post[t] = lp_cur;
  }
  chain.acceptance_rate = M > 1 ? double(moved) / double(M - 1) : 0.0;
  return chain;
}

inline Chain sample_nuts(const LogPosterior& lp, const Vector& init,
                         const NutsConfig& cfg) {
  return sample_nuts([&lp](const Vector& v) { return log_posterior(lp, v); },
                     init, cfg);
}

struct EssReport {
  Vector ess;
  Vector iact;
  std::vector<bool> degenerate;
};

namespace detail {

inline double autocorrelation(const Vector& x, Index lag, double mean,
                              double denom) {
  const Index n = x.size();
  double s = 0.0;
  for (Index t = 0; t + lag < n; ++t) s += (x[t] - mean) * (x[t + lag] - mean);
  return s / denom;
}

}  // namespace detail

// Geyer initial-positive-sequence ESS: pair consecutive autocorrelations,
// sum while the pairs stay positive, tau = 2 * sum - 1.
inline EssReport ess(const Chain& chain, Index burn_in) {
  const Index N = chain.draws.rows() - burn_in;
  if (N < 100) throw InputError("ess: need at least 100 post-burn-in draws");
  const Index m = chain.draws.cols();
  EssReport rep;
  rep.ess = Vector(m);
  rep.iact = Vector(m);
  rep.degenerate.assign(static_cast<std::size_t>(m), false);

  for (Index j = 0; j < m; ++j) {
    const Vector x = chain.draws.col(j).tail(N);
    const double mean = x.mean();
    double denom = 0.0;
    for (Index t = 0; t < N; ++t) denom += (x[t] - mean) * (x[t] - mean);
    if (!(denom > 0.0)) {
      rep.ess[j] = 1.0;
      rep.iact[j] = double(N);
      rep.degenerate[static_cast<std::size_t>(j)] = true;
      continue;
    }
    double sum = 0.0;
    for (Index k = 0; 2 * k + 1 < N; ++k) {
      const double gamma = detail::autocorrelation(x, 2 * k, mean, denom) +
                           detail::autocorrelation(x, 2 * k + 1, mean, denom);
      if (gamma <= 0.0) break;
      sum += gamma;
    }
    double tau = 2.0 * sum - 1.0;
    // tau far below 1 means an antithetic, super-efficient chain: cap the
    // ESS at N and flag it rather than extrapolating past the sample size.
    if (tau < 0.5) rep.degenerate[static_cast<std::size_t>(j)] = true;
    if (tau < 1.0) tau = 1.0;
    if (tau > double(N)) tau = double(N);
    rep.iact[j] = tau;
    rep.ess[j] = std::min(double(N), std::max(1.0, double(N) / tau));
  }
  return rep;
}

struct ChainDiagnostics {
  bool stationary = true;
  Vector split_z;       // |mean difference| in pooled standard errors
  Matrix autocorr;      // (max_lag + 1) x m table, row k = lag k
  Index max_lag = 0;
};

inline ChainDiagnostics diagnostics(const Chain& chain) {
  const Index N = chain.draws.rows() - chain.burn_in;
  if (N < 200)
    throw InputError("diagnostics: need at least 200 post-burn-in draws");
  const Index m = chain.draws.cols();
  const Index half = N / 2;

  ChainDiagnostics d;
  d.split_z = Vector(m);
  d.max_lag = std::min<Index>(50, N / 4);
  d.autocorr = Matrix(d.max_lag + 1, m);

  Chain first, second;
  first.draws = chain.draws.middleRows(chain.burn_in, half);
  second.draws = chain.draws.middleRows(chain.burn_in + half, N - half);
  first.log_post = second.log_post = Vector::Zero(1);
  auto ess_a = ess(first, 0);
  auto ess_b = ess(second, 0);

  for (Index j = 0; j < m; ++j) {
    const Vector xa = first.draws.col(j);
    const Vector xb = second.draws.col(j);
    const double ma = xa.mean(), mb = xb.mean();
    const double va = (xa.array() - ma).square().sum() / double(xa.size() - 1);
    const double vb = (xb.array() - mb).square().sum() / double(xb.size() - 1);
    const double se =
        std::sqrt(va / ess_a.ess[j] + vb / ess_b.ess[j]);
    d.split_z[j] = se > 0.0 ? std::abs(ma - mb) / se
                            : (ma == mb ? 0.0 : std::numeric_limits<double>::infinity());
    if (d.split_z[j] > 3.0) d.stationary = false;

    const Vector x = chain.draws.col(j).tail(N);
    const double mean = x.mean();
    double denom = 0.0;
    for (Index t = 0; t < N; ++t) denom += (x[t] - mean) * (x[t] - mean);
    for (Index k = 0; k <= d.max_lag; ++k)
      d.autocorr(k, j) =
          denom > 0.0 ? detail::autocorrelation(x, k, mean, denom) : 0.0;
  }
  return d;
}

}  // namespace kmspc

#endif  // KMSPC_MCMC_HPP
