#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "kmspc/calibration.hpp"
#include "kmspc/mcmc.hpp"

using namespace kmspc;

namespace {

double std_normal_log(const Vector& x) { return -0.5 * x.squaredNorm(); }

double series_sd(const Vector& x) {
  const double m = x.mean();
  return std::sqrt((x.array() - m).square().sum() / double(x.size() - 1));
}

Chain wrap_series(const Vector& x) {
  Chain c;
  c.draws = Matrix(x.size(), 1);
  c.draws.col(0) = x;
  c.log_post = Vector::Zero(x.size());
  c.burn_in = 0;
  return c;
}

Vector post_burn_col(const Chain& c, Index j) {
  return c.draws.col(j).tail(c.draws.rows() - c.burn_in);
}

double pearson(const Vector& a, const Vector& b) {
  const double ma = a.mean(), mb = b.mean();
  const double num = ((a.array() - ma) * (b.array() - mb)).sum();
  const double den = std::sqrt((a.array() - ma).square().sum() *
                               (b.array() - mb).square().sum());
  return num / den;
}

void check_gaussian_recovery(const Chain& chain, const Vector& mu,
                             const Vector& var_diag) {
  const EssReport rep = ess(chain, chain.burn_in);
  for (Index j = 0; j < mu.size(); ++j) {
    REQUIRE(rep.ess[j] >= 200.0);
    const Vector x = post_burn_col(chain, j);
    const double mean = x.mean();
    const double sd = series_sd(x);
    const double se = sd / std::sqrt(rep.ess[j]);
    INFO("sampler " << sampler_name(chain.sampler) << " param " << j);
    REQUIRE(std::abs(mean - mu[j]) <= 3.0 * se);
    REQUIRE(sd * sd >= 0.85 * var_diag[j]);
    REQUIRE(sd * sd <= 1.15 * var_diag[j]);
  }
}

}  // namespace

TEST_CASE("log posterior reduces to the prior for a zero likelihood") {
  LogPosterior lp;
  lp.prior.means = Vector(3);
  lp.prior.means << 0.1, -0.3, 0.5;
  lp.prior.sds = Vector::Ones(3);
  lp.log_likelihood = [](const Vector&) { return 0.0; };

  const double at_mean = log_posterior(lp, lp.prior.means);
  REQUIRE(at_mean == Catch::Approx(-1.5 * std::log(2.0 * M_PI)).margin(1e-14));

  for (Index j = 0; j < 3; ++j) {
    Vector t = lp.prior.means;
    t[j] += 0.3;
    REQUIRE(log_posterior(lp, t) < at_mean);
    t[j] -= 0.6;
    REQUIRE(log_posterior(lp, t) < at_mean);
  }

  SECTION("narrower prior changes the normalizing constant") {
    lp.prior.sds = Vector::Constant(3, 0.5);
    REQUIRE(log_posterior(lp, lp.prior.means) ==
            Catch::Approx(3.0 * std::log(2.0) - 1.5 * std::log(2.0 * M_PI))
                .margin(1e-14));
  }
}

TEST_CASE("log posterior adds the gp marginal to the prior") {
  Matrix X(3, 2);
  X << 0.3, -1.1, 0.9, 0.2, -0.4, 0.6;
  Vector y(3);
  y << 0.5, -0.2, 1.0;
  const KernelSpec spec{KernelFamily::SE, 2};

  LogPosterior lp;
  lp.prior.means = Vector::Zero(3);
  lp.prior.sds = Vector::Constant(3, 0.5);
  lp.log_likelihood = [&](const Vector& t) {
    return gp_log_marginal(spec, KernelParams::from_vector(t), X, y);
  };

  Vector theta(3);
  theta << 0.2, -0.1, -1.0;
  double prior_part = 0.0;
  for (Index j = 0; j < 3; ++j) {
    const double z = (theta[j] - 0.0) / 0.5;
    prior_part += -std::log(0.5) - 0.5 * std::log(2.0 * M_PI) - 0.5 * z * z;
  }
  const double gp = gp_log_marginal(spec, KernelParams::from_vector(theta), X, y);
  REQUIRE(log_posterior(lp, theta) == Catch::Approx(prior_part + gp).margin(1e-12));

  SECTION("non-finite likelihood collapses to -inf") {
    lp.log_likelihood = [](const Vector&) {
      return std::numeric_limits<double>::quiet_NaN();
    };
    REQUIRE(log_posterior(lp, theta) == -std::numeric_limits<double>::infinity());
  }

  SECTION("invalid prior is rejected") {
    lp.prior.sds[1] = 0.0;
    REQUIRE_THROWS_AS(log_posterior(lp, theta), InputError);
    lp.prior.sds[1] = 0.5;
    lp.prior.means = Vector::Zero(2);
    REQUIRE_THROWS_AS(log_posterior(lp, theta), InputError);
  }
}

TEST_CASE("adaptive metropolis recovers standard normal moments") {
  AmConfig cfg;
  cfg.n_draws = 20000;
  cfg.seed = 42;
  Vector init = Vector::Constant(1, 0.5);
  const Chain chain = sample_am(TargetFn(std_normal_log), init, cfg);

  REQUIRE(chain.draws.rows() == 20000);
  REQUIRE(chain.draws(0, 0) == 0.5);
  REQUIRE(chain.burn_in == 8000);
  REQUIRE(chain.burn_in < chain.draws.rows());
  REQUIRE(chain.sampler == SamplerKind::AM);

  const Vector x = post_burn_col(chain, 0);
  REQUIRE(std::abs(x.mean()) < 0.05);
  REQUIRE(std::abs(series_sd(x) - 1.0) < 0.05);
  REQUIRE(chain.acceptance_rate > 0.1);
  REQUIRE(chain.acceptance_rate < 0.9);

  SECTION("stored log posterior matches re-evaluation") {
    for (Index i = 0; i < chain.draws.rows(); i += 997) {
      const Vector row = chain.draws.row(i).transpose();
      REQUIRE(std::abs(chain.log_post[i] - std_normal_log(row)) < 1e-10);
    }
  }

  SECTION("fixed seed reproduces the chain bitwise") {
    const Chain again = sample_am(TargetFn(std_normal_log), init, cfg);
    REQUIRE((again.draws - chain.draws).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((again.log_post - chain.log_post).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(again.acceptance_rate == chain.acceptance_rate);

    AmConfig other = cfg;
    other.seed = 43;
    const Chain different = sample_am(TargetFn(std_normal_log), init, other);
    REQUIRE((different.draws - chain.draws).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("metropolis acceptance edge cases") {
  AmConfig cfg;
  cfg.n_draws = 2000;
  cfg.seed = 9;
  Vector init(2);
  init << 0.3, -0.7;

  SECTION("flat target accepts every proposal") {
    const Chain chain =
        sample_am(TargetFn([](const Vector&) { return 0.0; }), init, cfg);
    REQUIRE(chain.acceptance_rate == 1.0);
  }

  SECTION("all mass at the initial point freezes the chain") {
    const Vector frozen = init;
    auto stub = [frozen](const Vector& x) {
      return (x - frozen).squaredNorm() == 0.0
                 ? 0.0
                 : -std::numeric_limits<double>::infinity();
    };
    const Chain chain = sample_am(TargetFn(stub), init, cfg);
    REQUIRE(chain.acceptance_rate == 0.0);
    for (Index i = 0; i < chain.draws.rows(); ++i)
      REQUIRE((chain.draws.row(i).transpose() - init).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("non-finite initial point is rejected up front") {
    auto stub = [](const Vector&) {
      return -std::numeric_limits<double>::infinity();
    };
    REQUIRE_THROWS_AS(sample_am(TargetFn(stub), init, cfg), InputError);
  }
}

namespace {

double correlated_gauss_log(const Vector& x) {
  // covariance [[1, 0.9], [0.9, 1]]
  const double det = 1.0 - 0.81;
  const double a = 1.0 / det, b = 0.9 / det;
  return -0.5 * (a * x[0] * x[0] - 2.0 * b * x[0] * x[1] + a * x[1] * x[1]);
}

}  // namespace

TEST_CASE("delayed rejection recovers a strong correlation") {
  DramConfig cfg;
  cfg.n_draws = 20000;
  cfg.seed = 7;
  const Vector init = Vector::Zero(2);
  const Chain dram = sample_dram(TargetFn(correlated_gauss_log), init, cfg);

  const Vector a = post_burn_col(dram, 0);
  const Vector b = post_burn_col(dram, 1);
  REQUIRE(std::abs(pearson(a, b) - 0.9) < 0.05);

  SECTION("delayed rejection only adds acceptances") {
    AmConfig am_cfg;
    am_cfg.n_draws = cfg.n_draws;
    am_cfg.seed = cfg.seed;
    const Chain am = sample_am(TargetFn(correlated_gauss_log), init, am_cfg);
    REQUIRE(dram.acceptance_rate >= am.acceptance_rate);
  }

  SECTION("fixed seed reproduces the chain bitwise") {
    const Chain again = sample_dram(TargetFn(correlated_gauss_log), init, cfg);
    REQUIRE((again.draws - dram.draws).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("dram with a never-rejecting target retraces am") {
  DramConfig cfg;
  cfg.n_draws = 3000;
  cfg.seed = 123;
  cfg.stage2_scale = 1.0;
  AmConfig am_cfg;
  am_cfg.n_draws = cfg.n_draws;
  am_cfg.seed = cfg.seed;

  // A flat target accepts every first-stage proposal, so the second stage
  // never fires and both samplers consume the random stream identically.
  const TargetFn flat = [](const Vector&) { return 0.0; };
  const Vector init = Vector::Zero(3);
  const Chain dram = sample_dram(flat, init, cfg);
  const Chain am = sample_am(flat, init, am_cfg);
  REQUIRE((dram.draws - am.draws).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(dram.acceptance_rate == 1.0);
}

TEST_CASE("hamiltonian sampler matches standard normal moments") {
  HmcConfig cfg;
  cfg.n_draws = 10000;
  cfg.step_size = 0.1;
  cfg.n_leapfrog = 20;
  cfg.seed = 5;
  const Vector init = Vector::Constant(1, 0.3);
  const Chain chain = sample_hmc(TargetFn(std_normal_log), init, cfg);

  REQUIRE(chain.draws(0, 0) == 0.3);
  REQUIRE(chain.burn_in == 2000);
  const Vector x = post_burn_col(chain, 0);
  const EssReport rep = ess(chain, chain.burn_in);
  const double se_mean = series_sd(x) / std::sqrt(rep.ess[0]);
  const double se_sd = 1.0 / std::sqrt(2.0 * (rep.ess[0] - 1.0));
  REQUIRE(std::abs(x.mean()) <= 3.0 * se_mean);
  REQUIRE(std::abs(series_sd(x) - 1.0) <= 3.0 * se_sd);

  SECTION("zero leapfrog steps always accept the current point") {
    HmcConfig idcfg = cfg;
    idcfg.n_draws = 500;
    idcfg.n_leapfrog = 0;
    const Chain frozen = sample_hmc(TargetFn(std_normal_log), init, idcfg);
    REQUIRE(frozen.acceptance_rate == 1.0);
    REQUIRE((frozen.draws.array() == 0.3).all());
  }

  SECTION("fixed seed reproduces the chain bitwise") {
    const Chain again = sample_hmc(TargetFn(std_normal_log), init, cfg);
    REQUIRE((again.draws - chain.draws).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("leapfrog energy error shrinks quadratically with the step") {
  const TargetFn target = [](const Vector& x) { return -0.5 * x.squaredNorm(); };
  const Vector mass = Vector::Ones(2);
  Vector x0(2), p0(2);
  x0 << 1.0, 0.5;
  p0 << -0.3, 0.8;
  const double h0 = hamiltonian(target, x0, p0, mass);

  auto coarse = leapfrog(target, x0, p0, 0.2, 10, mass, 1e-5);
  auto fine = leapfrog(target, x0, p0, 0.1, 20, mass, 1e-5);
  const double err_coarse =
      std::abs(hamiltonian(target, coarse.x, coarse.p, mass) - h0);
  const double err_fine =
      std::abs(hamiltonian(target, fine.x, fine.p, mass) - h0);
  const double ratio = err_coarse / err_fine;
  REQUIRE(ratio > 3.0);
  REQUIRE(ratio < 5.0);
}

TEST_CASE("hamiltonian sampler survives a barrier without throwing") {
  // Density supported on x > 0; finite differences straddle the boundary.
  const TargetFn barrier = [](const Vector& x) {
    return x[0] > 0.0 ? -0.5 * x.squaredNorm()
                      : -std::numeric_limits<double>::infinity();
  };
  HmcConfig cfg;
  cfg.n_draws = 500;
  cfg.step_size = 0.4;
  cfg.n_leapfrog = 5;
  cfg.seed = 11;
  const Chain chain = sample_hmc(barrier, Vector::Constant(1, 0.05), cfg);
  REQUIRE(chain.draws.allFinite());
  REQUIRE((chain.draws.col(0).array() > 0.0).all());
}

TEST_CASE("u-turn test keys on momentum opposing the displacement") {
  Vector x_minus = Vector::Zero(2);
  Vector x_plus(2);
  x_plus << 1.0, 2.0;
  const Vector mass = Vector::Ones(2);

  const Vector opposing = -(x_plus - x_minus);
  REQUIRE(uturn(x_minus, x_plus, opposing, opposing, mass));

  const Vector aligned = x_plus - x_minus;
  REQUIRE_FALSE(uturn(x_minus, x_plus, aligned, aligned, mass));

  SECTION("either endpoint alone can trigger termination") {
    REQUIRE(uturn(x_minus, x_plus, aligned, opposing, mass));
    REQUIRE(uturn(x_minus, x_plus, opposing, aligned, mass));
  }

  SECTION("mass scaling weights the dot product") {
    Vector mass2(2);
    mass2 << 100.0, 1.0;
    Vector p(2);
    p << 50.0, -1.1;  // heavy first coordinate contributes 0.5, second -2.2
    REQUIRE(uturn(x_minus, x_plus, p, p, mass2));
    REQUIRE_FALSE(uturn(x_minus, x_plus, p, p, mass));
  }
}

TEST_CASE("no-u-turn sampler matches standard normal moments") {
  NutsConfig cfg;
  cfg.n_draws = 4000;
  cfg.step_size = 0.3;
  cfg.seed = 17;
  const Vector init = Vector::Constant(1, -0.4);
  const Chain chain = sample_nuts(TargetFn(std_normal_log), init, cfg);

  REQUIRE(chain.draws(0, 0) == -0.4);
  const Vector x = post_burn_col(chain, 0);
  const EssReport rep = ess(chain, chain.burn_in);
  const double se_mean = series_sd(x) / std::sqrt(rep.ess[0]);
  const double se_sd = 1.0 / std::sqrt(2.0 * (rep.ess[0] - 1.0));
  REQUIRE(std::abs(x.mean()) <= 3.0 * se_mean);
  REQUIRE(std::abs(series_sd(x) - 1.0) <= 3.0 * se_sd);

  SECTION("stored log posterior matches re-evaluation") {
    for (Index i = 0; i < chain.draws.rows(); i += 397) {
      const Vector row = chain.draws.row(i).transpose();
      REQUIRE(std::abs(chain.log_post[i] - std_normal_log(row)) < 1e-10);
    }
  }

  SECTION("fixed seed reproduces the chain bitwise") {
    const Chain again = sample_nuts(TargetFn(std_normal_log), init, cfg);
    REQUIRE((again.draws - chain.draws).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("depth cap of zero degenerates to single-step proposals") {
    NutsConfig shallow = cfg;
    shallow.max_tree_depth = 0;
    shallow.n_draws = 10000;
    shallow.step_size = 0.5;
    const Chain single = sample_nuts(TargetFn(std_normal_log), init, shallow);
    const Vector y = post_burn_col(single, 0);
    REQUIRE(std::abs(y.mean()) < 0.1);
    REQUIRE(std::abs(series_sd(y) - 1.0) < 0.15);
  }
}

TEST_CASE("all samplers recover a known 2-d gaussian") {
  Vector mu(2);
  mu << 0.5, -1.0;
  Vector var_diag(2);
  var_diag << 1.0, 2.25;
  const TargetFn target = [mu, var_diag](const Vector& x) {
    double v = 0.0;
    for (Index j = 0; j < 2; ++j)
      v -= 0.5 * (x[j] - mu[j]) * (x[j] - mu[j]) / var_diag[j];
    return v;
  };
  const Vector init = mu;

  SECTION("adaptive metropolis") {
    AmConfig cfg;
    cfg.n_draws = 20000;
    cfg.seed = 101;
    check_gaussian_recovery(sample_am(target, init, cfg), mu, var_diag);
  }
  SECTION("delayed rejection") {
    DramConfig cfg;
    cfg.n_draws = 20000;
    cfg.seed = 102;
    check_gaussian_recovery(sample_dram(target, init, cfg), mu, var_diag);
  }
  SECTION("hamiltonian") {
    HmcConfig cfg;
    cfg.n_draws = 4000;
    cfg.step_size = 0.25;
    cfg.n_leapfrog = 20;
    cfg.seed = 103;
    check_gaussian_recovery(sample_hmc(target, init, cfg), mu, var_diag);
  }
  SECTION("no-u-turn") {
    NutsConfig cfg;
    cfg.n_draws = 3000;
    cfg.step_size = 0.3;
    cfg.max_tree_depth = 8;
    cfg.seed = 104;
    check_gaussian_recovery(sample_nuts(target, init, cfg), mu, var_diag);
  }
}

TEST_CASE("effective sample size follows the chain's autocorrelation") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SECTION("iid chain has ess near its length") {
    Vector x(10000);
    for (Index i = 0; i < x.size(); ++i) x[i] = gauss(rng);
    const EssReport rep = ess(wrap_series(x), 0);
    REQUIRE(rep.ess[0] >= 8000.0);
    REQUIRE(rep.ess[0] <= 12000.0);
    REQUIRE_FALSE(rep.degenerate[0]);
    REQUIRE(rep.iact[0] >= 1.0);
  }

  SECTION("ar(1) chain with coefficient 0.9") {
    const Index n = 20000;
    Vector x(n);
    x[0] = gauss(rng);
    const double noise_sd = std::sqrt(1.0 - 0.81);
    for (Index i = 1; i < n; ++i) x[i] = 0.9 * x[i - 1] + noise_sd * gauss(rng);
    const EssReport rep = ess(wrap_series(x), 0);
    REQUIRE(rep.ess[0] >= 700.0);
    REQUIRE(rep.ess[0] <= 1500.0);
    REQUIRE(rep.iact[0] > 10.0);

    SECTION("lag-1 autocorrelation lands near 0.9") {
      Chain c = wrap_series(x);
      const ChainDiagnostics d = diagnostics(c);
      REQUIRE(std::abs(d.autocorr(1, 0) - 0.9) < 0.05);
      REQUIRE(d.autocorr(0, 0) == Catch::Approx(1.0).margin(1e-12));
    }
  }

  SECTION("constant chain reports ess one and a degeneracy flag") {
    const EssReport rep = ess(wrap_series(Vector::Constant(500, 3.25)), 0);
    REQUIRE(rep.ess[0] == 1.0);
    REQUIRE(rep.degenerate[0]);
    REQUIRE(rep.iact[0] == 500.0);
  }

  SECTION("alternating chain is capped and flagged") {
    Vector x(1000);
    for (Index i = 0; i < x.size(); ++i) x[i] = (i % 2 == 0) ? 1.0 : -1.0;
    const EssReport rep = ess(wrap_series(x), 0);
    REQUIRE(rep.ess[0] == 1000.0);
    REQUIRE(rep.degenerate[0]);
  }

  SECTION("short chains are rejected") {
    REQUIRE_THROWS_AS(ess(wrap_series(Vector::Zero(99)), 0), InputError);
    Chain c = wrap_series(Vector::Zero(150));
    REQUIRE_THROWS_AS(ess(c, 60), InputError);
  }

  SECTION("ess stays within its cap across samplers") {
    AmConfig cfg;
    cfg.n_draws = 1000;
    cfg.seed = 31;
    const Chain chain =
        sample_am(TargetFn(std_normal_log), Vector::Zero(1), cfg);
    const EssReport rep = ess(chain, chain.burn_in);
    const double n_post = double(chain.draws.rows() - chain.burn_in);
    REQUIRE(rep.ess[0] >= 1.0);
    REQUIRE(rep.ess[0] <= n_post);
  }
}

TEST_CASE("diagnostics flag non-stationary chains") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SECTION("iid chain passes") {
    Vector x(2000);
    for (Index i = 0; i < x.size(); ++i) x[i] = gauss(rng);
    Chain c = wrap_series(x);
    const ChainDiagnostics d = diagnostics(c);
    REQUIRE(d.stationary);
    REQUIRE(std::abs(d.autocorr(1, 0)) < 0.05);
    REQUIRE(d.max_lag >= 50);
  }

  SECTION("linear trend raises the flag") {
    Vector x(2000);
    for (Index i = 0; i < x.size(); ++i) x[i] = double(i) / 2000.0;
    Chain c = wrap_series(x);
    const ChainDiagnostics d = diagnostics(c);
    REQUIRE_FALSE(d.stationary);
    REQUIRE(d.split_z[0] > 3.0);
  }

  SECTION("too-short chains are rejected") {
    Chain c = wrap_series(Vector::Zero(199));
    REQUIRE_THROWS_AS(diagnostics(c), InputError);
  }
}
