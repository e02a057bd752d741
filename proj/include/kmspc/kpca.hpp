#ifndef KMSPC_KPCA_HPP
#define KMSPC_KPCA_HPP

#include <algorithm>
#include <cmath>
#include <utility>

#include "kmspc/common.hpp"
#include "kmspc/kernel.hpp"

namespace kmspc {

// Component retention: either the smallest r capturing `energy_fraction` of
// the centered-Gram eigenvalue sum, or a fixed count.
struct RetentionPolicy {
  enum class Kind { Energy, Fixed };
  Kind kind = Kind::Energy;
  double energy_fraction = 0.95;
  Index fixed_r = 0;

  static RetentionPolicy energy(double fraction) {
    RetentionPolicy p;
    p.kind = Kind::Energy;
    p.energy_fraction = fraction;
    return p;
  }
  static RetentionPolicy fixed(Index r) {
    RetentionPolicy p;
    p.kind = Kind::Fixed;
    p.fixed_r = r;
    return p;
  }
};

struct KpcaModel {
  Vector eigenvalues;   // descending, all above the eigen floor
  Matrix U;             // n x r, orthonormal columns
  Index r = 0;
  CenteringStats centering;
  Matrix X_train;
  KernelSpec spec;
  KernelParams params;
};

struct MonitoringStatistics {
  Vector t2;
  Vector spe;
};

struct ControlLimits {
  double t2_limit = 0.0;
  double spe_limit = 0.0;
  double confidence = 0.99;
};

using ContributionVector = Vector;

namespace detail {

// Sign convention: the largest-magnitude entry of each eigenvector is
// positive; ties resolved by the first such entry.
inline void fix_eigenvector_signs(Matrix& U) {
  for (Index c = 0; c < U.cols(); ++c) {
    Index arg = 0;
    double best = 0.0;
    for (Index i = 0; i < U.rows(); ++i) {
      const double a = std::abs(U(i, c));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (U(arg, c) < 0.0) U.col(c) = -U.col(c);
  }
}

}  // namespace detail

struct KpcaCore {
  Vector eigenvalues;
  Matrix U;
  CenteringStats centering;
  Index r = 0;
};

// Eigendecomposes the double-centered Gram and retains components per policy.
// eigen_floor = 1e-10 * lambda_1 guards the later 1/sqrt(lambda) scaling.
inline KpcaCore fit_kpca_gram(const Matrix& K, const RetentionPolicy& policy) {
  auto [Kc, stats] = center_train_gram(K);
  Eigen::SelfAdjointEigenSolver<Matrix> es(Kc);
  if (es.info() != Eigen::Success)
    throw NumericalError("fit_kpca: eigendecomposition failed");
  const Index n = Kc.rows();
  Vector ev = es.eigenvalues().reverse();
  Matrix U(n, n);
  for (Index c = 0; c < n; ++c) U.col(c) = es.eigenvectors().col(n - 1 - c);

  const double lambda1 = ev.size() > 0 ? ev[0] : 0.0;
  if (!(lambda1 > 0.0))
    throw DegenerateDataError("fit_kpca: centered Gram has no positive eigenvalues");
  const double floor = 1e-10 * lambda1;
  Index kept = 0;
  while (kept < ev.size() && ev[kept] > floor) ++kept;
  if (kept == 0)
    throw DegenerateDataError("fit_kpca: all eigenvalues below the floor");

  Index r = 0;
  if (policy.kind == RetentionPolicy::Kind::Fixed) {
    if (policy.fixed_r < 0 || policy.fixed_r > kept)
      throw InputError("fit_kpca: fixed component count exceeds usable rank " +
                       std::to_string(kept));
    r = policy.fixed_r;
  } else {
    if (!(policy.energy_fraction > 0.0 && policy.energy_fraction <= 1.0))
      throw InputError("fit_kpca: energy fraction outside (0,1]");
    const double total = ev.head(kept).sum();
    double acc = 0.0;
    while (r < kept) {
      acc += ev[r];
      ++r;
      if (acc >= policy.energy_fraction * total) break;
    }
  }

  KpcaCore core;
  core.eigenvalues = ev.head(r);
  core.U = U.leftCols(r);
  detail::fix_eigenvector_signs(core.U);
  core.centering = std::move(stats);
  core.r = r;
  return core;
}

inline KpcaModel fit_kpca(const Matrix& X_healthy, const KernelSpec& spec,
                          const KernelParams& params,
                          const RetentionPolicy& policy = RetentionPolicy{},
                          int workers = 1) {
  if (X_healthy.rows() < 3)
    throw InputError("fit_kpca: need at least 3 training samples");
  Matrix K = gram_matrix(spec, params, X_healthy, workers);
  KpcaCore core = fit_kpca_gram(K, policy);
  KpcaModel model;
  model.eigenvalues = std::move(core.eigenvalues);
  model.U = std::move(core.U);
  model.r = core.r;
  model.centering = std::move(core.centering);
  model.X_train = X_healthy;
  model.spec = spec;
  model.params = params;
  return model;
}

// t_h = lambda_h^{-1/2} sum_i U_{ih} k_c(x)_i
inline Vector score(const KpcaModel& model, const Vector& x) {
  Vector k = kernel_vector(model.spec, model.params, model.X_train, x);
  const double k_self = eval_kernel(model.spec, model.params, x, x);
  auto [kc, kc_self] = center_test_vector(k, k_self, model.centering);
  (void)kc_self;
  Vector t(model.r);
  for (Index h = 0; h < model.r; ++h)
    t[h] = model.U.col(h).dot(kc) / std::sqrt(model.eigenvalues[h]);
  return t;
}

inline double t2_statistic(const KpcaModel& model, const Vector& t) {
  if (t.size() != model.r) throw InputError("t2_statistic: score length != r");
  double v = 0.0;
  for (Index h = 0; h < model.r; ++h) v += t[h] * t[h] / model.eigenvalues[h];
  return v;
}

inline double spe_statistic(const KpcaModel& model, const Vector& x, const Vector& t) {
  if (t.size() != model.r) throw InputError("spe_statistic: score length != r");
  Vector k = kernel_vector(model.spec, model.params, model.X_train, x);
  const double k_self = eval_kernel(model.spec, model.params, x, x);
  auto [kc, kc_self] = center_test_vector(k, k_self, model.centering);
  (void)kc;
  const double v = kc_self - t.squaredNorm();
  return v < 0.0 ? 0.0 : v;
}

inline MonitoringStatistics monitor(const KpcaModel& model, const Matrix& X,
                                    int workers = 1) {
  if (X.cols() != model.X_train.cols())
    throw InputError("monitor: column count differs from training data");
  MonitoringStatistics out;
  out.t2 = Vector(X.rows());
  out.spe = Vector(X.rows());
  parallel_for(X.rows(), workers, [&](Index i) {
    const Vector x = X.row(i);
    const Vector t = score(model, x);
    out.t2[i] = t2_statistic(model, t);
    out.spe[i] = spe_statistic(model, x, t);
  });
  return out;
}

// Empirical linear-interpolation quantiles of the healthy statistics.
inline ControlLimits control_limits(const MonitoringStatistics& healthy,
                                    double confidence) {
  if (healthy.t2.size() < 20)
    throw InputError("control_limits: need at least 20 healthy samples");
  if (!(confidence > 0.0 && confidence < 1.0))
    throw InputError("control_limits: confidence outside (0,1)");
  std::vector<double> t2(healthy.t2.data(), healthy.t2.data() + healthy.t2.size());
  std::vector<double> spe(healthy.spe.data(), healthy.spe.data() + healthy.spe.size());
  ControlLimits lim;
  lim.t2_limit = quantile_linear(std::move(t2), confidence);
  lim.spe_limit = quantile_linear(std::move(spe), confidence);
  lim.confidence = confidence;
  return lim;
}

namespace detail {

// Score sensitivities D_{hd} = d t_h / d x_d with the centered-kernel
// derivative dk_c/dx_d = dk/dx_d - mean_i(dk/dx_d).
inline Matrix score_jacobian(const KpcaModel& model, const Vector& x,
                             Vector* grad_mean_out) {
  Matrix G = kernel_gradient(model.spec, model.params, x, model.X_train);
  const Vector col_means = G.colwise().mean();
  Matrix Gc = G.rowwise() - col_means.transpose();
  Matrix D(model.r, x.size());
  for (Index h = 0; h < model.r; ++h)
    D.row(h) = (model.U.col(h).transpose() * Gc) / std::sqrt(model.eigenvalues[h]);
  if (grad_mean_out) *grad_mean_out = col_means;
  return D;
}

}  // namespace detail

// C_d = sum_h (t_h / lambda_h) d t_h / d x_d, which equals half the gradient
// of T^2 in x.
inline ContributionVector t2_contributions(const KpcaModel& model, const Vector& x) {
  const Vector t = score(model, x);
  Matrix D = detail::score_jacobian(model, x, nullptr);
  Vector c = Vector::Zero(x.size());
  for (Index h = 0; h < model.r; ++h)
    c += (t[h] / model.eigenvalues[h]) * D.row(h).transpose();
  return c;
}

// C_d = d SPE / d x_d; the self-similarity term contributes -2 mean_i dk/dx_d
// since k(x,x) is constant in x.
inline ContributionVector spe_contributions(const KpcaModel& model, const Vector& x) {
  const Vector t = score(model, x);
  Vector grad_mean;
  Matrix D = detail::score_jacobian(model, x, &grad_mean);
  Vector c = -2.0 * grad_mean;
  for (Index h = 0; h < model.r; ++h) c -= 2.0 * t[h] * D.row(h).transpose();
  return c;
}

}  // namespace kmspc

#endif  // KMSPC_KPCA_HPP
