#ifndef KMSPC_CALIBRATION_HPP
#define KMSPC_CALIBRATION_HPP

#include <chrono>
#include <cmath>
#include <utility>
#include <vector>

#include "kmspc/common.hpp"
#include "kmspc/kernel.hpp"
#include "kmspc/kpca.hpp"
#include "kmspc/optimize.hpp"

namespace kmspc {

namespace detail {

// Cholesky with escalating diagonal jitter, from 1e-10 tr(C)/n up to
// 1e-4 tr(C)/n in factors of 10.
inline Eigen::LLT<Matrix> robust_llt(const Matrix& C) {
  Eigen::LLT<Matrix> llt(C);
  if (llt.info() == Eigen::Success) return llt;
  const double scale = C.trace() / double(C.rows());
  std::string tried;
  for (double jitter = 1e-10 * scale; jitter <= 1e-4 * scale; jitter *= 10.0) {
    llt.compute(C + jitter * Matrix::Identity(C.rows(), C.cols()));
    if (llt.info() == Eigen::Success) return llt;
    if (!tried.empty()) tried += ", ";
    tried += format_double(jitter);
  }
  throw NumericalError("robust_llt: factorization failed; jitters tried: " + tried);
}

}  // namespace detail

// log N(y | 0, K + s_n^2 I), the marginal likelihood of a zero-mean GP.
inline double gp_log_marginal(const KernelSpec& spec, const KernelParams& params,
                              const Matrix& X, const Vector& y, int workers = 1) {
  const Index n = X.rows();
  if (n < 1) throw InputError("gp_log_marginal: empty data");
  if (y.size() != n) throw InputError("gp_log_marginal: label length mismatch");
  const double sn = std::exp(params.log_noise_sd);
  Matrix C = gram_matrix(spec, params, X, workers);
  C.diagonal().array() += sn * sn;
  auto llt = detail::robust_llt(C);
  const Vector alpha = llt.solve(y);
  double log_det = 0.0;
  for (Index i = 0; i < n; ++i) log_det += std::log(llt.matrixLLT()(i, i));
  log_det *= 2.0;
  return -0.5 * y.dot(alpha) - 0.5 * log_det -
         0.5 * double(n) * std::log(2.0 * M_PI);
}

// Gaussian log-density of y around its least-squares fit on the K-PCA score
// matrix. sigma <= 0 requests the residual standard deviation of the fit.
inline double kpcr_log_likelihood(const KernelSpec& spec, const KernelParams& params,
                                  const Matrix& X, const Vector& y, Index r,
                                  double sigma, bool* pinv_fallback = nullptr,
                                  int workers = 1) {
  const Index n = X.rows();
  if (y.size() != n) throw InputError("kpcr_log_likelihood: label length mismatch");
  Matrix K = gram_matrix(spec, params, X, workers);
  auto core = fit_kpca_gram(K, RetentionPolicy::fixed(r));

  auto [Kc, stats] = center_train_gram(K);
  (void)stats;
  Matrix T = Kc * core.U;
  for (Index h = 0; h < core.r; ++h) T.col(h) /= std::sqrt(core.eigenvalues[h]);

  Vector beta;
  Matrix TtT = T.transpose() * T;
  Eigen::LLT<Matrix> llt(TtT);
  if (llt.info() == Eigen::Success) {
    beta = llt.solve(T.transpose() * y);
  } else {
    beta = T.completeOrthogonalDecomposition().solve(y);
    if (pinv_fallback) *pinv_fallback = true;
  }
  const Vector resid = y - T * beta;
  const double ssr = resid.squaredNorm();
  double s = sigma;
  if (!(s > 0.0)) s = std::max(std::sqrt(ssr / double(n)), 1e-6);
  return -0.5 * ssr / (s * s) - 0.5 * double(n) * std::log(2.0 * M_PI * s * s);
}

enum class LikelihoodKind { GpMarginal, KpcrDiscrimination };

struct CalibrationObjective {
  LikelihoodKind kind = LikelihoodKind::GpMarginal;
  Matrix X;
  Vector y;
  Index r = 2;          // KPCR only
  double sigma = -1.0;  // KPCR only; <= 0 means residual-sd default
};

struct CalibrationResult {
  KernelParams theta_hat;
  std::vector<double> loss_trace;
  double wall_time = 0.0;
  bool converged = false;
  bool pinv_fallback = false;
  double objective_value = 0.0;
};

inline KernelSpec infer_spec(const KernelParams& init, Index p) {
  KernelSpec spec;
  spec.dimension = p;
  spec.family = init.log_lengthscales.size() > 1 ? KernelFamily::ARD
                                                 : KernelFamily::SE;
  if (spec.family == KernelFamily::ARD && init.log_lengthscales.size() != p)
    throw InputError("infer_spec: lengthscale count matches neither SE nor ARD");
  return spec;
}

// Wraps a calibration objective for the optimizers; evaluation errors map to
// -inf so search simply avoids the failing region. Subset evaluation restricts
// rows of (X, y), clamping the KPCR component count to the subset rank.
inline Objective make_objective(const KernelSpec& spec,
                                const CalibrationObjective& co,
                                bool* pinv_flag = nullptr, int workers = 1) {
  if (co.kind == LikelihoodKind::KpcrDiscrimination)
    for (Index i = 0; i < co.y.size(); ++i)
      if (co.y[i] != 0.0 && co.y[i] != 1.0)
        throw InputError("discrimination labels must be 0 or 1");
  if (!co.y.allFinite()) throw InputError("calibration labels must be finite");

  Objective obj;
  obj.n_samples = co.X.rows();
  auto eval = [spec, co, pinv_flag, workers](const Vector& theta, const Matrix& X,
                                             const Vector& y) -> double {
    try {
      KernelParams prm = KernelParams::from_vector(theta);
      if (co.kind == LikelihoodKind::GpMarginal)
        return gp_log_marginal(spec, prm, X, y, workers);
      const Index max_r = std::min<Index>(co.r, X.rows() > 1 ? X.rows() - 1 : 1);
      return kpcr_log_likelihood(spec, prm, X, y, max_r, co.sigma, pinv_flag,
                                 workers);
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  obj.value = [eval, co](const Vector& theta) { return eval(theta, co.X, co.y); };
  obj.subset_value = [eval, co](const Vector& theta,
                                const std::vector<Index>& idx) {
    Matrix Xs(static_cast<Index>(idx.size()), co.X.cols());
    Vector ys(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Xs.row(static_cast<Index>(i)) = co.X.row(idx[i]);
      ys[static_cast<Index>(i)] = co.y[idx[i]];
    }
    return eval(theta, Xs, ys);
  };
  return obj;
}

inline CalibrationResult calibrate(const CalibrationObjective& co,
                                   const OptimizerConfig& cfg,
                                   const KernelParams& init) {
  const auto t0 = std::chrono::steady_clock::now();
  const KernelSpec spec = infer_spec(init, co.X.cols());
  validate_params(spec, init);
  CalibrationResult result;
  Objective obj = make_objective(spec, co, &result.pinv_fallback, cfg.workers);
  OptimizeResult opt = maximize(obj, cfg, init.to_vector());
  result.theta_hat = KernelParams::from_vector(opt.x);
  result.loss_trace = std::move(opt.loss_trace);
  result.converged = opt.converged;
  result.objective_value = opt.f;
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace kmspc

#endif  // KMSPC_CALIBRATION_HPP
