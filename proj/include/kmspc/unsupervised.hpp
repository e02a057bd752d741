#ifndef KMSPC_UNSUPERVISED_HPP
#define KMSPC_UNSUPERVISED_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "kmspc/common.hpp"
#include "kmspc/kernel.hpp"
#include "kmspc/kpca.hpp"

namespace kmspc {

enum class UnsupervisedMethodId { M1, M2, M3, M4, M5, M6, M7, M8, M9, M10 };

inline const char* method_name(UnsupervisedMethodId id) {
  switch (id) {
    case UnsupervisedMethodId::M1: return "M1";
    case UnsupervisedMethodId::M2: return "M2";
    case UnsupervisedMethodId::M3: return "M3";
    case UnsupervisedMethodId::M4: return "M4";
    case UnsupervisedMethodId::M5: return "M5";
    case UnsupervisedMethodId::M6: return "M6";
    case UnsupervisedMethodId::M7: return "M7";
    case UnsupervisedMethodId::M8: return "M8";
    case UnsupervisedMethodId::M9: return "M9";
    case UnsupervisedMethodId::M10: return "M10";
  }
  return "?";
}

inline UnsupervisedMethodId parse_method(const std::string& s) {
  for (int i = 0; i < 10; ++i) {
    const auto id = static_cast<UnsupervisedMethodId>(i);
    if (s == method_name(id)) return id;
  }
  throw InputError("unknown unsupervised method: " + s);
}

struct UnsupervisedMethod {
  UnsupervisedMethodId id = UnsupervisedMethodId::M1;
  int knn_k = 0;                    // 0 selects max(5, ceil(0.05 n))
  double target_similarity = 0.5;   // M3
  double target_effective_rank = 0; // M4; 0 selects min(p, 10)
  int split_count = 20;             // M5/M6 resamples
  int m7_resamples = 10;
  double nu = 0.05;                 // M7 rejection target
  double ridge = 1e-3;              // M9
  Vector grid;                      // empty selects the default 40-point grid
  std::uint64_t seed = 0;
  int workers = 1;
};

struct PseudoLabels {
  std::vector<int> labels;
  ControlLimits source_limits;
};

namespace detail {

// All n(n-1)/2 pairwise Euclidean distances, (i<j) in row-major order.
// Scalar arithmetic throughout: the M1 statistic is part of the public
// contract and must be reproducible digit for digit.
inline std::vector<double> pairwise_distances(const Matrix& X) {
  const Index n = X.rows();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (Index c = 0; c < X.cols(); ++c) {
        const double diff = X(i, c) - X(j, c);
        s += diff * diff;
      }
      d.push_back(std::sqrt(s));
    }
  return d;
}

inline int default_knn(Index n) {
  return std::max(5, static_cast<int>(std::ceil(0.05 * double(n))));
}

inline KernelParams se_candidate(double lengthscale) {
  KernelParams prm;
  prm.log_lengthscales = Vector::Constant(1, std::log(lengthscale));
  prm.log_signal_sd = 0.0;
  prm.log_noise_sd = std::log(0.1);
  return prm;
}

inline Matrix se_gram(const Matrix& X, double lengthscale) {
  KernelSpec spec{KernelFamily::SE, X.cols()};
  return gram_matrix(spec, se_candidate(lengthscale), X);
}

inline double median_pairwise(const Matrix& X) {
  auto d = pairwise_distances(X);
  return median_of(std::move(d));
}

inline double knn_median(const Matrix& X, int k) {
  const Index n = X.rows();
  const int k_eff = std::min<int>(k, static_cast<int>(n - 1));
  std::vector<double> kth(static_cast<std::size_t>(n));
  std::vector<double> row(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      row[w++] = (X.row(i) - X.row(j)).norm();
    }
    std::nth_element(row.begin(), row.begin() + (k_eff - 1), row.end());
    kth[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(k_eff - 1)];
  }
  return median_of(std::move(kth));
}

inline double mean_offdiag_similarity(const std::vector<double>& dists,
                                      double lengthscale) {
  double s = 0.0;
  for (double d : dists) s += std::exp(-0.5 * d * d / (lengthscale * lengthscale));
  return s / double(dists.size());
}

// Bisection in log-lengthscale for the target mean off-diagonal similarity.
inline double bisect_similarity(const Matrix& X, double target) {
  auto dists = pairwise_distances(X);
  double lo = std::log(1e-6), hi = std::log(1e6);
  if (mean_offdiag_similarity(dists, std::exp(lo)) >= target)
    throw TuningError("M3: duplicate-heavy data, similarity exceeds the target at all scales");
  if (mean_offdiag_similarity(dists, std::exp(hi)) <= target)
    throw TuningError("M3: target similarity unreachable on this data");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mean_offdiag_similarity(dists, std::exp(mid)) < target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-13) break;
  }
  return std::exp(0.5 * (lo + hi));
}

inline double effective_rank(const Matrix& K) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(K);
  Vector ev = es.eigenvalues().cwiseMax(0.0);
  const double total = ev.sum();
  if (!(total > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double entropy = 0.0;
  for (Index i = 0; i < ev.size(); ++i) {
    const double q = ev[i] / total;
    if (q > 0.0) entropy -= q * std::log(q);
  }
  return std::exp(entropy);
}

// Mean squared principal-angle cosine between the column spaces of two score
// embeddings of a shared reference set.
inline double subspace_affinity(const Matrix& SA, const Matrix& SB) {
  const Index r = std::min(SA.cols(), SB.cols());
  if (r == 0) return std::numeric_limits<double>::quiet_NaN();
  Eigen::HouseholderQR<Matrix> qa(SA.leftCols(r)), qb(SB.leftCols(r));
  Matrix QA = qa.householderQ() * Matrix::Identity(SA.rows(), r);
  Matrix QB = qb.householderQ() * Matrix::Identity(SB.rows(), r);
  Eigen::JacobiSVD<Matrix> svd(QA.transpose() * QB);
  return svd.singularValues().array().square().mean();
}

inline Matrix rows_of(const Matrix& X, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Index>(i)) = X.row(idx[i]);
  return out;
}

inline double split_stability(const Matrix& X, double lengthscale,
                              int splits, std::uint64_t seed) {
  const Index n = X.rows();
  KernelSpec spec{KernelFamily::SE, X.cols()};
  const KernelParams prm = se_candidate(lengthscale);
  double acc = 0.0;
  int used = 0;
  for (int s = 0; s < splits; ++s) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    std::vector<Index> perm(n);
    for (Index i = 0; i < n; ++i) perm[i] = i;
    for (Index i = 0; i < n; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(perm[i], perm[pick(rng)]);
    }
    std::vector<Index> ia(perm.begin(), perm.begin() + n / 2);
    std::vector<Index> ib(perm.begin() + n / 2, perm.end());
    try {
      auto ma = fit_kpca(rows_of(X, ia), spec, prm);
      auto mb = fit_kpca(rows_of(X, ib), spec, prm);
      Matrix SA(n, ma.r), SB(n, mb.r);
      for (Index i = 0; i < n; ++i) {
        const Vector x = X.row(i);
        SA.row(i) = score(ma, x).transpose();
        SB.row(i) = score(mb, x).transpose();
      }
      const double a = subspace_affinity(SA, SB);
      if (std::isfinite(a)) {
        acc += a;
        ++used;
      }
    } catch (const Error&) {
    }
  }
  if (used == 0) return std::numeric_limits<double>::quiet_NaN();
  return acc / double(used);
}

inline double limit_variability(const Matrix& X, double lengthscale,
                                int resamples, std::uint64_t seed) {
  const Index n = X.rows();
  KernelSpec spec{KernelFamily::SE, X.cols()};
  const KernelParams prm = se_candidate(lengthscale);
  std::vector<double> t2_lims, spe_lims;
  for (int s = 0; s < resamples; ++s) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = pick(rng);
    try {
      Matrix Xb = rows_of(X, idx);
      auto model = fit_kpca(Xb, spec, prm);
      auto stats = monitor(model, Xb);
      std::vector<double> t2(stats.t2.data(), stats.t2.data() + n);
      std::vector<double> spe(stats.spe.data(), stats.spe.data() + n);
      t2_lims.push_back(quantile_linear(std::move(t2), 0.99));
      spe_lims.push_back(quantile_linear(std::move(spe), 0.99));
    } catch (const Error&) {
    }
  }
  if (t2_lims.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double mt = mean_of(t2_lims), ms = mean_of(spe_lims);
  if (!(mt > 0.0) || !(ms > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return sd_of(t2_lims) / mt + sd_of(spe_lims) / ms;
}

// One-class boundary proxy: samples whose mean similarity to a bootstrap
// resample falls below that resample's nu-quantile count as boundary points.
inline double support_stability(const Matrix& X, double lengthscale, double nu,
                                int resamples, std::uint64_t seed) {
  const Index n = X.rows();
  KernelSpec spec{KernelFamily::SE, X.cols()};
  const KernelParams prm = se_candidate(lengthscale);
  std::vector<double> fractions;
  for (int s = 0; s < resamples; ++s) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = pick(rng);
    Matrix Xb = rows_of(X, idx);
    std::vector<double> sim_b(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const Vector xi = Xb.row(i);
      sim_b[static_cast<std::size_t>(i)] =
          kernel_vector(spec, prm, Xb, xi).mean();
    }
    const double thr = quantile_linear(sim_b, nu);
    Index below = 0;
    for (Index i = 0; i < n; ++i) {
      const Vector xi = X.row(i);
      if (kernel_vector(spec, prm, Xb, xi).mean() < thr) ++below;
    }
    fractions.push_back(double(below) / double(n));
  }
  if (fractions.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(fractions);
  const double sd = sd_of(fractions);
  return std::abs(m - nu) + sd * sd;
}

inline double mmd2_unbiased(const Matrix& A, const Matrix& B, double lengthscale) {
  KernelSpec spec{KernelFamily::SE, A.cols()};
  const KernelParams prm = se_candidate(lengthscale);
  const Index m = A.rows(), l = B.rows();
  if (m < 2 || l < 2) return std::numeric_limits<double>::quiet_NaN();
  Matrix Kaa = gram_matrix(spec, prm, A);
  Matrix Kbb = gram_matrix(spec, prm, B);
  double aa = (Kaa.sum() - Kaa.trace()) / double(m * (m - 1));
  double bb = (Kbb.sum() - Kbb.trace()) / double(l * (l - 1));
  double ab = 0.0;
  for (Index i = 0; i < m; ++i) {
    const Vector ai = A.row(i);
    ab += kernel_vector(spec, prm, B, ai).sum();
  }
  ab /= double(m * l);
  return aa + bb - 2.0 * ab;
}

// 5-fold CV error of kernel ridge self-prediction, contiguous folds.
inline double ridge_cv_error(const Matrix& X, double lengthscale, double ridge) {
  const Index n = X.rows();
  KernelSpec spec{KernelFamily::SE, X.cols()};
  const KernelParams prm = se_candidate(lengthscale);
  Matrix K = gram_matrix(spec, prm, X);
  const int folds = 5;
  double err = 0.0;
  for (int f = 0; f < folds; ++f) {
    const Index lo = n * f / folds, hi = n * (f + 1) / folds;
    std::vector<Index> train;
    train.reserve(static_cast<std::size_t>(n - (hi - lo)));
    for (Index i = 0; i < n; ++i)
      if (i < lo || i >= hi) train.push_back(i);
    const Index nt = static_cast<Index>(train.size());
    Matrix Ktt(nt, nt), Kvt(hi - lo, nt);
    for (Index a = 0; a < nt; ++a)
      for (Index b = 0; b < nt; ++b) Ktt(a, b) = K(train[a], train[b]);
    for (Index v = lo; v < hi; ++v)
      for (Index b = 0; b < nt; ++b) Kvt(v - lo, b) = K(v, train[b]);
    Ktt.diagonal().array() += ridge;
    Eigen::LLT<Matrix> llt(Ktt);
    if (llt.info() != Eigen::Success)
      return std::numeric_limits<double>::quiet_NaN();
    Matrix Yt(nt, X.cols());
    for (Index a = 0; a < nt; ++a) Yt.row(a) = X.row(train[a]);
    Matrix pred = Kvt * llt.solve(Yt);
    err += (pred - X.middleRows(lo, hi - lo)).squaredNorm();
  }
  return err / double(n * X.cols());
}

// Centered-kernel alignment with the symmetrized kNN adjacency Gram.
inline double kernel_alignment(const Matrix& X, double lengthscale, int k) {
  const Index n = X.rows();
  Matrix A = Matrix::Zero(n, n);
  const int k_eff = std::min<int>(k, static_cast<int>(n - 1));
  std::vector<std::pair<double, Index>> order(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      order[w++] = {(X.row(i) - X.row(j)).norm(), j};
    }
    std::stable_sort(order.begin(), order.end());
    for (int t = 0; t < k_eff; ++t) {
      const Index j = order[static_cast<std::size_t>(t)].second;
      A(i, j) = 1.0;
      A(j, i) = 1.0;
    }
  }
  Matrix K = se_gram(X, lengthscale);
  auto [Kc, s1] = center_train_gram(K);
  auto [Ac, s2] = center_train_gram(A);
  (void)s1;
  (void)s2;
  const double num = (Kc.array() * Ac.array()).sum();
  const double den = Kc.norm() * Ac.norm();
  if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return num / den;
}

}  // namespace detail

inline Vector default_grid(const Matrix& X) {
  const double anchor = detail::median_pairwise(X);
  if (!(anchor > 0.0))
    throw DegenerateDataError("default_grid: median pairwise distance is zero");
  Vector grid(40);
  const double lo = std::log(0.1 * anchor), hi = std::log(10.0 * anchor);
  for (Index i = 0; i < 40; ++i)
    grid[i] = std::exp(lo + (hi - lo) * double(i) / 39.0);
  return grid;
}

inline double tune_unsupervised(const UnsupervisedMethod& method,
                                const Matrix& X_healthy) {
  const Index n = X_healthy.rows();
  if (!X_healthy.allFinite())
    throw InputError("tune_unsupervised: non-finite entries");
  const bool closed_form = method.id == UnsupervisedMethodId::M1 ||
                           method.id == UnsupervisedMethodId::M2;
  if (n < (closed_form ? 2 : 10))
    throw InputError("tune_unsupervised: too few healthy samples");

  switch (method.id) {
    case UnsupervisedMethodId::M1:
      return detail::median_pairwise(X_healthy);
    case UnsupervisedMethodId::M2: {
      const int k = method.knn_k > 0 ? method.knn_k : detail::default_knn(n);
      return detail::knn_median(X_healthy, k);
    }
    case UnsupervisedMethodId::M3:
      return detail::bisect_similarity(X_healthy, method.target_similarity);
    default:
      break;
  }

  const Vector grid = method.grid.size() > 0 ? method.grid : default_grid(X_healthy);
  for (Index i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1]) || !(grid[0] > 0.0))
      throw InputError("tune_unsupervised: grid must be positive ascending");

  const double target_rank =
      method.target_effective_rank > 0.0
          ? method.target_effective_rank
          : double(std::min<Index>(X_healthy.cols(), 10));

  Vector crit(grid.size());
  const bool maximize = method.id == UnsupervisedMethodId::M5 ||
                        method.id == UnsupervisedMethodId::M10;
  parallel_for(grid.size(), method.workers, [&](Index g) {
    const double l = grid[g];
    double v = std::numeric_limits<double>::quiet_NaN();
    switch (method.id) {
      case UnsupervisedMethodId::M4:
        v = std::abs(detail::effective_rank(detail::se_gram(X_healthy, l)) -
                     target_rank);
        break;
      case UnsupervisedMethodId::M5:
        v = detail::split_stability(X_healthy, l, method.split_count, method.seed);
        break;
      case UnsupervisedMethodId::M6:
        v = detail::limit_variability(X_healthy, l, method.split_count, method.seed);
        break;
      case UnsupervisedMethodId::M7:
        v = detail::support_stability(X_healthy, l, method.nu,
                                      method.m7_resamples, method.seed);
        break;
      case UnsupervisedMethodId::M8:
        v = detail::mmd2_unbiased(X_healthy.topRows(n / 2),
                                  X_healthy.bottomRows(n - n / 2), l);
        break;
      case UnsupervisedMethodId::M9:
        v = detail::ridge_cv_error(X_healthy, l, method.ridge);
        break;
      case UnsupervisedMethodId::M10: {
        const int k = method.knn_k > 0 ? method.knn_k : detail::default_knn(n);
        v = detail::kernel_alignment(X_healthy, l, k);
        break;
      }
      default:
        break;
    }
    crit[g] = v;
  });

  Index best = -1;
  for (Index g = 0; g < grid.size(); ++g) {
    if (!std::isfinite(crit[g])) continue;
    if (best < 0 || (maximize ? crit[g] > crit[best] : crit[g] < crit[best]))
      best = g;
  }
  if (best < 0)
    throw TuningError(std::string(method_name(method.id)) +
                      ": every grid candidate produced a degenerate criterion");
  return grid[best];
}

inline PseudoLabels assign_pseudo_labels(const KpcaModel& model,
                                         const ControlLimits& limits,
                                         const Matrix& X_monitor,
                                         int workers = 1) {
  auto stats = monitor(model, X_monitor, workers);
  PseudoLabels out;
  out.source_limits = limits;
  out.labels.resize(static_cast<std::size_t>(X_monitor.rows()));
  for (Index i = 0; i < X_monitor.rows(); ++i)
    out.labels[static_cast<std::size_t>(i)] =
        (stats.t2[i] > limits.t2_limit || stats.spe[i] > limits.spe_limit) ? 1 : 0;
  return out;
}

}  // namespace kmspc

#endif  // KMSPC_UNSUPERVISED_HPP
