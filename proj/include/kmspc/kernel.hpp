#ifndef KMSPC_KERNEL_HPP
#define KMSPC_KERNEL_HPP

#include <cmath>
#include <utility>

#include "kmspc/common.hpp"

namespace kmspc {

enum class KernelFamily { SE, ARD };

struct KernelSpec {
  KernelFamily family = KernelFamily::SE;
  Index dimension = 0;

  Index lengthscale_count() const {
    return family == KernelFamily::ARD ? dimension : 1;
  }
};

// Parameters live in log scale; exponentiate only at evaluation sites.
struct KernelParams {
  Vector log_lengthscales;
  double log_signal_sd = 0.0;
  double log_noise_sd = 0.0;

  Index size() const { return log_lengthscales.size() + 2; }

  Vector to_vector() const {
    Vector v(size());
    v.head(log_lengthscales.size()) = log_lengthscales;
    v[log_lengthscales.size()] = log_signal_sd;
    v[log_lengthscales.size() + 1] = log_noise_sd;
    return v;
  }

  static KernelParams from_vector(const Vector& v) {
    if (v.size() < 3) throw InputError("KernelParams: vector needs >= 3 entries");
    KernelParams p;
    p.log_lengthscales = v.head(v.size() - 2);
    p.log_signal_sd = v[v.size() - 2];
    p.log_noise_sd = v[v.size() - 1];
    return p;
  }
};

inline void validate_params(const KernelSpec& spec, const KernelParams& params) {
  const Index want = spec.lengthscale_count();
  if (params.log_lengthscales.size() != want)
    throw InputError("kernel params carry " +
                     std::to_string(params.log_lengthscales.size()) +
                     " lengthscales, spec requires " + std::to_string(want));
}

struct CenteringStats {
  Vector row_means;
  double grand_mean = 0.0;
  Index n_train = 0;
};

namespace detail {

// Squared distance scaled per dimension by 1/l_d^2, written as an explicit
// scalar loop so the arithmetic sequence is identical for SE and for ARD with
// equal lengthscales.
inline double scaled_sqdist(const KernelSpec& spec, const Vector& inv_l2,
                            const Vector& a, const Vector& b) {
  double s = 0.0;
  for (Index d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    const double w = spec.family == KernelFamily::ARD ? inv_l2[d] : inv_l2[0];
    s += diff * diff * w;
  }
  return s;
}

inline Vector inv_sq_lengthscales(const KernelParams& params) {
  Vector inv_l2(params.log_lengthscales.size());
  for (Index d = 0; d < inv_l2.size(); ++d) {
    const double l = std::exp(params.log_lengthscales[d]);
    inv_l2[d] = 1.0 / (l * l);
  }
  return inv_l2;
}

}  // namespace detail

inline double eval_kernel(const KernelSpec& spec, const KernelParams& params,
                          const Vector& x_i, const Vector& x_j) {
  validate_params(spec, params);
  if (x_i.size() != x_j.size())
    throw InputError("eval_kernel: input vectors differ in length");
  if (spec.dimension > 0 && x_i.size() != spec.dimension)
    throw InputError("eval_kernel: input length does not match kernel dimension");
  const double sf = std::exp(params.log_signal_sd);
  const Vector inv_l2 = detail::inv_sq_lengthscales(params);
  return sf * sf * std::exp(-0.5 * detail::scaled_sqdist(spec, inv_l2, x_i, x_j));
}

inline Matrix gram_matrix(const KernelSpec& spec, const KernelParams& params,
                          const Matrix& X, int workers = 1) {
  validate_params(spec, params);
  if (!X.allFinite()) throw InputError("gram_matrix: non-finite entries in X");
  const Index n = X.rows();
  if (n < 1) throw InputError("gram_matrix: empty input");
  const double sf = std::exp(params.log_signal_sd);
  const double sf2 = sf * sf;
  const Vector inv_l2 = detail::inv_sq_lengthscales(params);
  Matrix K(n, n);
  parallel_for(n, workers, [&](Index i) {
    K(i, i) = sf2;
    const Vector xi = X.row(i);
    for (Index j = 0; j < i; ++j) {
      const Vector xj = X.row(j);
      const double v = sf2 * std::exp(-0.5 * detail::scaled_sqdist(spec, inv_l2, xi, xj));
      K(i, j) = v;
      K(j, i) = v;
    }
  });
  return K;
}

inline Vector kernel_vector(const KernelSpec& spec, const KernelParams& params,
                            const Matrix& X_train, const Vector& x) {
  validate_params(spec, params);
  const Index n = X_train.rows();
  const double sf = std::exp(params.log_signal_sd);
  const double sf2 = sf * sf;
  const Vector inv_l2 = detail::inv_sq_lengthscales(params);
  Vector k(n);
  for (Index i = 0; i < n; ++i) {
    const Vector xi = X_train.row(i);
    k[i] = sf2 * std::exp(-0.5 * detail::scaled_sqdist(spec, inv_l2, x, xi));
  }
  return k;
}

// K_c = K - 1_n K - K 1_n + 1_n K 1_n, with 1_n the n x n matrix of 1/n.
inline std::pair<Matrix, CenteringStats> center_train_gram(const Matrix& K) {
  if (K.rows() != K.cols()) throw InputError("center_train_gram: K not square");
  if (!K.allFinite()) throw InputError("center_train_gram: non-finite entries");
  const Index n = K.rows();
  CenteringStats stats;
  stats.n_train = n;
  stats.row_means = K.rowwise().mean();
  stats.grand_mean = stats.row_means.mean();
  Matrix Kc(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      Kc(i, j) = K(i, j) - stats.row_means[i] - stats.row_means[j] + stats.grand_mean;
  return {std::move(Kc), std::move(stats)};
}

// Centers a test kernel vector and self-similarity against training means.
inline std::pair<Vector, double> center_test_vector(const Vector& k_vec,
                                                    double k_self,
                                                    const CenteringStats& stats) {
  if (k_vec.size() != stats.n_train)
    throw InputError("center_test_vector: length mismatch with training set");
  const double k_mean = k_vec.mean();
  Vector kc(k_vec.size());
  for (Index i = 0; i < k_vec.size(); ++i)
    kc[i] = k_vec[i] - k_mean - stats.row_means[i] + stats.grand_mean;
  const double kc_self = k_self - 2.0 * k_mean + stats.grand_mean;
  return {std::move(kc), kc_self};
}

// G[i][d] = dk(x, x_i)/dx_d = -k(x, x_i) (x_d - x_{i,d}) / l_d^2.
inline Matrix kernel_gradient(const KernelSpec& spec, const KernelParams& params,
                              const Vector& x, const Matrix& X_train) {
  validate_params(spec, params);
  if (x.size() != X_train.cols())
    throw InputError("kernel_gradient: x length does not match training columns");
  const Index n = X_train.rows();
  const Index p = X_train.cols();
  const double sf = std::exp(params.log_signal_sd);
  const double sf2 = sf * sf;
  const Vector inv_l2 = detail::inv_sq_lengthscales(params);
  Matrix G(n, p);
  for (Index i = 0; i < n; ++i) {
    const Vector xi = X_train.row(i);
    const double k = sf2 * std::exp(-0.5 * detail::scaled_sqdist(spec, inv_l2, x, xi));
    for (Index d = 0; d < p; ++d) {
      const double w = spec.family == KernelFamily::ARD ? inv_l2[d] : inv_l2[0];
      G(i, d) = -k * (x[d] - xi[d]) * w;
    }
  }
  return G;
}

}  // namespace kmspc

#endif  // KMSPC_KERNEL_HPP
