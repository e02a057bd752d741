#ifndef KMSPC_COMMON_HPP
#define KMSPC_COMMON_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace kmspc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Error taxonomy: every failure surfaced to callers derives from Error so a
// CLI can catch one type and still report the specific kind by name.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& msg) : Error(msg) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

class DegenerateDataError : public Error {
 public:
  explicit DegenerateDataError(const std::string& msg) : Error(msg) {}
};

class TuningError : public Error {
 public:
  explicit TuningError(const std::string& msg) : Error(msg) {}
};

class IngestionError : public Error {
 public:
  explicit IngestionError(const std::string& msg) : Error(msg) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

class PropagationError : public Error {
 public:
  explicit PropagationError(const std::string& msg) : Error(msg) {}
};

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw InputError("mean_of: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation with n-1 in the denominator; 0 for n == 1.
inline double sd_of(const std::vector<double>& v) {
  if (v.empty()) throw InputError("sd_of: empty sample");
  if (v.size() == 1) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Linear-interpolation quantile on the order statistics: h = (n-1)q,
// result = x[floor(h)] + (h - floor(h)) * (x[floor(h)+1] - x[floor(h)]).
inline double quantile_linear(std::vector<double> v, double q) {
  if (v.empty()) throw InputError("quantile_linear: empty sample");
  if (!(q >= 0.0 && q <= 1.0))
    throw InputError("quantile_linear: q outside [0,1]");
  std::sort(v.begin(), v.end());
  const double h = static_cast<double>(v.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  const double frac = h - std::floor(h);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

// Median: middle order statistic for odd n, average of the two middle ones
// for even n. Matches quantile_linear(v, 0.5) but is spelled out so callers
// that require the exact textbook arithmetic get it bit for bit.
inline double median_of(std::vector<double> v) {
  if (v.empty()) throw InputError("median_of: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic sub-stream seed: depends only on (root, stream), never on
// scheduling, so parallel work items can own private RNGs.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t s = root ^ (0x9e3779b97f4a7c15ULL + stream * 0xd1b54a32d192ed03ULL);
  splitmix64(s);
  return splitmix64(s);
}

// Static partition of [0, n) over at most `workers` threads. Each item index
// maps to a fixed slot independent of thread count, so any reduction over
// pre-assigned slots is invariant to `workers`.
template <typename F>
void parallel_for(Index n, int workers, F&& body) {
  if (n <= 0) return;
  int w = workers <= 0 ? static_cast<int>(std::thread::hardware_concurrency()) : workers;
  if (w < 1) w = 1;
  if (w == 1 || n == 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  const Index chunk = (n + w - 1) / w;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  for (int t = 0; t < w; ++t) {
    const Index lo = static_cast<Index>(t) * chunk;
    const Index hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (Index i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

// Shortest round-trippable decimal form.
inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

inline bool approx_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace kmspc

#endif  // KMSPC_COMMON_HPP
