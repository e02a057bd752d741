#ifndef KMSPC_METRICS_HPP
#define KMSPC_METRICS_HPP

#include <algorithm>
#include <numeric>
#include <vector>

#include "kmspc/common.hpp"

namespace kmspc {

struct MetricsReport {
  double far_t2 = 0.0;
  double fdr_t2 = 0.0;
  double far_spe = 0.0;
  double fdr_spe = 0.0;
  double ci = 0.0;
  double auc = 0.0;
  double f1 = 0.0;
};

namespace detail {

inline void require_binary(const std::vector<int>& v, const char* what) {
  for (int x : v)
    if (x != 0 && x != 1) throw InputError(std::string(what) + " must be 0 or 1");
}

inline void require_both_classes(const std::vector<int>& labels) {
  bool has0 = false, has1 = false;
  for (int x : labels) (x == 0 ? has0 : has1) = true;
  if (!has0 || !has1)
    throw InputError("labels must contain both a healthy and a faulty sample");
}

}  // namespace detail

// FAR = alarm fraction among healthy samples, FDR = alarm fraction among
// faulty samples.
inline std::pair<double, double> far_fdr(const std::vector<int>& alarms,
                                         const std::vector<int>& labels) {
  if (alarms.size() != labels.size())
    throw InputError("far_fdr: alarms and labels differ in length");
  detail::require_binary(alarms, "alarms");
  detail::require_binary(labels, "labels");
  detail::require_both_classes(labels);
  double healthy = 0.0, faulty = 0.0, false_alarms = 0.0, detections = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) {
      healthy += 1.0;
      false_alarms += alarms[i];
    } else {
      faulty += 1.0;
      detections += alarms[i];
    }
  }
  return {false_alarms / healthy, detections / faulty};
}

inline double composite_indicator(double far_t2, double fdr_t2, double far_spe,
                                  double fdr_spe) {
  for (double v : {far_t2, fdr_t2, far_spe, fdr_spe})
    if (v < 0.0 || v > 1.0)
      throw InputError("composite_indicator: rates must lie in [0,1]");
  const double ci_t2 = 0.5 * ((1.0 - far_t2) + fdr_t2);
  const double ci_spe = 0.5 * ((1.0 - far_spe) + fdr_spe);
  return 0.5 * (ci_t2 + ci_spe);
}

// Rank statistic: probability a random faulty sample scores above a random
// healthy one, ties counting one half (average ranks).
inline double auc(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw InputError("auc: scores and labels differ in length");
  detail::require_binary(labels, "labels");
  detail::require_both_classes(labels);
  for (double s : scores)
    if (!std::isfinite(s)) throw InputError("auc: scores must be finite");

  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * (double(i + 1) + double(j + 1));
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  double rank_sum = 0.0, n_pos = 0.0, n_neg = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) {
      rank_sum += rank[k];
      n_pos += 1.0;
    } else {
      n_neg += 1.0;
    }
  }
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

// Harmonic mean of precision and recall with label 1 as the positive class.
inline double f1(const std::vector<int>& alarms, const std::vector<int>& labels) {
  if (alarms.size() != labels.size())
    throw InputError("f1: alarms and labels differ in length");
  detail::require_binary(alarms, "alarms");
  detail::require_binary(labels, "labels");
  detail::require_both_classes(labels);
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (alarms[i] == 1 && labels[i] == 1) tp += 1.0;
    if (alarms[i] == 1 && labels[i] == 0) fp += 1.0;
    if (alarms[i] == 0 && labels[i] == 1) fn += 1.0;
  }
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

}  // namespace kmspc

#endif  // KMSPC_METRICS_HPP
