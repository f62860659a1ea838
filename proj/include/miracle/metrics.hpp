#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miracle/common.hpp"

namespace miracle::metrics {

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  double threshold = 0;  // predict positive when score >= threshold
};

/// Empirical step ROC, ordered from threshold +inf (0,0) down to the lowest
/// score (1,1). Tied scores enter together and form a diagonal segment.
struct RocCurve {
  std::vector<RocPoint> points;
};

struct ClassCounts {
  long n_pos = 0;
  long n_neg = 0;
};

inline ClassCounts count_classes(std::span<const int> labels) {
  ClassCounts c;
  for (int y : labels) {
    if (y == 1)
      ++c.n_pos;
    else if (y == 0)
      ++c.n_neg;
    else
      throw InputError("labels must be 0 or 1, got " + std::to_string(y));
  }
  return c;
}

namespace detail {

template <typename Scalar>
ClassCounts check_inputs(std::span<const Scalar> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
  auto c = count_classes(labels);
  if (c.n_pos == 0 || c.n_neg == 0)
    throw EvaluationError("evaluation needs both classes (positives=" + std::to_string(c.n_pos) +
                          ", negatives=" + std::to_string(c.n_neg) + ")");
  return c;
}

template <typename Scalar>
std::vector<std::size_t> order_by_score(std::span<const Scalar> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace detail

template <typename Scalar>
RocCurve roc_curve(std::span<const Scalar> scores, std::span<const int> labels) {
  const auto counts = detail::check_inputs(scores, labels);
  const auto idx = detail::order_by_score(scores, /*descending=*/true);
  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const Scalar s = scores[idx[i]];
    for (; i < idx.size() && scores[idx[i]] == s; ++i) (labels[idx[i]] == 1 ? tp : fp)++;
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(counts.n_neg),
                          static_cast<double>(tp) / static_cast<double>(counts.n_pos), static_cast<double>(s)});
  }
  return roc;
}

/// Mann-Whitney: (#concordant + 0.5 * #tied) / (n_pos * n_neg).
template <typename Scalar>
double auc(std::span<const Scalar> scores, std::span<const int> labels) {
  const auto counts = detail::check_inputs(scores, labels);
  const auto idx = detail::order_by_score(scores, /*descending=*/false);
  long long concordant = 0, tied = 0, negatives_below = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const Scalar s = scores[idx[i]];
    long long pos = 0, neg = 0;
    for (; i < idx.size() && scores[idx[i]] == s; ++i) (labels[idx[i]] == 1 ? pos : neg)++;
    concordant += pos * negatives_below;
    tied += pos * neg;
    negatives_below += neg;
  }
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
         (static_cast<double>(counts.n_pos) * static_cast<double>(counts.n_neg));
}

/// Area under a ROC polyline by the trapezoid rule.
inline double trapezoid_auc(const RocCurve& roc) {
  double area = 0;
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& a = roc.points[i - 1];
    const auto& b = roc.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

/// Largest empirical TPR over realisable thresholds with FPR <= fpr_cap. No
/// interpolation between ROC vertices.
inline double tpr_at_fpr(const RocCurve& roc, double fpr_cap) {
  if (!(fpr_cap > 0.0 && fpr_cap < 1.0)) throw InputError("fpr_cap must lie in (0,1)");
  double best = 0;
  for (const auto& p : roc.points)
    if (p.fpr <= fpr_cap) best = std::max(best, p.tpr);
  return best;
}

template <typename Scalar>
double tpr_at_fpr(std::span<const Scalar> scores, std::span<const int> labels, double fpr_cap) {
  if (!(fpr_cap > 0.0 && fpr_cap < 1.0)) throw InputError("fpr_cap must lie in (0,1)");
  return tpr_at_fpr(roc_curve(scores, labels), fpr_cap);
}

inline const std::vector<double>& default_fpr_caps() {
  static const std::vector<double> caps{0.2, 0.3};
  return caps;
}

struct EvalReport {
  double auc = 0;
  std::map<double, double> tpr_at_fpr;
  RocCurve roc;
  long n_pos = 0;
  long n_neg = 0;
};

template <typename Scalar>
EvalReport evaluate(std::span<const Scalar> scores, std::span<const int> labels,
                    const std::vector<double>& fpr_caps = default_fpr_caps()) {
  EvalReport r;
  r.roc = roc_curve(scores, labels);
  r.auc = auc(scores, labels);
  for (double cap : fpr_caps) r.tpr_at_fpr[cap] = tpr_at_fpr(r.roc, cap);
  const auto c = count_classes(labels);
  r.n_pos = c.n_pos;
  r.n_neg = c.n_neg;
  return r;
}

/// Cap keys render as "0.2", "0.3". The +inf threshold of the first ROC point
/// serialises as null.
nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// "threshold,fpr,tpr" rows; the +inf threshold is written as "inf".
std::string roc_to_csv(const RocCurve& roc);

std::string format_cap(double cap);

}  // namespace miracle::metrics
