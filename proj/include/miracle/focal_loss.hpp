#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "miracle/common.hpp"
#include "miracle/variational.hpp"

namespace miracle::objectives {

struct FocalParams {
  double alpha = 0.8;  // weight on positives; negatives get 1 - alpha
  double gamma = 4.0;  // focusing exponent

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("focal alpha must lie in (0,1)");
    if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be nonnegative");
  }
};

inline constexpr double kProbabilityClamp = 1e-7;

namespace detail {
inline void check_label(int y) {
  if (y != 0 && y != 1) throw InputError("label must be 0 or 1, got " + std::to_string(y));
}
}  // namespace detail

/// alpha_t * (1 - p_t)^gamma * (-ln p_t), with p_hat clamped to
/// [1e-7, 1 - 1e-7] before the log.
template <typename Scalar>
Scalar focal_loss(Scalar p_hat, int y, const FocalParams& params) {
  detail::check_label(y);
  const Scalar lo = static_cast<Scalar>(kProbabilityClamp);
  const Scalar p = std::clamp(p_hat, lo, Scalar(1) - lo);
  const Scalar p_t = y == 1 ? p : Scalar(1) - p;
  const Scalar a_t = static_cast<Scalar>(y == 1 ? params.alpha : 1.0 - params.alpha);
  return a_t * std::pow(Scalar(1) - p_t, static_cast<Scalar>(params.gamma)) * -std::log(p_t);
}

/// Focal loss evaluated from a logit without clamping: ln p_t = -softplus(-/+z).
/// Finite for every logit, and the function whose derivative focal_loss_grad returns.
template <typename Scalar>
Scalar focal_loss_from_logit(Scalar logit, int y, const FocalParams& params) {
  detail::check_label(y);
  const Scalar z = y == 1 ? logit : -logit;  // p_t = sigmoid(z)
  const Scalar log_pt = -vb::softplus(-z);
  const Scalar one_minus_pt = vb::sigmoid(-z);
  const Scalar a_t = static_cast<Scalar>(y == 1 ? params.alpha : 1.0 - params.alpha);
  return a_t * std::pow(one_minus_pt, static_cast<Scalar>(params.gamma)) * -log_pt;
}

/// d focal / d logit = s * alpha_t * (1 - p_t)^gamma * (gamma * p_t * ln p_t - (1 - p_t)),
/// s = +1 for positives, -1 for negatives.
template <typename Scalar>
Scalar focal_loss_grad(Scalar logit, int y, const FocalParams& params) {
  detail::check_label(y);
  const Scalar sign = y == 1 ? Scalar(1) : Scalar(-1);
  const Scalar z = sign * logit;
  const Scalar p_t = vb::sigmoid(z);
  const Scalar one_minus_pt = vb::sigmoid(-z);
  const Scalar log_pt = -vb::softplus(-z);
  const Scalar a_t = static_cast<Scalar>(y == 1 ? params.alpha : 1.0 - params.alpha);
  const Scalar g = static_cast<Scalar>(params.gamma);
  return sign * a_t * std::pow(one_minus_pt, g) * (g * p_t * log_pt - one_minus_pt);
}

/// Mean focal loss over the batch plus kl_weight * total_kl.
template <typename Scalar>
Scalar batch_objective(std::span<const Scalar> p_hats, std::span<const int> ys, const FocalParams& params,
                       Scalar total_kl, Scalar kl_weight) {
  if (p_hats.size() != ys.size()) throw InputError("batch_objective: predictions and labels differ in length");
  if (p_hats.empty()) throw InputError("batch_objective: empty batch");
  Scalar sum = 0;
  for (std::size_t i = 0; i < p_hats.size(); ++i) sum += focal_loss(p_hats[i], ys[i], params);
  return sum / static_cast<Scalar>(p_hats.size()) + kl_weight * total_kl;
}

}  // namespace miracle::objectives
