#pragma once

#include <cmath>

#include "miracle/mlp.hpp"

namespace miracle::vb {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment estimates for every parameter of one network.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(const MlpLayers<Scalar>& layers, AdamConfig config)
      : config_(config), m_(zero_grad(layers)), v_(zero_grad(layers)) {}

  void step(MlpLayers<Scalar>& layers, const MlpGrad<Scalar>& grads) {
    ++t_;
    const Scalar b1 = static_cast<Scalar>(config_.beta1);
    const Scalar b2 = static_cast<Scalar>(config_.beta2);
    const Scalar lr = static_cast<Scalar>(config_.learning_rate);
    const Scalar eps = static_cast<Scalar>(config_.epsilon);
    const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(t_));
    const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(t_));
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = b1 * m + (Scalar(1) - b1) * g;
      v.array() = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
      param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l].mu_w, m_[l].mu_w, v_[l].mu_w, grads[l].mu_w);
      update(layers[l].rho_w, m_[l].rho_w, v_[l].rho_w, grads[l].rho_w);
      update(layers[l].mu_b, m_[l].mu_b, v_[l].mu_b, grads[l].mu_b);
      update(layers[l].rho_b, m_[l].rho_b, v_[l].rho_b, grads[l].rho_b);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig config_;
  MlpGrad<Scalar> m_, v_;
  long t_ = 0;
};

}  // namespace miracle::vb
