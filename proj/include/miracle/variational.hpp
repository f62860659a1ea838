#pragma once

#include <cmath>
#include <string>
#include <type_traits>

#include <Eigen/Core>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "miracle/common.hpp"

namespace miracle::vb {

/// log(1 + e^x) without overflow for large |x|.
template <typename Scalar>
  requires std::is_floating_point_v<Scalar>
Scalar softplus(Scalar x) {
  using std::exp;
  using std::log1p;
  return x > Scalar(0) ? x + log1p(exp(-x)) : log1p(exp(x));
}

template <typename Scalar>
  requires std::is_floating_point_v<Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

/// Inverse of softplus, for choosing rho that yields a given stddev.
template <typename Scalar>
  requires std::is_floating_point_v<Scalar>
Scalar inverse_softplus(Scalar y) {
  using std::expm1;
  using std::log;
  return y > Scalar(30) ? y + log(-expm1(-y)) : log(expm1(y));
}

/// log1p for t >= 0 as log(u) * t / (u - 1), u = 1 + t (Kahan). Eigen's own
/// log1p is not vectorised and dominated training time.
template <typename Derived>
typename Derived::PlainObject log1p_nonneg(const Eigen::ArrayBase<Derived>& t) {
  using Scalar = typename Derived::Scalar;
  const typename Derived::PlainObject u = Scalar(1) + t;
  return (u == Scalar(1)).select(t, u.log() * t / (u - Scalar(1)));
}

// Vectorised forms. max(x,0) + log1p(exp(-|x|)) stays finite everywhere.
template <typename Derived>
typename Derived::PlainObject softplus(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.max(Scalar(0)) + log1p_nonneg((-x.abs()).exp().eval());
}

template <typename Derived>
typename Derived::PlainObject sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return (Scalar(1) + (-x).exp()).inverse();
}

/// Fills `m` with N(0,1) draws in storage order. Eigen's NullaryExpr does not
/// promise an evaluation order, so stateful generators go through data().
template <typename Derived, typename Generator>
void fill_standard_normal(Eigen::PlainObjectBase<Derived>& m, Generator& rng) {
  using Scalar = typename Derived::Scalar;
  boost::random::normal_distribution<Scalar> normal;
  Scalar* p = m.data();
  for (Index i = 0; i < m.size(); ++i) p[i] = normal(rng);
}

/// Mean-field Gaussian posterior over a dense affine map y = W x + b, with
/// stddev = softplus(rho) elementwise.
template <typename Scalar>
struct VariationalLinear {
  Matrix<Scalar> mu_w;   // [out x in]
  Matrix<Scalar> rho_w;  // [out x in]
  Vector<Scalar> mu_b;   // [out]
  Vector<Scalar> rho_b;  // [out]

  Index in_features() const { return mu_w.cols(); }
  Index out_features() const { return mu_w.rows(); }
  Index parameter_count() const { return 2 * (mu_w.size() + mu_b.size()); }

  Matrix<Scalar> sigma_w() const { return softplus(rho_w.array()).matrix(); }
  Vector<Scalar> sigma_b() const { return softplus(rho_b.array()).matrix(); }

  void validate() const {
    if (rho_w.rows() != mu_w.rows() || rho_w.cols() != mu_w.cols() || rho_b.size() != mu_b.size() ||
        mu_b.size() != mu_w.rows())
      throw ShapeError("VariationalLinear: inconsistent mu/rho shapes");
  }

  /// mu ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), rho constant.
  template <typename Generator>
  static VariationalLinear init(Index in, Index out, Generator& rng, Scalar rho = Scalar(-5)) {
    if (in <= 0 || out <= 0) throw ShapeError("VariationalLinear: widths must be positive");
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(in));
    boost::random::uniform_real_distribution<Scalar> uniform(-bound, bound);
    VariationalLinear layer;
    layer.mu_w.resize(out, in);
    layer.mu_b.resize(out);
    for (Index i = 0; i < layer.mu_w.size(); ++i) layer.mu_w.data()[i] = uniform(rng);
    for (Index i = 0; i < layer.mu_b.size(); ++i) layer.mu_b.data()[i] = uniform(rng);
    layer.rho_w = Matrix<Scalar>::Constant(out, in, rho);
    layer.rho_b = Vector<Scalar>::Constant(out, rho);
    return layer;
  }

  static VariationalLinear constant(Index in, Index out, Scalar mu, Scalar rho) {
    return {Matrix<Scalar>::Constant(out, in, mu), Matrix<Scalar>::Constant(out, in, rho),
            Vector<Scalar>::Constant(out, mu), Vector<Scalar>::Constant(out, rho)};
  }
};

/// softplus(rho) and its derivative sigmoid(rho). Depends only on the
/// parameters, so one instance serves every Monte Carlo sample between two
/// optimizer steps.
template <typename Scalar>
struct PosteriorScales {
  Matrix<Scalar> sigma_w, dsigma_w;
  Vector<Scalar> sigma_b, dsigma_b;

  explicit PosteriorScales(const VariationalLinear<Scalar>& layer)
      : sigma_w(softplus(layer.rho_w.array()).matrix()),
        dsigma_w(sigmoid(layer.rho_w.array()).matrix()),
        sigma_b(softplus(layer.rho_b.array()).matrix()),
        dsigma_b(sigmoid(layer.rho_b.array()).matrix()) {}
};

/// Gradient with respect to every variational parameter of one layer.
template <typename Scalar>
struct LinearGrad {
  Matrix<Scalar> mu_w, rho_w;
  Vector<Scalar> mu_b, rho_b;

  static LinearGrad zeros_like(const VariationalLinear<Scalar>& layer) {
    return {Matrix<Scalar>::Zero(layer.mu_w.rows(), layer.mu_w.cols()),
            Matrix<Scalar>::Zero(layer.mu_w.rows(), layer.mu_w.cols()),
            Vector<Scalar>::Zero(layer.mu_b.size()), Vector<Scalar>::Zero(layer.mu_b.size())};
  }

  LinearGrad& operator+=(const LinearGrad& other) {
    mu_w += other.mu_w;
    rho_w += other.rho_w;
    mu_b += other.mu_b;
    rho_b += other.rho_b;
    return *this;
  }

  LinearGrad& operator*=(Scalar s) {
    mu_w *= s;
    rho_w *= s;
    mu_b *= s;
    rho_b *= s;
    return *this;
  }
};

/// Noise draws and input of one sampled affine map; enough to replay it.
/// `weight` caches mu + sigma * eps for the backward pass.
template <typename Scalar>
struct LinearTrace {
  Matrix<Scalar> eps_w;   // [out x in]
  Vector<Scalar> eps_b;   // [out]
  Matrix<Scalar> input;   // [in x batch]
  Matrix<Scalar> weight;  // [out x in]
};

namespace detail {

template <typename Scalar>
void check_trace(const VariationalLinear<Scalar>& layer, const LinearTrace<Scalar>& trace, const char* who) {
  if (trace.eps_w.rows() != layer.mu_w.rows() || trace.eps_w.cols() != layer.mu_w.cols() ||
      trace.eps_b.size() != layer.mu_b.size())
    throw StructuralError(std::string(who) + ": trace does not match layer shape");
}

}  // namespace detail

/// y = (mu_w + sigma_w * eps_w) x + (mu_b + sigma_b * eps_b), noise taken from
/// the trace. Fills trace.weight.
template <typename Scalar>
Matrix<Scalar> replay_forward(const VariationalLinear<Scalar>& layer, const PosteriorScales<Scalar>& scales,
                              LinearTrace<Scalar>& trace) {
  detail::check_trace(layer, trace, "replay_forward");
  if (trace.input.rows() != layer.in_features())
    throw ShapeError("replay_forward: input has " + std::to_string(trace.input.rows()) + " rows, layer expects " +
                     std::to_string(layer.in_features()));
  trace.weight = layer.mu_w + (scales.sigma_w.array() * trace.eps_w.array()).matrix();
  Matrix<Scalar> out;
  out.noalias() = trace.weight * trace.input;
  out.colwise() += layer.mu_b + (scales.sigma_b.array() * trace.eps_b.array()).matrix();
  return out;
}

template <typename Scalar>
Matrix<Scalar> replay_forward(const VariationalLinear<Scalar>& layer, LinearTrace<Scalar>& trace) {
  return replay_forward(layer, PosteriorScales<Scalar>(layer), trace);
}

template <typename Scalar>
struct SampledOutput {
  Matrix<Scalar> y;  // [out x batch]
  LinearTrace<Scalar> trace;
};

/// Draws one weight/bias sample and applies it to every column of `x`.
/// Weight noise is drawn before bias noise, both in column-major order.
template <typename Scalar, typename Generator>
SampledOutput<Scalar> sample_forward(const VariationalLinear<Scalar>& layer, const PosteriorScales<Scalar>& scales,
                                     const Matrix<Scalar>& x, Generator& rng) {
  if (x.rows() != layer.in_features())
    throw ShapeError("sample_forward: input width " + std::to_string(x.rows()) + " != layer input width " +
                     std::to_string(layer.in_features()));
  SampledOutput<Scalar> out;
  out.trace.eps_w.resize(layer.mu_w.rows(), layer.mu_w.cols());
  out.trace.eps_b.resize(layer.mu_b.size());
  fill_standard_normal(out.trace.eps_w, rng);
  fill_standard_normal(out.trace.eps_b, rng);
  out.trace.input = x;
  out.y = replay_forward(layer, scales, out.trace);
  return out;
}

template <typename Scalar, typename Generator>
SampledOutput<Scalar> sample_forward(const VariationalLinear<Scalar>& layer, const Matrix<Scalar>& x, Generator& rng) {
  return sample_forward(layer, PosteriorScales<Scalar>(layer), x, rng);
}

template <typename Scalar, typename Generator>
SampledOutput<Scalar> sample_forward(const VariationalLinear<Scalar>& layer, const Vector<Scalar>& x, Generator& rng) {
  return sample_forward(layer, PosteriorScales<Scalar>(layer), Matrix<Scalar>(x), rng);
}

template <typename Scalar>
struct LinearBackward {
  LinearGrad<Scalar> grad;
  Matrix<Scalar> input_grad;  // [in x batch]
};

/// Exact gradients of a sampled forward pass; `upstream` is dL/dy [out x batch].
/// mu receives dL/dW directly, rho receives dL/dW * eps * sigmoid(rho).
template <typename Scalar>
LinearBackward<Scalar> linear_backward(const VariationalLinear<Scalar>& layer, const PosteriorScales<Scalar>& scales,
                                       const LinearTrace<Scalar>& trace, const Matrix<Scalar>& upstream) {
  detail::check_trace(layer, trace, "linear_backward");
  if (upstream.rows() != layer.out_features() || upstream.cols() != trace.input.cols())
    throw StructuralError("linear_backward: upstream gradient shape does not match trace");
  LinearBackward<Scalar> out;
  auto& g = out.grad;
  g.mu_w.noalias() = upstream * trace.input.transpose();
  g.rho_w = (g.mu_w.array() * trace.eps_w.array() * scales.dsigma_w.array()).matrix();
  g.mu_b = upstream.rowwise().sum();
  g.rho_b = (g.mu_b.array() * trace.eps_b.array() * scales.dsigma_b.array()).matrix();
  if (trace.weight.rows() == layer.mu_w.rows() && trace.weight.cols() == layer.mu_w.cols()) {
    out.input_grad.noalias() = trace.weight.transpose() * upstream;
  } else {
    const Matrix<Scalar> w = layer.mu_w + (scales.sigma_w.array() * trace.eps_w.array()).matrix();
    out.input_grad.noalias() = w.transpose() * upstream;
  }
  return out;
}

/// linear_backward that adds into `acc` instead of allocating a fresh
/// gradient. Returns dL/dx, or an empty matrix when `want_input_grad` is false.
template <typename Scalar>
Matrix<Scalar> linear_backward_accumulate(const VariationalLinear<Scalar>& layer, const PosteriorScales<Scalar>& scales,
                                          const LinearTrace<Scalar>& trace, const Matrix<Scalar>& upstream,
                                          LinearGrad<Scalar>& acc, bool want_input_grad = true) {
  detail::check_trace(layer, trace, "linear_backward_accumulate");
  if (upstream.rows() != layer.out_features() || upstream.cols() != trace.input.cols())
    throw StructuralError("linear_backward_accumulate: upstream gradient shape does not match trace");
  Matrix<Scalar> g_w;
  g_w.noalias() = upstream * trace.input.transpose();
  acc.mu_w += g_w;
  acc.rho_w.array() += g_w.array() * trace.eps_w.array() * scales.dsigma_w.array();
  const Vector<Scalar> g_b = upstream.rowwise().sum();
  acc.mu_b += g_b;
  acc.rho_b.array() += g_b.array() * trace.eps_b.array() * scales.dsigma_b.array();
  Matrix<Scalar> input_grad;
  if (!want_input_grad) return input_grad;
  if (trace.weight.rows() == layer.mu_w.rows() && trace.weight.cols() == layer.mu_w.cols()) {
    input_grad.noalias() = trace.weight.transpose() * upstream;
  } else {
    const Matrix<Scalar> w = layer.mu_w + (scales.sigma_w.array() * trace.eps_w.array()).matrix();
    input_grad.noalias() = w.transpose() * upstream;
  }
  return input_grad;
}

template <typename Scalar>
LinearBackward<Scalar> linear_backward(const VariationalLinear<Scalar>& layer, const LinearTrace<Scalar>& trace,
                                       const Matrix<Scalar>& upstream) {
  return linear_backward(layer, PosteriorScales<Scalar>(layer), trace, upstream);
}

/// KL(q || N(0,1)) summed over every weight and bias entry:
/// sum 0.5 * (mu^2 + sigma^2 - ln sigma^2 - 1).
template <typename Scalar>
Scalar kl_to_standard_normal(const VariationalLinear<Scalar>& layer) {
  auto term = [](const auto& mu, const auto& rho) {
    const auto sigma = softplus(rho.array());
    return (Scalar(0.5) * (mu.array().square() + sigma.square() - sigma.square().log() - Scalar(1))).sum();
  };
  return term(layer.mu_w, layer.rho_w) + term(layer.mu_b, layer.rho_b);
}

/// Same value from precomputed scales.
template <typename Scalar>
Scalar kl_to_standard_normal(const VariationalLinear<Scalar>& layer, const PosteriorScales<Scalar>& scales) {
  auto term = [](const auto& mu, const auto& sigma) {
    return (Scalar(0.5) * (mu.array().square() + sigma.array().square() - Scalar(2) * sigma.array().log() - Scalar(1)))
        .sum();
  };
  return term(layer.mu_w, scales.sigma_w) + term(layer.mu_b, scales.sigma_b);
}

/// dKL/dmu = mu, dKL/drho = (sigma - 1/sigma) * sigmoid(rho).
template <typename Scalar>
LinearGrad<Scalar> kl_gradient(const VariationalLinear<Scalar>& layer) {
  auto drho = [](const auto& rho) {
    const auto sigma = softplus(rho.array());
    return ((sigma - sigma.inverse()) * sigmoid(rho.array())).matrix().eval();
  };
  return {layer.mu_w, drho(layer.rho_w), layer.mu_b, drho(layer.rho_b)};
}

/// grad += scale * dKL/dparams, from precomputed scales.
template <typename Scalar>
void add_kl_gradient(const VariationalLinear<Scalar>& layer, const PosteriorScales<Scalar>& scales, Scalar scale,
                     LinearGrad<Scalar>& grad) {
  grad.mu_w += scale * layer.mu_w;
  grad.mu_b += scale * layer.mu_b;
  grad.rho_w.array() += scale * (scales.sigma_w.array() - scales.sigma_w.array().inverse()) * scales.dsigma_w.array();
  grad.rho_b.array() += scale * (scales.sigma_b.array() - scales.sigma_b.array().inverse()) * scales.dsigma_b.array();
}

}  // namespace miracle::vb
