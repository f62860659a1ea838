#pragma once

#include <string>
#include <vector>

#include <boost/random/uniform_01.hpp>

#include "miracle/variational.hpp"

namespace miracle::vb {

enum class Activation { relu, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Shape and regularisation settings for a stack of variational layers.
struct MlpSpec {
  std::vector<Index> layer_dims;         // output width of each layer
  double dropout_rate = 0.3;             // hidden layers only, training only
  std::vector<Activation> activations;   // empty: relu on hidden, identity on last
  int mc_samples = 10;
  double kl_weight = 1e-6;

  std::size_t depth() const { return layer_dims.size(); }
  Activation activation(std::size_t layer) const;
  Index output_dim() const { return layer_dims.empty() ? 0 : layer_dims.back(); }
  void validate() const;

  static MlpSpec clinical_default() { return {{64, 128, 256, 768}}; }
  static MlpSpec radiomic_default() { return {{256, 768}}; }
  static MlpSpec classifier_default() { return {{256, 1024, 1}}; }
};

template <typename Scalar>
using MlpLayers = std::vector<VariationalLinear<Scalar>>;

template <typename Scalar>
using MlpGrad = std::vector<LinearGrad<Scalar>>;

template <typename Scalar>
using MlpScales = std::vector<PosteriorScales<Scalar>>;

template <typename Scalar>
MlpScales<Scalar> posterior_scales(const MlpLayers<Scalar>& layers) {
  MlpScales<Scalar> scales;
  scales.reserve(layers.size());
  for (const auto& layer : layers) scales.emplace_back(layer);
  return scales;
}

template <typename Scalar, typename Generator>
MlpLayers<Scalar> build_mlp(const MlpSpec& spec, Index input_dim, Generator& rng, Scalar rho_init = Scalar(-5)) {
  spec.validate();
  MlpLayers<Scalar> layers;
  Index in = input_dim;
  for (Index out : spec.layer_dims) {
    layers.push_back(VariationalLinear<Scalar>::init(in, out, rng, rho_init));
    in = out;
  }
  return layers;
}

template <typename Scalar>
struct MlpLayerTrace {
  LinearTrace<Scalar> linear;
  Matrix<Scalar> pre_activation;  // [out x batch]
  Matrix<Scalar> mask;            // dropout multipliers; empty on the final layer
};

/// Everything needed to backpropagate (or replay) one Monte Carlo sample.
template <typename Scalar>
struct MlpTrace {
  std::vector<MlpLayerTrace<Scalar>> layers;
  bool training = false;
};

template <typename Scalar>
struct MlpOutput {
  Matrix<Scalar> y;
  MlpTrace<Scalar> trace;
};

namespace detail {

template <typename Scalar>
void check_chain(const MlpSpec& spec, const MlpLayers<Scalar>& layers, Index input_rows) {
  if (layers.size() != spec.depth())
    throw ShapeError("mlp: spec has " + std::to_string(spec.depth()) + " layers, got " +
                     std::to_string(layers.size()));
  Index in = input_rows;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (layers[l].in_features() != in || layers[l].out_features() != spec.layer_dims[l])
      throw ShapeError("mlp: layer " + std::to_string(l) + " is " + std::to_string(layers[l].in_features()) + "->" +
                       std::to_string(layers[l].out_features()) + ", chain expects " + std::to_string(in) + "->" +
                       std::to_string(spec.layer_dims[l]));
    in = layers[l].out_features();
  }
}

template <typename Scalar>
Matrix<Scalar> activate(Activation a, const Matrix<Scalar>& z) {
  if (a == Activation::relu) return z.cwiseMax(Scalar(0));
  return z;
}

}  // namespace detail

/// One Monte Carlo pass: per layer sample_forward, activation, then inverted
/// dropout on hidden layers while training. Columns of `x` are examples and
/// share the weight draw.
template <typename Scalar, typename Generator>
MlpOutput<Scalar> mlp_forward(const MlpSpec& spec, const MlpLayers<Scalar>& layers, const MlpScales<Scalar>& scales,
                              const Matrix<Scalar>& x, Generator& rng, bool training) {
  detail::check_chain(spec, layers, x.rows());
  if (scales.size() != layers.size()) throw StructuralError("mlp_forward: scales/layers depth mismatch");
  MlpOutput<Scalar> out;
  out.trace.training = training;
  out.trace.layers.reserve(layers.size());
  const Scalar keep = Scalar(1) - static_cast<Scalar>(spec.dropout_rate);
  boost::random::uniform_01<Scalar> uniform;

  Matrix<Scalar> h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto sampled = sample_forward(layers[l], scales[l], h, rng);
    MlpLayerTrace<Scalar> lt;
    lt.linear = std::move(sampled.trace);
    lt.pre_activation = std::move(sampled.y);
    h = detail::activate(spec.activation(l), lt.pre_activation);
    const bool last = l + 1 == layers.size();
    if (!last) {
      lt.mask = Matrix<Scalar>::Ones(h.rows(), h.cols());
      if (training && spec.dropout_rate > 0) {
        Scalar* m = lt.mask.data();
        for (Index i = 0; i < lt.mask.size(); ++i) m[i] = uniform(rng) < keep ? Scalar(1) / keep : Scalar(0);
      }
      h.array() *= lt.mask.array();
    }
    out.trace.layers.push_back(std::move(lt));
  }
  out.y = std::move(h);
  return out;
}

template <typename Scalar, typename Generator>
MlpOutput<Scalar> mlp_forward(const MlpSpec& spec, const MlpLayers<Scalar>& layers, const Matrix<Scalar>& x,
                              Generator& rng, bool training) {
  return mlp_forward(spec, layers, posterior_scales(layers), x, rng, training);
}

template <typename Scalar, typename Generator>
MlpOutput<Scalar> mlp_forward(const MlpSpec& spec, const MlpLayers<Scalar>& layers, const Vector<Scalar>& x,
                              Generator& rng, bool training) {
  return mlp_forward(spec, layers, posterior_scales(layers), Matrix<Scalar>(x), rng, training);
}

/// Recomputes a forward pass from `x` using the noise and masks recorded in
/// `trace`. With unchanged parameters this reproduces the original output
/// exactly; with perturbed parameters it is the finite-difference oracle path.
template <typename Scalar>
Matrix<Scalar> mlp_replay(const MlpSpec& spec, const MlpLayers<Scalar>& layers, const MlpTrace<Scalar>& trace,
                          const Matrix<Scalar>& x) {
  detail::check_chain(spec, layers, x.rows());
  if (trace.layers.size() != layers.size()) throw StructuralError("mlp_replay: trace depth mismatch");
  Matrix<Scalar> h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    LinearTrace<Scalar> lt{trace.layers[l].linear.eps_w, trace.layers[l].linear.eps_b, std::move(h), {}};
    h = detail::activate(spec.activation(l), replay_forward(layers[l], lt));
    if (l + 1 != layers.size()) {
      if (trace.layers[l].mask.rows() != h.rows() || trace.layers[l].mask.cols() != h.cols())
        throw StructuralError("mlp_replay: dropout mask shape mismatch at layer " + std::to_string(l));
      h.array() *= trace.layers[l].mask.array();
    }
  }
  return h;
}

template <typename Scalar>
struct MlpBackward {
  MlpGrad<Scalar> grads;
  Matrix<Scalar> input_grad;
};

/// Reverse pass through one recorded Monte Carlo sample.
template <typename Scalar>
MlpBackward<Scalar> mlp_backward(const MlpSpec& spec, const MlpLayers<Scalar>& layers, const MlpScales<Scalar>& scales,
                                 const MlpTrace<Scalar>& trace, const Matrix<Scalar>& upstream) {
  if (trace.layers.size() != layers.size() || layers.size() != spec.depth() || scales.size() != layers.size())
    throw StructuralError("mlp_backward: trace/spec/layers depth mismatch");
  MlpBackward<Scalar> out;
  out.grads.resize(layers.size());
  Matrix<Scalar> g = upstream;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& lt = trace.layers[k];
    if (g.rows() != lt.pre_activation.rows() || g.cols() != lt.pre_activation.cols())
      throw StructuralError("mlp_backward: gradient shape mismatch at layer " + std::to_string(k));
    if (k + 1 != layers.size()) g.array() *= lt.mask.array();
    if (spec.activation(k) == Activation::relu)
      g = (lt.pre_activation.array() > Scalar(0)).select(g, Scalar(0));
    auto back = linear_backward(layers[k], scales[k], lt.linear, g);
    out.grads[k] = std::move(back.grad);
    g = std::move(back.input_grad);
  }
  out.input_grad = std::move(g);
  return out;
}

template <typename Scalar>
MlpBackward<Scalar> mlp_backward(const MlpSpec& spec, const MlpLayers<Scalar>& layers, const MlpTrace<Scalar>& trace,
                                 const Matrix<Scalar>& upstream) {
  return mlp_backward(spec, layers, posterior_scales(layers), trace, upstream);
}

/// mlp_backward that adds parameter gradients into `acc`. The input gradient
/// is skipped (empty) when `want_input_grad` is false.
template <typename Scalar>
Matrix<Scalar> mlp_backward_accumulate(const MlpSpec& spec, const MlpLayers<Scalar>& layers,
                                       const MlpScales<Scalar>& scales, const MlpTrace<Scalar>& trace,
                                       const Matrix<Scalar>& upstream, MlpGrad<Scalar>& acc,
                                       bool want_input_grad = true) {
  if (trace.layers.size() != layers.size() || layers.size() != spec.depth() || scales.size() != layers.size() ||
      acc.size() != layers.size())
    throw StructuralError("mlp_backward_accumulate: trace/spec/layers/accumulator depth mismatch");
  Matrix<Scalar> g = upstream;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& lt = trace.layers[k];
    if (g.rows() != lt.pre_activation.rows() || g.cols() != lt.pre_activation.cols())
      throw StructuralError("mlp_backward_accumulate: gradient shape mismatch at layer " + std::to_string(k));
    if (k + 1 != layers.size()) g.array() *= lt.mask.array();
    if (spec.activation(k) == Activation::relu)
      g = (lt.pre_activation.array() > Scalar(0)).select(g, Scalar(0));
    g = linear_backward_accumulate(layers[k], scales[k], lt.linear, g, acc[k], k > 0 || want_input_grad);
  }
  return g;
}

template <typename Scalar>
Scalar mlp_kl(const MlpLayers<Scalar>& layers) {
  Scalar total = 0;
  for (const auto& layer : layers) total += kl_to_standard_normal(layer);
  return total;
}

template <typename Scalar>
Scalar mlp_kl(const MlpLayers<Scalar>& layers, const MlpScales<Scalar>& scales) {
  Scalar total = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) total += kl_to_standard_normal(layers[l], scales[l]);
  return total;
}

/// grads += scale * dKL/dparams, from precomputed scales.
template <typename Scalar>
void add_kl_gradient(const MlpLayers<Scalar>& layers, const MlpScales<Scalar>& scales, Scalar scale,
                     MlpGrad<Scalar>& grads) {
  for (std::size_t l = 0; l < layers.size(); ++l) add_kl_gradient(layers[l], scales[l], scale, grads[l]);
}

template <typename Scalar>
MlpGrad<Scalar> zero_grad(const MlpLayers<Scalar>& layers) {
  MlpGrad<Scalar> g;
  g.reserve(layers.size());
  for (const auto& layer : layers) g.push_back(LinearGrad<Scalar>::zeros_like(layer));
  return g;
}

/// grads += scale * dKL/dparams
template <typename Scalar>
void add_kl_gradient(const MlpLayers<Scalar>& layers, Scalar scale, MlpGrad<Scalar>& grads) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto kg = kl_gradient(layers[l]);
    kg *= scale;
    grads[l] += kg;
  }
}

template <typename Scalar>
void accumulate(MlpGrad<Scalar>& into, const MlpGrad<Scalar>& g, Scalar scale = Scalar(1)) {
  for (std::size_t l = 0; l < into.size(); ++l) {
    into[l].mu_w += scale * g[l].mu_w;
    into[l].rho_w += scale * g[l].rho_w;
    into[l].mu_b += scale * g[l].mu_b;
    into[l].rho_b += scale * g[l].rho_b;
  }
}

}  // namespace miracle::vb
