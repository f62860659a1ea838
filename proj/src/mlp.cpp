#include "miracle/mlp.hpp"

namespace miracle::vb {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "' (expected relu|identity)");
}

Activation MlpSpec::activation(std::size_t layer) const {
  if (!activations.empty()) return activations.at(layer);
  return layer + 1 == depth() ? Activation::identity : Activation::relu;
}

void MlpSpec::validate() const {
  if (layer_dims.empty()) throw ConfigError("MlpSpec needs at least one layer");
  for (Index d : layer_dims)
    if (d < 1) throw ConfigError("MlpSpec layer widths must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
  if (!activations.empty()) {
    if (activations.size() != layer_dims.size())
      throw ConfigError("MlpSpec lists " + std::to_string(activations.size()) + " activations for " +
                        std::to_string(layer_dims.size()) + " layers");
    if (activations.back() != Activation::identity) throw ConfigError("the final layer activation must be identity");
  }
  if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
  if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be nonnegative");
}

}  // namespace miracle::vb
