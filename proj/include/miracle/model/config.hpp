#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miracle/adam.hpp"
#include "miracle/focal_loss.hpp"
#include "miracle/mlp.hpp"
#include "miracle/remarks/embedding.hpp"

namespace miracle::model {

enum class Ablation { clinical_only, clinical_radiomic, full };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

inline bool uses_radiomic(Ablation a) { return a != Ablation::clinical_only; }
inline bool uses_remark(Ablation a) { return a == Ablation::full; }

struct FusionWeights {
  double w_c = 0.5;
  double w_r = 0.25;
  double w_m = 0.25;

  void validate() const;
  /// Scaled to sum to one.
  FusionWeights normalized() const;
  /// Disabled channels set to 0, the rest renormalised.
  FusionWeights for_ablation(Ablation a) const;

  bool operator==(const FusionWeights&) const = default;
};

/// w_c * E_c + w_r * E_r + w_m * E_m, elementwise. Works column-wise on matrices.
template <typename A, typename B, typename C>
Matrix<typename A::Scalar> fuse(const Eigen::MatrixBase<A>& e_c, const Eigen::MatrixBase<B>& e_r,
                                const Eigen::MatrixBase<C>& e_m, const FusionWeights& w) {
  if (e_c.rows() != e_r.rows() || e_c.rows() != e_m.rows() || e_c.cols() != e_r.cols() || e_c.cols() != e_m.cols())
    throw ShapeError("fuse: embeddings differ in shape");
  using S = typename A::Scalar;
  return static_cast<S>(w.w_c) * e_c + static_cast<S>(w.w_r) * e_r + static_cast<S>(w.w_m) * e_m;
}

struct EmbedderConfig {
  std::string kind = "hashing";  // hashing | external
  std::uint64_t hash_seed = remarks::HashingEmbedder::kDefaultSeed;
  std::string url;    // external only
  std::string model;  // external only
  std::uint64_t projection_seed = remarks::FrozenProjection::kDefaultSeed;
};

/// Builds f_m for the configuration. External embedders read their API key
/// from MIRACLE_EMBED_API_KEY.
std::shared_ptr<const remarks::RemarkEncoder> make_remark_encoder(const EmbedderConfig& config);

struct MiracleConfig {
  std::vector<Index> clinical_layers{64, 128, 256, 768};
  std::vector<Index> radiomic_layers{256, 768};
  std::vector<Index> classifier_layers{256, 1024, 1};
  double dropout = 0.3;
  int mc_samples = 10;
  double kl_weight = 1e-6;
  double rho_init = -5.0;
  FusionWeights fusion;
  bool normalize_embeddings = false;
  objectives::FocalParams focal;
  Ablation ablation = Ablation::full;
  vb::AdamConfig optimizer;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 10;
  std::uint64_t seed = 7;
  EmbedderConfig embedder;

  vb::MlpSpec clinical_spec() const;
  vb::MlpSpec radiomic_spec() const;
  vb::MlpSpec classifier_spec() const;
  /// Fusion weights after the ablation rule.
  FusionWeights effective_fusion() const { return fusion.for_ablation(ablation); }

  void validate() const;
  nlohmann::json to_json() const;
  /// Starts from the defaults and overrides the keys present in `j`. Unknown
  /// keys are a ConfigError.
  static MiracleConfig from_json(const nlohmann::json& j);
};

/// Parses a config document: either a JSON object or "key = value" lines
/// with dotted keys for nesting ("fusion.w_c = 0.5") and '#' comments.
/// Values parse as JSON when they can and as bare strings otherwise.
nlohmann::json parse_config_document(const std::string& text);
nlohmann::json read_config_document(const std::filesystem::path& path);

}  // namespace miracle::model
