#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miracle/data/codec.hpp"
#include "miracle/model/config.hpp"
#include "miracle/remarks/completion.hpp"

namespace miracle::model {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double val_auc = 0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0: parameters are the initialisation
  double best_val_auc = 0;
  bool stopped_early = false;

  nlohmann::json to_json() const;
  static TrainingHistory from_json(const nlohmann::json& j);
  /// epoch,train_loss,val_auc
  std::string to_csv() const;

  bool operator==(const TrainingHistory&) const = default;
};

struct NetworkScales {
  vb::MlpScales<Real> clinical, radiomic, classifier;
};

/// Encoders, classifier and everything needed to turn a raw record into a
/// probability. Immutable once prepared; predict and intervene only read it.
struct MiracleModel {
  MiracleConfig config;
  data::FeatureCodec codec;
  vb::MlpLayers<Real> clinical;
  vb::MlpLayers<Real> radiomic;  // empty under clinical_only
  vb::MlpLayers<Real> classifier;
  std::shared_ptr<const remarks::RemarkEncoder> remark_encoder;
  TrainingHistory history;
  std::uint64_t validation_seed = 0;

  /// Recomputes the cached posterior scales. Call after editing parameters.
  void prepare();
  const NetworkScales& scales() const;
  Index parameter_count() const;

 private:
  std::shared_ptr<const NetworkScales> scales_;
};

/// Fresh model with initial parameters drawn from the config seed.
MiracleModel build_model(const MiracleConfig& config, data::FeatureCodec codec,
                         std::shared_ptr<const remarks::RemarkEncoder> remark_encoder = nullptr);

/// Per-request seed when none is given.
inline std::uint64_t default_seed(const std::string& patient_id) { return fnv1a64(patient_id); }
/// default_seed, or a salted variant of it when a run-level seed is given.
inline std::uint64_t request_seed(const std::string& patient_id, std::optional<std::uint64_t> salt) {
  return salt ? mix_seed(*salt, default_seed(patient_id)) : default_seed(patient_id);
}

struct PredictionResult {
  std::string patient_id;
  double probability = 0;
  double mc_std = 0;  // population stddev over the S sample probabilities
  VectorXr sample_probabilities;
  remarks::Remark remark;
  MatrixXr E_c;  // 768 x S, column s is Monte Carlo sample s
  MatrixXr E_r;  // 768 x S, empty under clinical_only
  VectorXr E_m;  // 768, empty unless the remark channel is active
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  /// Embeddings are reported as per-channel means over samples, and only
  /// when requested.
  nlohmann::json to_json(bool include_embeddings = false) const;
};

PredictionResult predict(const MiracleModel& model, const data::PatientRecord& record,
                         const remarks::Remark& remark, std::optional<std::uint64_t> seed = std::nullopt);

/// Re-embeds `edited_text`, keeps E_c and E_r from `prior`, and reruns fusion
/// and the classifier with prior.seed.
PredictionResult intervene(const MiracleModel& model, const PredictionResult& prior, const std::string& edited_text);

/// f_m applied to each remark: [768 x n].
MatrixXr embed_remarks(const MiracleModel& model, std::span<const remarks::Remark> remarks);

/// Probabilities for many records under one shared seed, one weight draw per
/// sample for the whole batch. `remark_embeddings` is ignored unless the
/// remark channel is active.
std::vector<double> score_batch(const MiracleModel& model, std::span<const data::PatientRecord> records,
                                const MatrixXr& remark_embeddings, std::uint64_t seed);

/// Probabilities with each record under its own default_seed, matching predict.
std::vector<double> score_each(const MiracleModel& model, std::span<const data::PatientRecord> records,
                               const MatrixXr& remark_embeddings);

/// FNV-1a over every variational parameter, as 16 hex digits.
std::string parameter_checksum(const MiracleModel& model);

/// d, S, fusion weights, ablation, embedder and checkpoint metadata.
nlohmann::json model_info(const MiracleModel& model);

namespace detail {

/// Columns scaled to unit length; zero columns stay zero.
MatrixXr unit_columns(const MatrixXr& x);
/// Gradient of unit_columns at `x` applied to upstream `g`.
MatrixXr unit_columns_backward(const MatrixXr& x, const MatrixXr& g);

/// Fused classifier input for one Monte Carlo sample. Absent channels are
/// passed as empty matrices; `e_m` is broadcast across columns when it has one.
MatrixXr fuse_sample(const MiracleConfig& config, const MatrixXr& e_c, const MatrixXr& e_r, const MatrixXr& e_m);

}  // namespace detail

}  // namespace miracle::model
