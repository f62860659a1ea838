#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miracle/model/train.hpp"

namespace miracle::model {

struct AblationRow {
  Ablation mode = Ablation::full;
  metrics::EvalReport report;  // on split.test
  TrainingHistory history;
};

/// Trains one model per mode with the same seed and evaluates each on the test split.
std::vector<AblationRow> ablate(const data::DatasetSplit& split, const RemarkMap& remarks, const MiracleConfig& config,
                                std::span<const Ablation> modes, const TrainOptions& options = {});

nlohmann::json ablation_to_json(std::span<const AblationRow> rows);
/// mode,auc,tpr_at_fpr_0.2,tpr_at_fpr_0.3
std::string ablation_to_csv(std::span<const AblationRow> rows);

struct FusionCandidate {
  FusionWeights weights;
  double val_auc = 0;
};

/// Scores a trained model on `val` under every fusion triple on a simplex
/// grid with spacing `step`, keeping the trained parameters. Channels the
/// ablation disables stay at weight 0. Sorted by validation AUC, best first.
std::vector<FusionCandidate> fusion_grid_search(const MiracleModel& model, std::span<const data::PatientRecord> val,
                                                const RemarkMap& remarks, double step = 0.125);

}  // namespace miracle::model
