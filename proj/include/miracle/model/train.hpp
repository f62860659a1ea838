#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "miracle/data/patient.hpp"
#include "miracle/metrics.hpp"
#include "miracle/model/model.hpp"

namespace miracle::model {

/// Remarks keyed by patient_id.
using RemarkMap = std::unordered_map<std::string, remarks::Remark>;

/// The stored remark for each record, or a stub remark when none is stored.
std::vector<remarks::Remark> remarks_for(std::span<const data::PatientRecord> records, const RemarkMap& remarks);

struct TrainOptions {
  data::ClinicalSchema schema = data::ClinicalSchema::stand_in();
  std::shared_ptr<const remarks::RemarkEncoder> remark_encoder;  // null: built from config.embedder
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Fits the codec on split.train, then runs minibatch Adam on the focal + KL
/// objective. After every epoch the validation split is scored with
/// score_batch under model.validation_seed; the parameters with the best
/// validation AUC are returned. A non-finite loss raises TrainingError.
MiracleModel train(const data::DatasetSplit& split, const RemarkMap& remarks, const MiracleConfig& config,
                   const TrainOptions& options = {});

/// score_each over `records`, then AUC, TPR@FPR and ROC.
metrics::EvalReport evaluate_model(const MiracleModel& model, std::span<const data::PatientRecord> records,
                                   const RemarkMap& remarks);

}  // namespace miracle::model
