#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miracle/common.hpp"
#include "miracle/data/patient.hpp"

namespace miracle::data {

/// Per-field encoding state. Continuous fields use (min, max); categorical
/// fields use the sorted-unique level table.
struct FieldCodec {
  FieldKind kind = FieldKind::continuous;
  double min = 0;
  double max = 0;
  std::vector<std::string> categories;
};

struct RadiomicCodec {
  double mean = 0;
  double stddev = 0;  // population convention
  bool constant = false;
};

/// Preprocessing statistics fitted on the training split only.
struct FeatureCodec {
  ClinicalSchema schema;
  std::vector<FieldCodec> clinical;    // schema order
  std::vector<RadiomicCodec> radiomic;  // kRadiomicCount entries

  nlohmann::json to_json() const;
  static FeatureCodec from_json(const nlohmann::json& j);
};

FeatureCodec fit_codec(std::span<const PatientRecord> train, const ClinicalSchema& schema = ClinicalSchema::stand_in());

struct EncodedPatient {
  VectorXr clinical;  // kClinicalFieldCount
  VectorXr radiomic;  // kRadiomicCount
  std::vector<std::string> warnings;
};

/// Continuous: (x - min)/(max - min) clipped to [0,1], 0 when min == max.
/// Categorical: level index; unseen levels get the reserved code
/// categories.size() and a warning. Radiomic: (x - mean)/stddev, 0 for
/// constant features.
EncodedPatient encode(const PatientRecord& record, const FeatureCodec& codec);

/// Column-stacked encodings of many records: clinical [17 x n], radiomic [113 x n].
struct EncodedBatch {
  MatrixXr clinical;
  MatrixXr radiomic;
};
EncodedBatch encode_batch(std::span<const PatientRecord> records, const FeatureCodec& codec);

}  // namespace miracle::data
