#include "miracle/data/codec.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace miracle::data {

FeatureCodec fit_codec(std::span<const PatientRecord> train, const ClinicalSchema& schema) {
  if (train.empty()) throw InputError("fit_codec requires a nonempty training split");
  schema.validate();
  for (const auto& r : train) validate_record(r, schema);

  FeatureCodec codec;
  codec.schema = schema;
  codec.clinical.resize(schema.size());
  for (std::size_t f = 0; f < schema.size(); ++f) {
    const auto& spec = schema.fields[f];
    auto& fc = codec.clinical[f];
    fc.kind = spec.kind;
    if (spec.kind == FieldKind::continuous) {
      fc.min = fc.max = std::get<double>(train.front().clinical.at(spec.name));
      for (const auto& r : train) {
        const double v = std::get<double>(r.clinical.at(spec.name));
        fc.min = std::min(fc.min, v);
        fc.max = std::max(fc.max, v);
      }
    } else {
      std::set<std::string> levels;
      for (const auto& r : train) levels.insert(value_text(r.clinical.at(spec.name)));
      fc.categories.assign(levels.begin(), levels.end());
    }
  }

  codec.radiomic.resize(kRadiomicCount);
  const auto n = static_cast<double>(train.size());
  for (std::size_t k = 0; k < kRadiomicCount; ++k) {
    double mean = 0;
    for (const auto& r : train) mean += r.radiomics[k];
    mean /= n;
    double ss = 0;
    for (const auto& r : train) ss += (r.radiomics[k] - mean) * (r.radiomics[k] - mean);
    auto& rc = codec.radiomic[k];
    rc.mean = mean;
    rc.stddev = std::sqrt(ss / n);
    rc.constant = !(rc.stddev > 0);
  }
  return codec;
}

EncodedPatient encode(const PatientRecord& record, const FeatureCodec& codec) {
  validate_record(record, codec.schema);
  EncodedPatient out;
  out.clinical.resize(static_cast<Index>(codec.schema.size()));
  for (std::size_t f = 0; f < codec.schema.size(); ++f) {
    const auto& spec = codec.schema.fields[f];
    const auto& fc = codec.clinical[f];
    const auto& value = record.clinical.at(spec.name);
    double x = 0;
    if (fc.kind == FieldKind::continuous) {
      const double v = std::get<double>(value);
      x = fc.max > fc.min ? std::clamp((v - fc.min) / (fc.max - fc.min), 0.0, 1.0) : 0.0;
    } else {
      const auto text = value_text(value);
      auto it = std::lower_bound(fc.categories.begin(), fc.categories.end(), text);
      if (it != fc.categories.end() && *it == text) {
        x = static_cast<double>(it - fc.categories.begin());
      } else {
        x = static_cast<double>(fc.categories.size());
        out.warnings.push_back("unseen level '" + text + "' for " + spec.name + ", using reserved code " +
                               std::to_string(fc.categories.size()));
      }
    }
    out.clinical(static_cast<Index>(f)) = x;
  }
  out.radiomic.resize(static_cast<Index>(kRadiomicCount));
  for (std::size_t k = 0; k < kRadiomicCount; ++k) {
    const auto& rc = codec.radiomic[k];
    out.radiomic(static_cast<Index>(k)) = rc.constant ? 0.0 : (record.radiomics[k] - rc.mean) / rc.stddev;
  }
  return out;
}

EncodedBatch encode_batch(std::span<const PatientRecord> records, const FeatureCodec& codec) {
  EncodedBatch batch;
  const auto n = static_cast<Index>(records.size());
  batch.clinical.resize(static_cast<Index>(codec.schema.size()), n);
  batch.radiomic.resize(static_cast<Index>(kRadiomicCount), n);
  for (Index i = 0; i < n; ++i) {
    auto e = encode(records[static_cast<std::size_t>(i)], codec);
    batch.clinical.col(i) = e.clinical;
    batch.radiomic.col(i) = e.radiomic;
  }
  return batch;
}

nlohmann::json FeatureCodec::to_json() const {
  nlohmann::json fields = nlohmann::json::array();
  for (std::size_t f = 0; f < clinical.size(); ++f) {
    const auto& fc = clinical[f];
    nlohmann::json j = {{"name", schema.fields[f].name}, {"kind", data::to_string(fc.kind)}};
    if (fc.kind == FieldKind::continuous) {
      j["min"] = fc.min;
      j["max"] = fc.max;
    } else {
      j["categories"] = fc.categories;
    }
    fields.push_back(std::move(j));
  }
  nlohmann::json rad = nlohmann::json::array();
  for (const auto& rc : radiomic) rad.push_back({{"mean", rc.mean}, {"stddev", rc.stddev}, {"constant", rc.constant}});
  return {{"schema", schema.to_json()}, {"clinical", fields}, {"radiomic", rad}};
}

FeatureCodec FeatureCodec::from_json(const nlohmann::json& j) {
  try {
    FeatureCodec codec;
    codec.schema = ClinicalSchema::from_json(j.at("schema"));
    const auto& fields = j.at("clinical");
    if (fields.size() != codec.schema.size()) throw SchemaError("codec field count does not match its schema");
    for (std::size_t f = 0; f < fields.size(); ++f) {
      const auto& fj = fields[f];
      if (fj.at("name").get<std::string>() != codec.schema.fields[f].name)
        throw SchemaError("codec field order does not match its schema");
      FieldCodec fc;
      fc.kind = field_kind_from_string(fj.at("kind").get<std::string>());
      if (fc.kind == FieldKind::continuous) {
        fc.min = fj.at("min").get<double>();
        fc.max = fj.at("max").get<double>();
        if (fc.min > fc.max) throw SchemaError("codec min exceeds max for " + codec.schema.fields[f].name);
      } else {
        fc.categories = fj.at("categories").get<std::vector<std::string>>();
      }
      codec.clinical.push_back(std::move(fc));
    }
    for (const auto& rj : j.at("radiomic"))
      codec.radiomic.push_back(
          {rj.at("mean").get<double>(), rj.at("stddev").get<double>(), rj.at("constant").get<bool>()});
    if (codec.radiomic.size() != kRadiomicCount) throw SchemaError("codec radiomic count mismatch");
    return codec;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed codec: ") + e.what());
  }
}

}  // namespace miracle::data
