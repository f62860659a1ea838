#include "miracle/data/patient.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "miracle/common.hpp"
#include "miracle/data/csv_io.hpp"

namespace miracle::data {

std::string to_string(FieldKind kind) { return kind == FieldKind::continuous ? "continuous" : "categorical"; }

FieldKind field_kind_from_string(const std::string& s) {
  if (s == "continuous") return FieldKind::continuous;
  if (s == "categorical") return FieldKind::categorical;
  throw SchemaError("unknown field kind '" + s + "' (expected continuous|categorical)");
}

std::optional<std::size_t> ClinicalSchema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].name == name) return i;
  return std::nullopt;
}

void ClinicalSchema::validate() const {
  if (fields.size() != kClinicalFieldCount)
    throw SchemaError("clinical schema must list " + std::to_string(kClinicalFieldCount) + " fields, got " +
                      std::to_string(fields.size()));
  std::set<std::string> seen;
  for (const auto& f : fields) {
    if (f.name.empty() || f.name == "patient_id") throw SchemaError("invalid clinical field name '" + f.name + "'");
    if (!seen.insert(f.name).second) throw SchemaError("duplicate clinical field '" + f.name + "'");
  }
}

nlohmann::json ClinicalSchema::to_json() const {
  nlohmann::json fields_json = nlohmann::json::array();
  for (const auto& f : fields)
    fields_json.push_back({{"name", f.name}, {"kind", to_string(f.kind)}, {"label", f.label}, {"unit", f.unit}});
  return {{"clinical_fields", fields_json}, {"radiomic_count", kRadiomicCount}};
}

ClinicalSchema ClinicalSchema::from_json(const nlohmann::json& j) {
  try {
    ClinicalSchema schema;
    for (const auto& f : j.at("clinical_fields")) {
      FieldSpec spec;
      spec.name = f.at("name").get<std::string>();
      spec.kind = field_kind_from_string(f.at("kind").get<std::string>());
      spec.label = f.value("label", spec.name);
      spec.unit = f.value("unit", std::string{});
      schema.fields.push_back(std::move(spec));
    }
    if (j.contains("radiomic_count") && j.at("radiomic_count").get<std::size_t>() != kRadiomicCount)
      throw SchemaError("schema declares " + std::to_string(j.at("radiomic_count").get<std::size_t>()) +
                        " radiomic features, expected " + std::to_string(kRadiomicCount));
    schema.validate();
    return schema;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema manifest: ") + e.what());
  }
}

ClinicalSchema ClinicalSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

const ClinicalSchema& ClinicalSchema::stand_in() {
  static const ClinicalSchema schema = [] {
    using K = FieldKind;
    ClinicalSchema s;
    s.fields = {
        {"age", K::continuous, "Age", "years"},
        {"bmi", K::continuous, "Body mass index", "kg/m2"},
        {"pack_years", K::continuous, "Smoking history", "pack-years"},
        {"fev1_pct", K::continuous, "FEV1", "% predicted"},
        {"fvc_pct", K::continuous, "FVC", "% predicted"},
        {"dlco_pct", K::continuous, "DLCO", "% predicted"},
        {"hemoglobin", K::continuous, "Hemoglobin", "g/dL"},
        {"creatinine", K::continuous, "Creatinine", "mg/dL"},
        {"albumin", K::continuous, "Albumin", "g/dL"},
        {"tumor_size_cm", K::continuous, "Tumor size", "cm"},
        {"charlson_index", K::continuous, "Charlson comorbidity index", ""},
        {"systolic_bp", K::continuous, "Systolic blood pressure", "mmHg"},
        {"sex", K::categorical, "Sex", ""},
        {"smoking_status", K::categorical, "Smoking status", ""},
        {"clinical_stage", K::categorical, "Clinical stage", ""},
        {"surgical_approach", K::categorical, "Planned surgical approach", ""},
        {"procedure", K::categorical, "Planned procedure", ""},
    };
    s.validate();
    return s;
  }();
  return schema;
}

std::string value_text(const ClinicalValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return format_double(*d);
  return std::get<std::string>(v);
}

std::vector<std::string> schema_violations(const PatientRecord& record, const ClinicalSchema& schema) {
  std::vector<std::string> bad;
  for (const auto& f : schema.fields) {
    auto it = record.clinical.find(f.name);
    if (it == record.clinical.end()) {
      bad.push_back(f.name);
      continue;
    }
    if (f.kind == FieldKind::continuous) {
      const auto* d = std::get_if<double>(&it->second);
      if (!d || !std::isfinite(*d)) bad.push_back(f.name);
    } else if (value_text(it->second).empty()) {
      bad.push_back(f.name);
    }
  }
  if (record.radiomics.size() != kRadiomicCount) bad.push_back("radiomics");
  for (double r : record.radiomics)
    if (!std::isfinite(r)) {
      bad.push_back("radiomics");
      break;
    }
  if (record.label != 0 && record.label != 1) bad.push_back("label");
  return bad;
}

void validate_record(const PatientRecord& record, const ClinicalSchema& schema) {
  auto bad = schema_violations(record, schema);
  if (bad.empty()) return;
  std::string msg = "patient '" + record.patient_id + "' violates schema:";
  for (const auto& b : bad) msg += " " + b;
  throw FieldErrors(msg, bad);
}

const std::vector<PatientRecord>& DatasetSplit::by_name(const std::string& split) const {
  if (split == "train") return train;
  if (split == "val") return val;
  if (split == "test") return test;
  throw InputError("unknown split '" + split + "' (expected train|val|test)");
}

PatientRecord patient_from_json(const nlohmann::json& j, const ClinicalSchema& schema) {
  if (!j.is_object()) throw SchemaError("patient payload must be a JSON object");
  PatientRecord r;
  if (j.contains("patient_id")) {
    const auto& id = j.at("patient_id");
    r.patient_id = id.is_string() ? id.get<std::string>() : id.dump();
  }
  std::vector<std::string> bad;
  if (!j.contains("clinical") || !j.at("clinical").is_object()) {
    bad.push_back("clinical");
  } else {
    for (const auto& [key, value] : j.at("clinical").items()) {
      auto idx = schema.index_of(key);
      if (!idx) continue;  // unknown keys are ignored
      if (value.is_number())
        r.clinical[key] = value.get<double>();
      else if (value.is_string() && schema.fields[*idx].kind == FieldKind::categorical)
        r.clinical[key] = value.get<std::string>();
      else
        bad.push_back(key);
    }
    for (auto& [key, value] : r.clinical) {
      const auto& spec = schema.fields[*schema.index_of(key)];
      if (spec.kind == FieldKind::categorical && std::holds_alternative<double>(value)) value = value_text(value);
    }
  }
  if (j.contains("radiomics") && j.at("radiomics").is_array()) {
    for (const auto& v : j.at("radiomics")) {
      if (!v.is_number()) {
        bad.push_back("radiomics");
        r.radiomics.clear();
        break;
      }
      r.radiomics.push_back(v.get<double>());
    }
  }
  if (j.contains("label")) {
    if (!j.at("label").is_number_integer()) bad.push_back("label");
    else r.label = j.at("label").get<int>();
  }
  for (auto& v : schema_violations(r, schema))
    if (std::find(bad.begin(), bad.end(), v) == bad.end()) bad.push_back(v);
  if (!bad.empty()) {
    std::string msg = "patient payload violates schema:";
    for (const auto& b : bad) msg += " " + b;
    throw FieldErrors(msg, bad);
  }
  return r;
}

nlohmann::json patient_to_json(const PatientRecord& record) {
  nlohmann::json clinical = nlohmann::json::object();
  for (const auto& [k, v] : record.clinical) {
    if (const auto* d = std::get_if<double>(&v))
      clinical[k] = *d;
    else
      clinical[k] = std::get<std::string>(v);
  }
  return {{"patient_id", record.patient_id}, {"clinical", clinical}, {"radiomics", record.radiomics},
          {"label", record.label}};
}

}  // namespace miracle::data
