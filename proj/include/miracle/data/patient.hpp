#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "miracle/common.hpp"

namespace miracle::data {

inline constexpr std::size_t kClinicalFieldCount = 17;
inline constexpr std::size_t kRadiomicCount = 113;

enum class FieldKind { continuous, categorical };

std::string to_string(FieldKind kind);
FieldKind field_kind_from_string(const std::string& s);

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::continuous;
  std::string label;  // human-readable name used by the summary template
  std::string unit;   // appended after the value, may be empty
};

/// Ordered clinical field list. The order is canonical: encoding and summary
/// text both follow it.
struct ClinicalSchema {
  std::vector<FieldSpec> fields;

  std::size_t size() const { return fields.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  void validate() const;

  nlohmann::json to_json() const;
  static ClinicalSchema from_json(const nlohmann::json& j);
  static ClinicalSchema load(const std::filesystem::path& path);

  /// 12 continuous + 5 categorical fields used by the synthetic generator
  /// when no manifest is supplied.
  static const ClinicalSchema& stand_in();
};

using ClinicalValue = std::variant<double, std::string>;
using ClinicalFields = std::map<std::string, ClinicalValue>;

/// Categorical levels are compared as text; numeric values are rendered with
/// the shortest round-trip representation.
std::string value_text(const ClinicalValue& v);

struct PatientRecord {
  std::string patient_id;
  ClinicalFields clinical;
  std::vector<double> radiomics;
  int label = 0;

  bool operator==(const PatientRecord&) const = default;
};

/// Returns the names of fields that are missing or have the wrong kind, plus
/// "radiomics" / "label" when those are malformed. Empty means valid.
std::vector<std::string> schema_violations(const PatientRecord& record, const ClinicalSchema& schema);
void validate_record(const PatientRecord& record, const ClinicalSchema& schema);

struct DatasetSplit {
  std::vector<PatientRecord> train;
  std::vector<PatientRecord> val;
  std::vector<PatientRecord> test;

  const std::vector<PatientRecord>& by_name(const std::string& split) const;
};

/// Schema failure that names every offending field.
struct FieldErrors : SchemaError {
  FieldErrors(const std::string& message, std::vector<std::string> names)
      : SchemaError(message), fields(std::move(names)) {}
  std::vector<std::string> fields;
};

/// JSON patient payload: {"patient_id", "clinical": {...}, "radiomics": [...], "label"?}.
/// Continuous fields must be numbers; categorical fields may be strings or numbers.
PatientRecord patient_from_json(const nlohmann::json& j, const ClinicalSchema& schema);
nlohmann::json patient_to_json(const PatientRecord& record);

}  // namespace miracle::data
