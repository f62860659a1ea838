#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "miracle/data/patient.hpp"

namespace miracle::data {

/// Minimal RFC 4180 reader: comma separated, optional double quotes, CRLF or LF.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);
std::string csv_escape(std::string_view field);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text, std::string_view context);

/// Joins clinical.csv, radiomics.csv and labels.csv on patient_id (first
/// column of each). Record order follows the clinical file.
std::vector<PatientRecord> load_csv(const std::filesystem::path& clinical_path,
                                    const std::filesystem::path& radiomic_path,
                                    const std::filesystem::path& labels_path,
                                    const ClinicalSchema& schema = ClinicalSchema::stand_in());

/// Directory layout written by `miracle synth`: clinical.csv, radiomics.csv,
/// labels.csv (patient_id,label,split) and schema.json.
void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split, const ClinicalSchema& schema);
DatasetSplit load_dataset(const std::filesystem::path& dir);
ClinicalSchema load_dataset_schema(const std::filesystem::path& dir);

}  // namespace miracle::data
