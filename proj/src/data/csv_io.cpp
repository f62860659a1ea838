#include "miracle/data/csv_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "miracle/common.hpp"

namespace miracle::data {

namespace {

using Table = std::vector<std::vector<std::string>>;

std::vector<std::string> parse_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string join(const std::vector<std::string>& items, std::size_t limit = 10) {
  std::string s;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) s += (i ? ", " : "") + items[i];
  if (items.size() > limit) s += ", ... (" + std::to_string(items.size()) + " total)";
  return s;
}

void require_id_header(const Table& t, const std::filesystem::path& path) {
  if (t.empty()) throw SchemaError(path.string() + ": empty file, expected a header row");
  if (t.front().empty() || t.front().front() != "patient_id")
    throw SchemaError(path.string() + ": first column must be patient_id");
}

void check_row_widths(const Table& t, const std::filesystem::path& path) {
  const auto width = t.front().size();
  for (std::size_t r = 1; r < t.size(); ++r)
    if (t[r].size() != width)
      throw SchemaError(path.string() + ": row " + std::to_string(r + 1) + " has " + std::to_string(t[r].size()) +
                        " columns, header has " + std::to_string(width));
}

/// Index rows by patient_id, rejecting duplicates.
std::map<std::string, std::size_t> index_rows(const Table& t, const std::filesystem::path& path) {
  std::map<std::string, std::size_t> idx;
  std::vector<std::string> dups;
  for (std::size_t r = 1; r < t.size(); ++r)
    if (!idx.emplace(t[r][0], r).second) dups.push_back(t[r][0]);
  if (!dups.empty()) throw IngestionError(path.string() + ": duplicated patient_id: " + join(dups));
  return idx;
}

}  // namespace

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  Table rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (rows.empty() && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);  // UTF-8 BOM
    rows.push_back(parse_line(line));
  }
  return rows;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view context) {
  double v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size() || text.empty())
    throw SchemaError(std::string(context) + ": '" + std::string(text) + "' is not a number");
  return v;
}

std::vector<PatientRecord> load_csv(const std::filesystem::path& clinical_path,
                                    const std::filesystem::path& radiomic_path,
                                    const std::filesystem::path& labels_path, const ClinicalSchema& schema) {
  const Table clinical = read_csv(clinical_path);
  const Table radiomic = read_csv(radiomic_path);
  const Table labels = read_csv(labels_path);
  require_id_header(clinical, clinical_path);
  require_id_header(radiomic, radiomic_path);
  require_id_header(labels, labels_path);
  check_row_widths(clinical, clinical_path);
  check_row_widths(radiomic, radiomic_path);
  check_row_widths(labels, labels_path);

  // Map schema fields onto clinical columns.
  std::vector<std::size_t> column_of(schema.size());
  std::vector<std::string> missing;
  for (std::size_t f = 0; f < schema.size(); ++f) {
    const auto& header = clinical.front();
    auto it = std::find(header.begin(), header.end(), schema.fields[f].name);
    if (it == header.end())
      missing.push_back(schema.fields[f].name);
    else
      column_of[f] = static_cast<std::size_t>(it - header.begin());
  }
  if (!missing.empty()) throw SchemaError(clinical_path.string() + ": missing clinical columns: " + join(missing));
  if (radiomic.front().size() != kRadiomicCount + 1)
    throw SchemaError(radiomic_path.string() + ": expected " + std::to_string(kRadiomicCount) +
                      " radiomic columns, found " + std::to_string(radiomic.front().size() - 1));
  if (labels.front().size() < 2 || labels.front()[1] != "label")
    throw SchemaError(labels_path.string() + ": second column must be label");

  const auto clinical_idx = index_rows(clinical, clinical_path);
  const auto radiomic_idx = index_rows(radiomic, radiomic_path);
  const auto label_idx = index_rows(labels, labels_path);

  std::set<std::string> all_ids;
  for (const auto* idx : {&clinical_idx, &radiomic_idx, &label_idx})
    for (const auto& [id, _] : *idx) all_ids.insert(id);
  std::vector<std::string> offenders;
  for (const auto& id : all_ids)
    if (!clinical_idx.count(id) || !radiomic_idx.count(id) || !label_idx.count(id)) offenders.push_back(id);
  if (!offenders.empty())
    throw IngestionError("patient_id not present in all of clinical/radiomics/labels: " + join(offenders));

  std::vector<PatientRecord> records;
  records.reserve(clinical.size() - 1);
  for (std::size_t r = 1; r < clinical.size(); ++r) {
    PatientRecord rec;
    rec.patient_id = clinical[r][0];
    for (std::size_t f = 0; f < schema.size(); ++f) {
      const auto& spec = schema.fields[f];
      const std::string& cell = clinical[r][column_of[f]];
      if (cell.empty()) throw SchemaError(clinical_path.string() + ": empty " + spec.name + " for " + rec.patient_id);
      if (spec.kind == FieldKind::continuous)
        rec.clinical[spec.name] = parse_double(cell, clinical_path.string() + " " + spec.name);
      else
        rec.clinical[spec.name] = cell;
    }
    const auto& rrow = radiomic[radiomic_idx.at(rec.patient_id)];
    rec.radiomics.reserve(kRadiomicCount);
    for (std::size_t k = 1; k < rrow.size(); ++k)
      rec.radiomics.push_back(parse_double(rrow[k], radiomic_path.string() + " " + radiomic.front()[k]));
    const auto& lrow = labels[label_idx.at(rec.patient_id)];
    if (lrow[1] != "0" && lrow[1] != "1")
      throw SchemaError(labels_path.string() + ": label for " + rec.patient_id + " must be 0 or 1");
    rec.label = lrow[1] == "1" ? 1 : 0;
    records.push_back(std::move(rec));
  }
  return records;
}

void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split, const ClinicalSchema& schema) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write " + (dir / name).string());
    return out;
  };
  auto clinical = open("clinical.csv");
  auto radiomic = open("radiomics.csv");
  auto labels = open("labels.csv");

  clinical << "patient_id";
  for (const auto& f : schema.fields) clinical << ',' << csv_escape(f.name);
  clinical << '\n';
  radiomic << "patient_id";
  for (std::size_t k = 0; k < kRadiomicCount; ++k) {
    char name[16];
    std::snprintf(name, sizeof name, "r%03zu", k + 1);
    radiomic << ',' << name;
  }
  radiomic << '\n';
  labels << "patient_id,label,split\n";

  auto emit = [&](const std::vector<PatientRecord>& records, const char* split_name) {
    for (const auto& rec : records) {
      clinical << csv_escape(rec.patient_id);
      for (const auto& f : schema.fields) clinical << ',' << csv_escape(value_text(rec.clinical.at(f.name)));
      clinical << '\n';
      radiomic << csv_escape(rec.patient_id);
      for (double v : rec.radiomics) radiomic << ',' << format_double(v);
      radiomic << '\n';
      labels << csv_escape(rec.patient_id) << ',' << rec.label << ',' << split_name << '\n';
    }
  };
  emit(split.train, "train");
  emit(split.val, "val");
  emit(split.test, "test");

  auto schema_out = open("schema.json");
  schema_out << schema.to_json().dump(2) << '\n';
}

ClinicalSchema load_dataset_schema(const std::filesystem::path& dir) {
  const auto manifest = dir / "schema.json";
  return std::filesystem::exists(manifest) ? ClinicalSchema::load(manifest) : ClinicalSchema::stand_in();
}

DatasetSplit load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IngestionError("data directory " + dir.string() + " does not exist");
  const auto schema = load_dataset_schema(dir);
  auto records = load_csv(dir / "clinical.csv", dir / "radiomics.csv", dir / "labels.csv", schema);

  const Table labels = read_csv(dir / "labels.csv");
  const auto& header = labels.front();
  auto split_col = std::find(header.begin(), header.end(), "split");
  if (split_col == header.end()) throw IngestionError((dir / "labels.csv").string() + ": no split column");
  const auto col = static_cast<std::size_t>(split_col - header.begin());
  std::map<std::string, std::string> split_of;
  for (std::size_t r = 1; r < labels.size(); ++r) split_of[labels[r][0]] = labels[r][col];

  DatasetSplit out;
  for (auto& rec : records) {
    const auto& s = split_of.at(rec.patient_id);
    if (s == "train")
      out.train.push_back(std::move(rec));
    else if (s == "val")
      out.val.push_back(std::move(rec));
    else if (s == "test")
      out.test.push_back(std::move(rec));
    else
      throw IngestionError("unknown split '" + s + "' for " + rec.patient_id);
  }
  return out;
}

}  // namespace miracle::data
