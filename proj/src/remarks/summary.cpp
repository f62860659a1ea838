#include "miracle/remarks/summary.hpp"

namespace miracle::remarks {

std::string summarize(const data::ClinicalFields& fields, const data::ClinicalSchema& schema) {
  std::vector<std::string> missing;
  std::string text;
  for (const auto& spec : schema.fields) {
    auto it = fields.find(spec.name);
    if (it == fields.end()) {
      missing.push_back(spec.name);
      continue;
    }
    if (!text.empty()) text += ' ';
    text += (spec.label.empty() ? spec.name : spec.label) + ": " + data::value_text(it->second);
    if (!spec.unit.empty()) text += ' ' + spec.unit;
    text += '.';
  }
  if (!missing.empty()) {
    std::string msg = "clinical summary is missing fields:";
    for (const auto& m : missing) msg += ' ' + m;
    throw data::FieldErrors(msg, missing);
  }
  return text;
}

}  // namespace miracle::remarks
