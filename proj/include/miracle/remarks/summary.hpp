#pragma once

#include <string>

#include "miracle/data/patient.hpp"

namespace miracle::remarks {

/// One sentence per schema field, in schema order: "Label: value unit."
/// Sentences are separated by a single space.
std::string summarize(const data::ClinicalFields& fields,
                      const data::ClinicalSchema& schema = data::ClinicalSchema::stand_in());

}  // namespace miracle::remarks
