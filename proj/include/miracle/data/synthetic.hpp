#pragma once

#include <array>
#include <cstdint>

#include "miracle/data/patient.hpp"

namespace miracle::data {

/// Configuration of the synthetic cohort generator. Defaults reproduce the
/// split sizes and complication rates of the reference surgical cohort.
struct SyntheticConfig {
  std::array<std::size_t, 3> sizes{2694, 200, 200};
  std::array<double, 3> prevalences{0.226, 0.475, 0.535};
  std::uint64_t seed = 7;
  bool require_both_classes = true;  // every split must contain positives and negatives
  std::size_t max_draws_per_patient = 200;

  void validate() const;
};

/// Ground-truth risk model of the generator. Clinical terms act on
/// standardised field values u = (x - center) / scale; radiomic terms act on
/// latent factors of the radiomic factor model.
struct PlantedModel {
  static constexpr double intercept = -4.0;
  static constexpr double dlco = -3.2;       // dlco_pct, center 75, scale 18
  static constexpr double fev1 = -1.8;       // fev1_pct, center 82, scale 18
  static constexpr double age = 1.6;         // age, center 66, scale 9
  static constexpr double pack_years = 1.0;  // center 30, scale 25
  static constexpr double charlson = 1.0;    // charlson_index, center 2.5, scale 1.8
  static constexpr double albumin = -0.6;    // center 4.0, scale 0.4
  static constexpr double pneumonectomy = 2.0;
  static constexpr double segmentectomy = -0.6;
  static constexpr double wedge = -1.2;
  static constexpr double open_approach = 1.0;
  static constexpr double radiomic_factor_0 = 3.2;
  static constexpr double radiomic_factor_1 = -2.4;
  static constexpr int latent_factors = 6;
  static constexpr double radiomic_noise = 0.6;
};

/// Draws patients from a fixed generative world and rejection-fills each
/// split until its positive and negative quotas (round(size * prevalence))
/// are met. Fully determined by `config.seed`.
DatasetSplit generate_synthetic(const SyntheticConfig& config);

}  // namespace miracle::data
