#include "miracle/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <boost/random/discrete_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_real_distribution.hpp>

namespace miracle::data {

namespace {

// Radiomic loadings and per-feature offsets are a property of the simulated
// world, not of the sample, so they ignore config.seed.
constexpr std::uint64_t kWorldSeed = 0x4D495241434C45ULL;

struct RadiomicWorld {
  MatrixXr loadings;  // kRadiomicCount x latent_factors
  VectorXr offset;
  VectorXr scale;
};

const RadiomicWorld& radiomic_world() {
  static const RadiomicWorld world = [] {
    Rng rng(mix_seed(kWorldSeed));
    boost::random::normal_distribution<double> normal;
    boost::random::uniform_real_distribution<double> unif(-1.0, 1.0);
    RadiomicWorld w;
    const auto n = static_cast<Index>(kRadiomicCount);
    w.loadings.resize(n, PlantedModel::latent_factors);
    for (Index k = 0; k < n; ++k)
      for (Index f = 0; f < PlantedModel::latent_factors; ++f) w.loadings(k, f) = normal(rng);
    w.loadings.rowwise().normalize();
    w.offset.resize(n);
    w.scale.resize(n);
    for (Index k = 0; k < n; ++k) {
      w.offset(k) = 50.0 * unif(rng);
      w.scale(k) = std::exp(2.0 * unif(rng));
    }
    return w;
  }();
  return world;
}

double round_to(double v, double step) { return std::round(v / step) * step; }

std::size_t quota(std::size_t n, double rate) { return static_cast<std::size_t>(std::llround(n * rate)); }

struct Draw {
  PatientRecord record;  // patient_id assigned on acceptance
  int label = 0;
};

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(mix_seed(seed, 11)) {}

  Draw next() {
    Draw d;
    auto& c = d.record.clinical;
    const double age = std::clamp(round_to(66 + 9 * z(), 1), 30.0, 95.0);
    const double pack = std::max(0.0, round_to(30 + 25 * z(), 0.1));
    const double fev1 = std::clamp(round_to(82 + 18 * z(), 0.1), 20.0, 150.0);
    const double dlco = std::clamp(round_to(75 + 18 * z(), 0.1), 15.0, 150.0);
    const double charlson = std::clamp(std::round(2.5 + 1.8 * z()), 0.0, 12.0);
    const double albumin = std::clamp(round_to(4.0 + 0.4 * z(), 0.1), 2.0, 5.5);
    c["age"] = age;
    c["pack_years"] = pack;
    c["fev1_pct"] = fev1;
    c["dlco_pct"] = dlco;
    c["charlson_index"] = charlson;
    c["albumin"] = albumin;
    c["bmi"] = std::clamp(round_to(27 + 5 * z(), 0.1), 15.0, 55.0);
    c["fvc_pct"] = std::clamp(round_to(0.6 * fev1 + 40 + 10 * z(), 0.1), 30.0, 160.0);
    c["hemoglobin"] = std::clamp(round_to(13.5 + 1.5 * z(), 0.1), 7.0, 19.0);
    c["creatinine"] = std::clamp(round_to(0.95 + 0.25 * z(), 0.01), 0.3, 4.0);
    const double tumor = std::clamp(round_to(2.8 + 1.5 * z(), 0.1), 0.3, 12.0);
    c["tumor_size_cm"] = tumor;
    c["systolic_bp"] = std::clamp(std::round(132 + 17 * z()), 80.0, 220.0);

    c["sex"] = std::string(u() < 0.55 ? "M" : "F");
    c["smoking_status"] = std::string(pack == 0 ? "never" : (u() < 0.35 ? "current" : "former"));
    static const char* stages[] = {"IA", "IB", "IIA", "IIB", "IIIA"};
    const int stage = std::clamp(static_cast<int>(std::floor(tumor / 1.5 + 0.7 * z())), 0, 4);
    c["clinical_stage"] = std::string(stages[stage]);
    static const char* procedures[] = {"lobectomy", "segmentectomy", "wedge", "pneumonectomy"};
    boost::random::discrete_distribution<int> procedure_dist{0.70, 0.12, 0.13, 0.05};
    const int procedure = procedure_dist(rng_);
    c["procedure"] = std::string(procedures[procedure]);
    static const char* approaches[] = {"open", "vats", "robotic"};
    boost::random::discrete_distribution<int> approach_dist{0.25, 0.35, 0.40};
    const int approach = approach_dist(rng_);
    c["surgical_approach"] = std::string(approaches[approach]);

    const auto& world = radiomic_world();
    Eigen::Matrix<double, PlantedModel::latent_factors, 1> latent;
    for (auto& v : latent) v = z();
    d.record.radiomics.resize(kRadiomicCount);
    for (Index k = 0; k < static_cast<Index>(kRadiomicCount); ++k) {
      const double signal = world.loadings.row(k).dot(latent) + PlantedModel::radiomic_noise * z();
      d.record.radiomics[static_cast<std::size_t>(k)] = round_to(world.offset(k) + world.scale(k) * signal, 1e-4);
    }

    using P = PlantedModel;
    double lp = P::intercept + P::dlco * (dlco - 75) / 18 + P::fev1 * (fev1 - 82) / 18 + P::age * (age - 66) / 9 +
                P::pack_years * (pack - 30) / 25 + P::charlson * (charlson - 2.5) / 1.8 +
                P::albumin * (albumin - 4.0) / 0.4 + P::radiomic_factor_0 * latent(0) +
                P::radiomic_factor_1 * latent(1);
    if (procedure == 1) lp += P::segmentectomy;
    if (procedure == 2) lp += P::wedge;
    if (procedure == 3) lp += P::pneumonectomy;
    if (approach == 0) lp += P::open_approach;
    d.label = u() < 1.0 / (1.0 + std::exp(-lp)) ? 1 : 0;
    d.record.label = d.label;
    return d;
  }

 private:
  double z() { return normal_(rng_); }
  double u() { return unif_(rng_); }

  Rng rng_;
  boost::random::normal_distribution<double> normal_;
  boost::random::uniform_01<double> unif_;
};

}  // namespace

void SyntheticConfig::validate() const {
  static const char* names[] = {"train", "val", "test"};
  for (std::size_t s = 0; s < 3; ++s) {
    if (sizes[s] < 1) throw ConfigError(std::string(names[s]) + " size must be at least 1");
    const double p = prevalences[s];
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(names[s]) + " prevalence must lie in [0,1]");
    if (require_both_classes) {
      const auto pos = quota(sizes[s], p);
      if (pos == 0 || pos == sizes[s])
        throw ConfigError(std::string(names[s]) + " prevalence " + std::to_string(p) + " with size " +
                          std::to_string(sizes[s]) + " cannot hold both classes");
    }
  }
  if (max_draws_per_patient < 1) throw ConfigError("max_draws_per_patient must be at least 1");
}

DatasetSplit generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  std::array<std::size_t, 3> need_pos{}, need_neg{};
  std::size_t total = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    need_pos[s] = quota(config.sizes[s], config.prevalences[s]);
    need_neg[s] = config.sizes[s] - need_pos[s];
    total += config.sizes[s];
  }

  DatasetSplit out;
  std::array<std::vector<PatientRecord>*, 3> splits{&out.train, &out.val, &out.test};
  for (std::size_t s = 0; s < 3; ++s) splits[s]->reserve(config.sizes[s]);

  Generator gen(config.seed);
  const std::size_t cap = config.max_draws_per_patient * total;
  std::size_t accepted = 0;
  for (std::size_t draws = 0; accepted < total; ++draws) {
    if (draws >= cap)
      throw ConfigError("synthetic generator exceeded " + std::to_string(cap) +
                        " draws before meeting the configured prevalences");
    Draw d = gen.next();
    auto& need = d.label ? need_pos : need_neg;
    for (std::size_t s = 0; s < 3; ++s) {
      if (need[s] == 0) continue;
      --need[s];
      char id[16];
      std::snprintf(id, sizeof id, "P%06zu", ++accepted);
      d.record.patient_id = id;
      splits[s]->push_back(std::move(d.record));
      break;
    }
  }
  return out;
}

}  // namespace miracle::data
