#include <gtest/gtest.h>

#include <set>

#include <Eigen/Dense>

#include "miracle/data/codec.hpp"
#include "miracle/data/csv_io.hpp"
#include "miracle/data/synthetic.hpp"
#include "miracle/metrics.hpp"
#include "test_support.hpp"

using namespace miracle;
using namespace miracle::data;
using miracle::testing::TempDir;

namespace {

std::vector<PatientRecord> small_cohort(std::uint64_t seed = 3, std::size_t n = 40) {
  SyntheticConfig config;
  config.sizes = {n, 10, 10};
  config.seed = seed;
  return generate_synthetic(config).train;
}

std::size_t field(const std::string& name) { return *ClinicalSchema::stand_in().index_of(name); }

}  // namespace

TEST(Schema, StandInHasTwelveContinuousAndFiveCategorical) {
  const auto& schema = ClinicalSchema::stand_in();
  ASSERT_EQ(schema.size(), kClinicalFieldCount);
  int continuous = 0;
  for (const auto& f : schema.fields) continuous += f.kind == FieldKind::continuous;
  EXPECT_EQ(continuous, 12);
}

TEST(Schema, ManifestRoundTripAndValidation) {
  const auto& schema = ClinicalSchema::stand_in();
  const auto back = ClinicalSchema::from_json(schema.to_json());
  ASSERT_EQ(back.size(), schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) EXPECT_EQ(back.fields[i].name, schema.fields[i].name);
  auto j = schema.to_json();
  j["clinical_fields"].erase(0);
  EXPECT_THROW(ClinicalSchema::from_json(j), SchemaError);
  j = schema.to_json();
  j["clinical_fields"][1]["name"] = j["clinical_fields"][0]["name"];
  EXPECT_THROW(ClinicalSchema::from_json(j), SchemaError);
  j = schema.to_json();
  j["clinical_fields"][0]["kind"] = "ordinal";
  EXPECT_THROW(ClinicalSchema::from_json(j), SchemaError);
}

TEST(Record, MissingFieldIsSchemaErrorNamingField) {
  auto r = small_cohort().front();
  r.clinical.erase("albumin");
  try {
    validate_record(r, ClinicalSchema::stand_in());
    FAIL() << "expected FieldErrors";
  } catch (const FieldErrors& e) {
    EXPECT_EQ(e.fields, std::vector<std::string>{"albumin"});
  }
}

TEST(Record, WrongRadiomicCountAndLabel) {
  auto r = small_cohort().front();
  r.radiomics.pop_back();
  r.label = 3;
  const auto bad = schema_violations(r, ClinicalSchema::stand_in());
  EXPECT_EQ(bad, (std::vector<std::string>{"radiomics", "label"}));
}

TEST(Record, JsonRoundTripAndFieldErrors) {
  const auto r = small_cohort().front();
  EXPECT_EQ(patient_from_json(patient_to_json(r), ClinicalSchema::stand_in()), r);
  auto j = patient_to_json(r);
  j["clinical"]["age"] = "old";
  j["clinical"].erase("sex");
  j["clinical"]["not_a_field"] = 1;
  try {
    patient_from_json(j, ClinicalSchema::stand_in());
    FAIL() << "expected FieldErrors";
  } catch (const FieldErrors& e) {
    std::set<std::string> names(e.fields.begin(), e.fields.end());
    EXPECT_EQ(names, (std::set<std::string>{"age", "sex"}));
  }
}

TEST(FitCodec, SingleRecordMapsContinuousToZero) {
  const auto cohort = small_cohort();
  const auto codec = fit_codec(std::span(cohort.data(), 1));
  const auto e = encode(cohort.front(), codec);
  for (std::size_t f = 0; f < codec.schema.size(); ++f)
    if (codec.schema.fields[f].kind == FieldKind::continuous) {
      EXPECT_EQ(e.clinical(static_cast<Index>(f)), 0.0);
    }
  EXPECT_TRUE(e.radiomic.isZero());
}

TEST(FitCodec, MinMaxAndPopulationStddev) {
  auto cohort = small_cohort();
  cohort.resize(3);
  cohort[0].clinical["age"] = 2.0;
  cohort[1].clinical["age"] = 10.0;
  cohort[2].clinical["age"] = 6.0;
  for (int i = 0; i < 3; ++i) cohort[static_cast<std::size_t>(i)].radiomics[5] = 1.0 + i;
  const auto codec = fit_codec(cohort);
  EXPECT_EQ(codec.clinical[field("age")].min, 2.0);
  EXPECT_EQ(codec.clinical[field("age")].max, 10.0);
  EXPECT_DOUBLE_EQ(codec.radiomic[5].mean, 2.0);
  EXPECT_NEAR(codec.radiomic[5].stddev, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(codec.radiomic[5].stddev, 0.8165, 1e-4);

  auto probe = cohort[2];
  probe.radiomics[5] = 3.0;
  EXPECT_NEAR(encode(probe, codec).radiomic(5), 1.2247, 1e-4);
  EXPECT_EQ(encode(probe, codec).clinical(static_cast<Index>(field("age"))), 0.5);
  probe.clinical["age"] = 20.0;
  EXPECT_EQ(encode(probe, codec).clinical(static_cast<Index>(field("age"))), 1.0);
  probe.clinical["age"] = -5.0;
  EXPECT_EQ(encode(probe, codec).clinical(static_cast<Index>(field("age"))), 0.0);
}

TEST(FitCodec, CategoriesSortedUniqueAndUnseenGetsReservedCode) {
  auto cohort = small_cohort();
  cohort.resize(3);
  cohort[0].clinical["procedure"] = std::string("wedge");
  cohort[1].clinical["procedure"] = std::string("lobectomy");
  cohort[2].clinical["procedure"] = std::string("wedge");
  const auto codec = fit_codec(cohort);
  EXPECT_EQ(codec.clinical[field("procedure")].categories, (std::vector<std::string>{"lobectomy", "wedge"}));
  EXPECT_EQ(encode(cohort[0], codec).clinical(static_cast<Index>(field("procedure"))), 1.0);
  EXPECT_TRUE(encode(cohort[0], codec).warnings.empty());
  auto novel = cohort[0];
  novel.clinical["procedure"] = std::string("sleeve");
  const auto e = encode(novel, codec);
  EXPECT_EQ(e.clinical(static_cast<Index>(field("procedure"))), 2.0);
  ASSERT_EQ(e.warnings.size(), 1u);
  EXPECT_NE(e.warnings[0].find("procedure"), std::string::npos);
}

TEST(FitCodec, EmptyTrainAndMissingFieldFail) {
  EXPECT_THROW(fit_codec(std::span<const PatientRecord>{}), InputError);
  auto cohort = small_cohort();
  cohort[4].clinical.erase("bmi");
  EXPECT_THROW(fit_codec(cohort), SchemaError);
}

TEST(FitCodec, EncodingsIgnoreNonTrainingRecords) {
  SyntheticConfig config;
  config.sizes = {80, 20, 20};
  auto split = generate_synthetic(config);
  const auto codec = fit_codec(split.train);
  const auto before = encode_batch(split.test, codec);
  for (auto* part : {&split.val, &split.test})
    for (auto& r : *part) {
      r.clinical["age"] = 1e6;
      for (auto& v : r.radiomics) v *= -3;
    }
  const auto refit = fit_codec(split.train);
  const auto probe = generate_synthetic(config).test;
  EXPECT_EQ(encode_batch(probe, refit).clinical, before.clinical);
  EXPECT_EQ(encode_batch(probe, refit).radiomic, before.radiomic);
}

TEST(FitCodec, ContinuousEncodingsStayInUnitInterval) {
  SyntheticConfig config;
  config.sizes = {60, 60, 60};
  config.seed = 99;
  const auto split = generate_synthetic(config);
  const auto codec = fit_codec(split.train);
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    const auto batch = encode_batch(*part, codec);
    for (std::size_t f = 0; f < codec.schema.size(); ++f)
      if (codec.schema.fields[f].kind == FieldKind::continuous) {
        EXPECT_GE(batch.clinical.row(static_cast<Index>(f)).minCoeff(), 0.0);
        EXPECT_LE(batch.clinical.row(static_cast<Index>(f)).maxCoeff(), 1.0);
      }
  }
}

TEST(FitCodec, JsonRoundTripPreservesEncoding) {
  const auto cohort = small_cohort();
  const auto codec = fit_codec(cohort);
  const auto back = FeatureCodec::from_json(nlohmann::json::parse(codec.to_json().dump()));
  EXPECT_EQ(encode_batch(cohort, back).clinical, encode_batch(cohort, codec).clinical);
  EXPECT_EQ(encode_batch(cohort, back).radiomic, encode_batch(cohort, codec).radiomic);
}

TEST(Csv, ReaderHandlesQuotesAndCrlf) {
  TempDir dir;
  miracle::testing::spit(dir / "a.csv", "patient_id,note\r\n\"x,1\",\"say \"\"hi\"\"\"\r\n");
  const auto rows = read_csv(dir / "a.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][0], "x,1");
  EXPECT_EQ(rows[1][1], "say \"hi\"");
  EXPECT_EQ(csv_escape("a,\"b"), "\"a,\"\"b\"");
  EXPECT_EQ(parse_double(format_double(0.1 + 0.2), "x"), 0.1 + 0.2);
  EXPECT_THROW(parse_double("1.5kg", "x"), SchemaError);
}

TEST(Csv, ThreeConsistentRowsGiveThreeRecords) {
  TempDir dir;
  DatasetSplit split;
  split.train = small_cohort(5, 3);
  write_dataset(dir.path(), split, ClinicalSchema::stand_in());
  const auto records = load_csv(dir / "clinical.csv", dir / "radiomics.csv", dir / "labels.csv");
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records, split.train);
}

TEST(Csv, MissingRadiomicRowNamesTheId) {
  TempDir dir;
  DatasetSplit split;
  split.train = small_cohort(5, 3);
  write_dataset(dir.path(), split, ClinicalSchema::stand_in());
  auto text = miracle::testing::slurp(dir / "radiomics.csv");
  const auto last = text.rfind('\n', text.size() - 2);
  miracle::testing::spit(dir / "radiomics.csv", text.substr(0, last + 1));
  try {
    load_csv(dir / "clinical.csv", dir / "radiomics.csv", dir / "labels.csv");
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find(split.train.back().patient_id), std::string::npos);
  }
}

TEST(Csv, DuplicatedIdIsIngestionError) {
  TempDir dir;
  DatasetSplit split;
  split.train = small_cohort(5, 3);
  split.train[2].patient_id = split.train[0].patient_id;
  write_dataset(dir.path(), split, ClinicalSchema::stand_in());
  EXPECT_THROW(load_csv(dir / "clinical.csv", dir / "radiomics.csv", dir / "labels.csv"), IngestionError);
}

TEST(Csv, WrongColumnCountIsSchemaError) {
  TempDir dir;
  DatasetSplit split;
  split.train = small_cohort(5, 3);
  write_dataset(dir.path(), split, ClinicalSchema::stand_in());
  auto text = miracle::testing::slurp(dir / "clinical.csv");
  text.insert(text.size() - 1, ",extra");
  miracle::testing::spit(dir / "clinical.csv", text);
  EXPECT_THROW(load_csv(dir / "clinical.csv", dir / "radiomics.csv", dir / "labels.csv"), SchemaError);
}

TEST(Csv, DatasetDirectoryRoundTrip) {
  TempDir dir;
  SyntheticConfig config;
  config.sizes = {30, 10, 12};
  const auto split = generate_synthetic(config);
  write_dataset(dir.path(), split, ClinicalSchema::stand_in());
  const auto back = load_dataset(dir.path());
  EXPECT_EQ(back.train, split.train);
  EXPECT_EQ(back.val, split.val);
  EXPECT_EQ(back.test, split.test);
  EXPECT_THROW(load_dataset(dir / "missing"), IngestionError);
}

TEST(Synthetic, DefaultSplitSizesAndPrevalences) {
  const auto split = generate_synthetic(SyntheticConfig{});
  const std::array<std::size_t, 3> sizes{2694, 200, 200};
  const std::array<double, 3> rates{0.226, 0.475, 0.535};
  const std::array<const std::vector<PatientRecord>*, 3> parts{&split.train, &split.val, &split.test};
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(parts[s]->size(), sizes[s]);
    long pos = 0;
    for (const auto& r : *parts[s]) pos += r.label;
    EXPECT_LE(std::abs(static_cast<double>(pos) - rates[s] * static_cast<double>(sizes[s])), 1.0);
  }
}

TEST(Synthetic, SameSeedGivesByteIdenticalFiles) {
  TempDir a, b, c;
  SyntheticConfig config;
  config.sizes = {100, 20, 20};
  write_dataset(a.path(), generate_synthetic(config), ClinicalSchema::stand_in());
  write_dataset(b.path(), generate_synthetic(config), ClinicalSchema::stand_in());
  config.seed += 1;
  write_dataset(c.path(), generate_synthetic(config), ClinicalSchema::stand_in());
  for (const char* f : {"clinical.csv", "radiomics.csv", "labels.csv", "schema.json"})
    EXPECT_EQ(miracle::testing::slurp(a / f), miracle::testing::slurp(b / f)) << f;
  EXPECT_NE(miracle::testing::slurp(a / "radiomics.csv"), miracle::testing::slurp(c / "radiomics.csv"));
}

TEST(Synthetic, SplitsAreDisjointAndRecordsValid) {
  SyntheticConfig config;
  config.sizes = {300, 50, 50};
  const auto split = generate_synthetic(config);
  std::set<std::string> ids;
  for (const auto* part : {&split.train, &split.val, &split.test})
    for (const auto& r : *part) {
      EXPECT_TRUE(ids.insert(r.patient_id).second);
      EXPECT_TRUE(schema_violations(r, ClinicalSchema::stand_in()).empty());
    }
}

TEST(Synthetic, UnsatisfiablePrevalenceIsConfigError) {
  SyntheticConfig config;
  config.prevalences[1] = 0.0;
  EXPECT_THROW(generate_synthetic(config), ConfigError);
  config = SyntheticConfig{};
  config.prevalences[0] = 1.2;
  EXPECT_THROW(generate_synthetic(config), ConfigError);
  config = SyntheticConfig{};
  config.sizes[2] = 0;
  EXPECT_THROW(generate_synthetic(config), ConfigError);
  config = SyntheticConfig{};
  config.prevalences = {0.0, 0.0, 0.0};
  config.require_both_classes = false;
  const auto split = generate_synthetic(config);
  for (const auto& r : split.train) EXPECT_EQ(r.label, 0);
}

TEST(Synthetic, DrawCapIsConfigError) {
  SyntheticConfig config;
  config.sizes = {50, 50, 50};
  config.prevalences = {0.98, 0.98, 0.98};
  config.max_draws_per_patient = 1;
  EXPECT_THROW(generate_synthetic(config), ConfigError);
}

// Planted-signal oracle: a ridge logistic regression on the encoded default
// training split must already separate the test split well.
TEST(Synthetic, LogisticRegressionRecoversPlantedSignal) {
  const auto split = generate_synthetic(SyntheticConfig{});
  const auto codec = fit_codec(split.train);
  auto design = [&](const std::vector<PatientRecord>& records) {
    const auto b = encode_batch(records, codec);
    MatrixXr x(b.clinical.rows() + b.radiomic.rows() + 1, b.clinical.cols());
    x << MatrixXr::Ones(1, b.clinical.cols()), b.clinical, b.radiomic;
    return MatrixXr(x.transpose());
  };
  const MatrixXr x = design(split.train);
  VectorXr y(x.rows());
  for (Index i = 0; i < x.rows(); ++i) y(i) = split.train[static_cast<std::size_t>(i)].label;
  VectorXr beta = VectorXr::Zero(x.cols());
  for (int it = 0; it < 25; ++it) {
    const VectorXr prob = (1.0 / (1.0 + (-(x * beta).array()).exp())).matrix();
    const VectorXr w = (prob.array() * (1 - prob.array())).matrix();
    MatrixXr h = x.transpose() * w.asDiagonal() * x;
    h.diagonal().array() += 1e-2;
    const VectorXr g = x.transpose() * (prob - y) + 1e-2 * beta;
    beta -= h.ldlt().solve(g);
  }
  const VectorXr scores = design(split.test) * beta;
  std::vector<double> s(scores.data(), scores.data() + scores.size());
  std::vector<int> labels;
  for (const auto& r : split.test) labels.push_back(r.label);
  EXPECT_GE(metrics::auc<double>(s, labels), 0.85);
}
