#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "miracle/metrics.hpp"
#include "oracles.hpp"

using namespace miracle;
using namespace miracle::metrics;

namespace {

struct Dataset {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Both classes present; scores drawn from a small grid when `ties` is set.
Dataset random_dataset(Rng& rng, int max_n, bool ties) {
  boost::random::uniform_int_distribution<int> size(2, max_n), grid(0, 4);
  boost::random::uniform_real_distribution<double> u(0, 1);
  for (;;) {
    Dataset d;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) {
      d.scores.push_back(ties ? grid(rng) / 4.0 : u(rng));
      d.labels.push_back(u(rng) < 0.5);
    }
    const auto c = count_classes(d.labels);
    if (c.n_pos > 0 && c.n_neg > 0) return d;
  }
}

bool has_point(const RocCurve& roc, double fpr, double tpr) {
  for (const auto& p : roc.points)
    if (std::abs(p.fpr - fpr) < 1e-15 && std::abs(p.tpr - tpr) < 1e-15) return true;
  return false;
}

const std::vector<double> kHandScores{0.9, 0.6, 0.7, 0.2};
const std::vector<int> kHandLabels{1, 1, 0, 0};

}  // namespace

TEST(RocCurve, PerfectSeparationPassesThroughTopLeft) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  const std::vector<int> y{1, 1, 0, 0};
  EXPECT_TRUE(has_point(roc_curve<double>(s, y), 0.0, 1.0));
}

TEST(RocCurve, AllTiedIsDiagonal) {
  const std::vector<double> s(6, 0.4);
  const std::vector<int> y{1, 0, 1, 0, 0, 1};
  const auto roc = roc_curve<double>(s, y);
  ASSERT_EQ(roc.points.size(), 2u);
  EXPECT_EQ(roc.points[0].fpr, 0.0);
  EXPECT_EQ(roc.points[0].tpr, 0.0);
  EXPECT_EQ(roc.points[1].fpr, 1.0);
  EXPECT_EQ(roc.points[1].tpr, 1.0);
  EXPECT_EQ(auc<double>(s, y), 0.5);
}

TEST(RocCurve, HandEnumeratedPoints) {
  const auto roc = roc_curve<double>(kHandScores, kHandLabels);
  EXPECT_TRUE(has_point(roc, 0.0, 0.5));
  EXPECT_TRUE(has_point(roc, 0.5, 1.0));
  EXPECT_TRUE(std::isinf(roc.points.front().threshold));
}

TEST(RocCurve, SingleClassIsEvaluationError) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> y{1, 1};
  EXPECT_THROW(roc_curve<double>(s, y), EvaluationError);
  EXPECT_THROW(auc<double>(s, y), EvaluationError);
  EXPECT_THROW(tpr_at_fpr<double>(s, y, 0.2), EvaluationError);
}

TEST(RocCurve, PointsSortedAndInsideUnitSquare) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const auto d = random_dataset(rng, 40, t % 2 == 0);
    const auto roc = roc_curve<double>(d.scores, d.labels);
    EXPECT_EQ(roc.points.front().fpr, 0.0);
    EXPECT_EQ(roc.points.front().tpr, 0.0);
    EXPECT_EQ(roc.points.back().fpr, 1.0);
    EXPECT_EQ(roc.points.back().tpr, 1.0);
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
      EXPECT_GE(roc.points[i].fpr, roc.points[i - 1].fpr);
      EXPECT_GE(roc.points[i].tpr, roc.points[i - 1].tpr);
      EXPECT_LT(roc.points[i].threshold, roc.points[i - 1].threshold);
      EXPECT_LE(roc.points[i].fpr, 1.0);
      EXPECT_LE(roc.points[i].tpr, 1.0);
    }
  }
}

TEST(Auc, HandEnumeratedValue) { EXPECT_EQ(auc<double>(kHandScores, kHandLabels), 0.75); }

TEST(Auc, ChanceLevelOnIndependentLabels) {
  Rng rng(7);
  boost::random::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 20000; ++i) {
    s.push_back(u(rng));
    y.push_back(u(rng) < 0.4);
  }
  EXPECT_NEAR(auc<double>(s, y), 0.5, 0.03);
}

TEST(Auc, EqualsExhaustivePairEnumeration) {
  Rng rng(11);
  for (int t = 0; t < 1000; ++t) {
    const auto d = random_dataset(rng, 12, t % 2 == 1);
    EXPECT_EQ(auc<double>(d.scores, d.labels), oracle::pairwise_auc(d.scores, d.labels));
  }
}

TEST(Auc, TrapezoidAgreesWithPairwise) {
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    const auto d = random_dataset(rng, 300, t % 3 == 0);
    EXPECT_NEAR(trapezoid_auc(roc_curve<double>(d.scores, d.labels)), auc<double>(d.scores, d.labels), 1e-12);
  }
}

TEST(Auc, InvariantUnderIncreasingTransform) {
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    auto d = random_dataset(rng, 60, t % 2 == 0);
    const double before = auc<double>(d.scores, d.labels);
    for (auto& s : d.scores) s = std::exp(3 * s) - 7;
    EXPECT_EQ(auc<double>(d.scores, d.labels), before);
  }
}

TEST(TprAtFpr, HandEnumeratedValue) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.6, 0.5, 0.4, 0.2, 0.1};
  const std::vector<int> y{1, 1, 1, 0, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(tpr_at_fpr<double>(s, y, 0.2), 2.0 / 3.0);
}

TEST(TprAtFpr, PerfectSeparationIsOne) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  const std::vector<int> y{1, 1, 0, 0};
  for (double cap : {0.01, 0.2, 0.3, 0.99}) EXPECT_EQ(tpr_at_fpr<double>(s, y, cap), 1.0);
}

TEST(TprAtFpr, MatchesThresholdEnumeration) {
  Rng rng(19);
  boost::random::uniform_real_distribution<double> cap(0.01, 0.99);
  for (int t = 0; t < 1000; ++t) {
    const auto d = random_dataset(rng, 30, t % 2 == 0);
    const double c = t % 3 == 0 ? 0.2 : cap(rng);
    EXPECT_EQ(tpr_at_fpr<double>(d.scores, d.labels, c), oracle::enumerated_tpr_at_fpr(d.scores, d.labels, c));
  }
}

TEST(TprAtFpr, MonotoneInCap) {
  Rng rng(23);
  for (int t = 0; t < 200; ++t) {
    const auto d = random_dataset(rng, 50, t % 2 == 0);
    const auto roc = roc_curve<double>(d.scores, d.labels);
    double previous = 0;
    for (double c = 0.05; c < 1.0; c += 0.05) {
      const double v = tpr_at_fpr(roc, c);
      EXPECT_GE(v, previous);
      EXPECT_LE(v, 1.0);
      previous = v;
    }
    EXPECT_GE(tpr_at_fpr(roc, 0.3), tpr_at_fpr(roc, 0.2));
  }
}

TEST(TprAtFpr, CapOutsideOpenIntervalIsInputError) {
  EXPECT_THROW(tpr_at_fpr<double>(kHandScores, kHandLabels, 0.0), InputError);
  EXPECT_THROW(tpr_at_fpr<double>(kHandScores, kHandLabels, 1.0), InputError);
}

TEST(EvalReport, JsonCarriesCapsCountsAndNullThreshold) {
  const auto report = evaluate<double>(kHandScores, kHandLabels);
  const auto j = to_json(report);
  EXPECT_EQ(j.at("auc").get<double>(), 0.75);
  EXPECT_TRUE(j.at("tpr_at_fpr").contains("0.2"));
  EXPECT_TRUE(j.at("tpr_at_fpr").contains("0.3"));
  EXPECT_TRUE(j.at("roc").at(0).at("threshold").is_null());
  EXPECT_EQ(j.at("counts").at("n_pos").get<long>(), 2);
  EXPECT_EQ(j.at("counts").at("n_neg").get<long>(), 2);
  const auto back = eval_report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.auc, report.auc);
  EXPECT_EQ(back.tpr_at_fpr, report.tpr_at_fpr);
  ASSERT_EQ(back.roc.points.size(), report.roc.points.size());
  EXPECT_TRUE(std::isinf(back.roc.points[0].threshold));
  EXPECT_NEAR(trapezoid_auc(report.roc), report.auc, 1e-12);
}

TEST(EvalReport, RocCsvHasHeaderAndEndpoints) {
  const auto csv = roc_to_csv(roc_curve<double>(kHandScores, kHandLabels));
  EXPECT_EQ(csv.rfind("threshold,fpr,tpr\ninf,0,0\n", 0), 0u);
  EXPECT_NE(csv.find(",1,1\n"), std::string::npos);
}

TEST(EvalReport, MalformedJsonIsSchemaError) {
  EXPECT_THROW(eval_report_from_json(nlohmann::json{{"auc", 0.5}}), SchemaError);
}
