#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <boost/random/uniform_real_distribution.hpp>

#include "miracle/focal_loss.hpp"
#include "oracles.hpp"

using namespace miracle;
using namespace miracle::objectives;

TEST(FocalLoss, ConfidentCorrectIsNearZero) {
  EXPECT_LT(focal_loss(1.0 - 1e-9, 1, FocalParams{}), 1e-20);
}

TEST(FocalLoss, WorkedValueAtHalf) {
  EXPECT_NEAR(focal_loss(0.5, 1, FocalParams{0.8, 4.0}), 0.0346574, 1e-6);
  EXPECT_NEAR(focal_loss(0.5, 1, FocalParams{0.8, 4.0}), 0.8 * 0.0625 * std::log(2.0), 1e-15);
}

TEST(FocalLoss, GammaZeroIsWeightedCrossEntropy) {
  Rng rng(1);
  boost::random::uniform_real_distribution<double> p(0.01, 0.99), a(0.05, 0.95);
  for (int t = 0; t < 100; ++t) {
    const double ph = p(rng), alpha = a(rng);
    EXPECT_NEAR(focal_loss(ph, 1, FocalParams{alpha, 0.0}), -alpha * std::log(ph), 1e-12);
    EXPECT_NEAR(focal_loss(ph, 0, FocalParams{alpha, 0.0}), -(1 - alpha) * std::log(1 - ph), 1e-12);
  }
}

TEST(FocalLoss, ClampKeepsLossFinite) {
  EXPECT_TRUE(std::isfinite(focal_loss(0.0, 1, FocalParams{})));
  EXPECT_TRUE(std::isfinite(focal_loss(1.0, 0, FocalParams{})));
  EXPECT_NEAR(focal_loss(0.0, 1, FocalParams{0.8, 0.0}), -0.8 * std::log(1e-7), 1e-9);
}

TEST(FocalLoss, NonBinaryLabelIsInputError) {
  EXPECT_THROW(focal_loss(0.5, 2, FocalParams{}), InputError);
  EXPECT_THROW(focal_loss_grad(0.5, -1, FocalParams{}), InputError);
}

TEST(FocalLoss, NonnegativeAndStrictlyDecreasingInPt) {
  for (double gamma : {0.0, 1.0, 4.0})
    for (int y : {0, 1}) {
      double previous = std::numeric_limits<double>::infinity();
      for (double pt = 0.01; pt < 0.995; pt += 0.01) {
        const double ph = y == 1 ? pt : 1 - pt;
        const double loss = focal_loss(ph, y, FocalParams{0.8, gamma});
        EXPECT_GE(loss, 0.0);
        EXPECT_LT(loss, previous);
        previous = loss;
      }
    }
}

TEST(FocalLoss, LogitFormAgreesWithProbabilityForm) {
  for (double z : {-4.0, -1.0, 0.0, 0.7, 3.0})
    for (int y : {0, 1})
      EXPECT_NEAR(focal_loss_from_logit(z, y, FocalParams{}), focal_loss(vb::sigmoid(z), y, FocalParams{}), 1e-12);
}

TEST(FocalGrad, MatchesFiniteDifferences) {
  Rng rng(2);
  boost::random::uniform_real_distribution<double> logit(-8, 8), a(0.05, 0.95), g(0.0, 5.0), u(0, 1);
  const double h = 1e-5;
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const double z = logit(rng);
    const int y = u(rng) < 0.5 ? 1 : 0;
    const FocalParams params{a(rng), g(rng)};
    const double numeric =
        (focal_loss_from_logit(z + h, y, params) - focal_loss_from_logit(z - h, y, params)) / (2 * h);
    worst = std::max(worst, oracle::relative_error(focal_loss_grad(z, y, params), numeric, 1e-12));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(FocalGrad, SaturatedCorrectLogitHasVanishingGradient) {
  EXPECT_LT(std::abs(focal_loss_grad(40.0, 1, FocalParams{})), 1e-60);
  EXPECT_EQ(focal_loss_grad(1000.0, 1, FocalParams{}), 0.0);
}

TEST(FocalGrad, BalancedGammaZeroIsHalfCrossEntropyGradient) {
  for (double z : {-3.0, -0.5, 0.0, 1.2, 5.0})
    for (int y : {0, 1}) EXPECT_NEAR(focal_loss_grad(z, y, FocalParams{0.5, 0.0}), 0.5 * (vb::sigmoid(z) - y), 1e-14);
}

TEST(BatchObjective, IdenticalSamplesEqualSingleLoss) {
  const std::vector<double> p(7, 0.3);
  const std::vector<int> y(7, 1);
  EXPECT_NEAR(batch_objective<double>(p, y, FocalParams{}, 123.0, 0.0), focal_loss(0.3, 1, FocalParams{}), 1e-15);
}

TEST(BatchObjective, KlPenaltyArithmetic) {
  const std::vector<double> p{1.0 - 1e-12};
  const std::vector<int> y{1};
  EXPECT_NEAR(batch_objective<double>(p, y, FocalParams{0.8, 4}, 2e6, 1e-6), 2.0, 1e-12);
}

TEST(BatchObjective, MatchesHandSummedLoop) {
  Rng rng(3);
  boost::random::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<double> p;
  std::vector<int> y;
  for (int i = 0; i < 5; ++i) {
    p.push_back(u(rng));
    y.push_back(u(rng) < 0.5);
  }
  const FocalParams params{0.7, 2.5};
  double manual = 0;
  for (int i = 0; i < 5; ++i) {
    const double pt = y[i] ? p[i] : 1 - p[i];
    const double at = y[i] ? 0.7 : 0.3;
    manual += at * std::pow(1 - pt, 2.5) * -std::log(pt);
  }
  manual = manual / 5 + 1e-6 * 4.5;
  EXPECT_NEAR(batch_objective<double>(p, y, params, 4.5, 1e-6), manual, 1e-12);
}

TEST(BatchObjective, EmptyOrMismatchedIsInputError) {
  const std::vector<double> none;
  const std::vector<int> no_labels;
  EXPECT_THROW(batch_objective<double>(none, no_labels, FocalParams{}, 0.0, 0.0), InputError);
  const std::vector<double> two{0.2, 0.4};
  const std::vector<int> one{1};
  EXPECT_THROW(batch_objective<double>(two, one, FocalParams{}, 0.0, 0.0), InputError);
}

TEST(FocalParams, Validation) {
  EXPECT_THROW((FocalParams{0.0, 4}.validate()), ConfigError);
  EXPECT_THROW((FocalParams{1.0, 4}.validate()), ConfigError);
  EXPECT_THROW((FocalParams{0.5, -1}.validate()), ConfigError);
  EXPECT_NO_THROW(FocalParams{}.validate());
}
