#include <gtest/gtest.h>

#include <vector>

#include "scalenet/core/rng.hpp"
#include "scalenet/train/losses.hpp"

using namespace scalenet;
using namespace scalenet::training;

TEST(DualLoss, HandComputedValues) {
  // exact prediction in both directions
  EXPECT_DOUBLE_EQ(dual_loss_term(4.0, 0.25, 4.0), 0.0);
  // forward off by one octave, swapped exact: 1/2 [1 + 0]
  EXPECT_DOUBLE_EQ(dual_loss_term(8.0, 0.25, 4.0), 0.5);
  // both off by one octave: 1/2 [1 + 1]
  EXPECT_DOUBLE_EQ(dual_loss_term(8.0, 0.5, 4.0), 1.0);
}

TEST(DualLoss, BatchMeanMatchesPrefactor) {
  std::vector<RatioTriple> batch = {{8.0, 0.25, 4.0}, {8.0, 0.5, 4.0}};
  EXPECT_DOUBLE_EQ(dual_loss(batch), 0.75);
  EXPECT_THROW(dual_loss({}), std::invalid_argument);
}

TEST(DualLoss, RejectsNonpositiveRatios) {
  EXPECT_THROW(dual_loss_term(0.0, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(dual_loss_term(1.0, -1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(dual_loss_term(1.0, 1.0, 0.0), std::invalid_argument);
}

TEST(ConsistentLoss, HandComputedValues) {
  EXPECT_DOUBLE_EQ(consistent_loss_term(7.3, 1.0 / 7.3), 0.0);
  EXPECT_DOUBLE_EQ(consistent_loss_term(4.0, 1.0), 4.0);  // (2 + 0)^2
  EXPECT_DOUBLE_EQ(consistent_loss_term(2.0, 2.0), 4.0);  // (1 + 1)^2
}

TEST(TotalLoss, WeightsAndEdgeCases) {
  EXPECT_DOUBLE_EQ(total_loss(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(total_loss(0.5, 4.0), 4.5);
  LossWeights w{2.0, 0.0};
  EXPECT_DOUBLE_EQ(total_loss(0.5, 123.0, w), 1.0);
  EXPECT_THROW(total_loss(1.0, 1.0, LossWeights{0.0, 0.0}), std::invalid_argument);
}

TEST(Losses, DualSampleRelabelingSymmetry) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double s_hat = std::exp2(rng.uniform(-4, 4));
    const double s_hat_sw = std::exp2(rng.uniform(-4, 4));
    const double gt = std::exp2(rng.uniform(-4, 4));
    EXPECT_NEAR(dual_loss_term(s_hat, s_hat_sw, gt), dual_loss_term(s_hat_sw, s_hat, 1.0 / gt), 1e-12);
  }
}

TEST(Losses, ConsistentLossInvariances) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double a = std::exp2(rng.uniform(-4, 4));
    const double b = std::exp2(rng.uniform(-4, 4));
    const double base = consistent_loss_term(a, b);
    EXPECT_NEAR(consistent_loss_term(b, a), base, 1e-12);
    EXPECT_NEAR(consistent_loss_term(1.0 / b, 1.0 / a), base, 1e-12);
  }
}

TEST(Losses, NonnegativeAndZeroOnlyAtExactSolution) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double s_hat = std::exp2(rng.uniform(-3, 3));
    const double s_hat_sw = std::exp2(rng.uniform(-3, 3));
    const double gt = std::exp2(rng.uniform(-3, 3));
    const double ld = dual_loss_term(s_hat, s_hat_sw, gt);
    const double lc = consistent_loss_term(s_hat, s_hat_sw);
    EXPECT_GE(ld, 0.0);
    EXPECT_GE(lc, 0.0);
    const double tot = total_loss(ld, lc);
    const bool at_solution = std::abs(std::log2(s_hat) - std::log2(gt)) < 1e-12 &&
                             std::abs(std::log2(s_hat_sw) + std::log2(gt)) < 1e-12;
    if (tot < 1e-20) EXPECT_TRUE(at_solution);
    if (at_solution) EXPECT_LT(tot, 1e-20);
  }
  // exact solution hits zero
  EXPECT_DOUBLE_EQ(total_loss(dual_loss_term(4.0, 0.25, 4.0), consistent_loss_term(4.0, 0.25)), 0.0);
}

TEST(LossGrad, MatchesCentralFiniteDifferences) {
  Rng rng(4);
  const double eps = 1e-7;
  for (int i = 0; i < 100; ++i) {
    const double s_hat = std::exp2(rng.uniform(-3, 3));
    const double s_hat_sw = std::exp2(rng.uniform(-3, 3));
    const double gt = std::exp2(rng.uniform(-3, 3));

    const RatioPairGrad gd = dual_loss_term_grad(s_hat, s_hat_sw, gt);
    const double fd_d1 = (dual_loss_term(s_hat + eps, s_hat_sw, gt) - dual_loss_term(s_hat - eps, s_hat_sw, gt)) / (2 * eps);
    const double fd_d2 =
        (dual_loss_term(s_hat, s_hat_sw + eps, gt) - dual_loss_term(s_hat, s_hat_sw - eps, gt)) / (2 * eps);
    EXPECT_LT(std::abs(fd_d1 - gd.d_pred), 1e-6 * std::max(1.0, std::abs(fd_d1)));
    EXPECT_LT(std::abs(fd_d2 - gd.d_pred_swapped), 1e-6 * std::max(1.0, std::abs(fd_d2)));

    const RatioPairGrad gc = consistent_loss_term_grad(s_hat, s_hat_sw);
    const double fc_1 = (consistent_loss_term(s_hat + eps, s_hat_sw) - consistent_loss_term(s_hat - eps, s_hat_sw)) / (2 * eps);
    const double fc_2 = (consistent_loss_term(s_hat, s_hat_sw + eps) - consistent_loss_term(s_hat, s_hat_sw - eps)) / (2 * eps);
    EXPECT_LT(std::abs(fc_1 - gc.d_pred), 1e-6 * std::max(1.0, std::abs(fc_1)));
    EXPECT_LT(std::abs(fc_2 - gc.d_pred_swapped), 1e-6 * std::max(1.0, std::abs(fc_2)));
  }
}
