#include <cmath>

#include <gtest/gtest.h>

#include "dpmppp/diagnostics.hpp"

using namespace dpmppp;

TEST(TheoryScenario, DefaultsValidate) {
  for (int d = 2; d <= 6; ++d) EXPECT_NO_THROW(default_theory_scenario(d).validate());
  EXPECT_EQ(default_theory_scenario(3).basis()->dim(), 3);
  EXPECT_EQ(default_theory_scenario(5).basis()->dim(), 5);
}

TEST(TheoryScenario, RejectsBadSettings) {
  TheoryScenario s = default_theory_scenario(3);
  s.radius_r = 0.9 * s.true_theta.norm();
  EXPECT_THROW(s.validate(), ConfigError);
  s = default_theory_scenario(3);
  s.radius_r = HUGE_VAL;
  EXPECT_THROW(s.validate(), ConfigError);
  s = default_theory_scenario(3);
  s.exposure_ladder = {100.0, 10.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = default_theory_scenario(3);
  s.delta = 2.0;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(dominance_ratio(default_theory_scenario(4), 1, 1), ConfigError);
  EXPECT_THROW(chamber_gap_check(default_theory_scenario(5), 1.0, 1, 1), ConfigError);
}

TEST(PopulationCriterion, MaximizerIsTheTruthWithoutPenalty) {
  for (const int d : {2, 3, 4}) {
    const TheoryProblem p(default_theory_scenario(d));
    const PopulationCriterion pop(p);
    const Eigen::VectorXd start = Eigen::VectorXd::Constant(d, 0.5);
    const Eigen::VectorXd star = pop.maximize(p.scn.delta, start);
    EXPECT_LT((star - p.scn.true_theta).cwiseAbs().maxCoeff(), 1e-4) << d;
  }
}

TEST(ChamberClassifier, Classifies) {
  const TheoryProblem p(default_theory_scenario(3));
  const ChamberClassifier cls(p);
  EXPECT_EQ(cls(p.scn.true_theta), Chamber::positive);
  EXPECT_EQ(cls(-p.scn.true_theta), Chamber::negative);
  EXPECT_EQ(cls(Eigen::Vector3d(1.0, 0.0, -1.0)), Chamber::sign_changing);
  EXPECT_EQ(cls(Eigen::Vector3d(1e-6, 1e-6, 1e-6)), Chamber::other);
  EXPECT_EQ(cls(Eigen::Vector3d::Constant(p.scn.radius_r)), Chamber::other);
}

TEST(EmpiricalBlock, SignSymmetricCriterion) {
  const TheoryProblem p(default_theory_scenario(3));
  Rng rng = derive_stream(1);
  const EmpiricalBlock e = p.empirical(200.0, rng);
  Rng probe = derive_stream(2);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd th(3);
    for (int j = 0; j < 3; ++j) th[j] = 4.0 * uniform01(probe) - 2.0;
    EXPECT_EQ(e.j_abs(th), e.j_abs(-th));
  }
}

TEST(EmpiricalBlock, MatchesBlockObjectiveOnThePositiveChamber) {
  const TheoryProblem p(default_theory_scenario(3));
  Rng rng = derive_stream(3);
  const EmpiricalBlock e = p.empirical(300.0, rng);
  ThetaBlockContext ctx = e.ctx;
  ctx.events = {WeightedRows{1.0, &e.sparse}};
  const Eigen::VectorXd th = p.scn.true_theta;
  EXPECT_NEAR(e.j_abs(th), coefficient_value(th, ctx, nullptr) / 300.0, 1e-12 * std::abs(e.j_abs(th)));
}

TEST(ModeConsistency, ErrorShrinksAlongTheLadder) {
  TheoryScenario s = default_theory_scenario(3);
  s.exposure_ladder = {10.0, 1000.0, 100000.0};
  const TrendResult r = mode_consistency_trend(s, 2, 7, 2);
  ASSERT_EQ(r.errors.size(), 2u);
  EXPECT_EQ(r.reps_decreasing(), 2);
  const std::vector<double> m = r.mean_error();
  EXPECT_LT(m.back(), 0.1 * m.front());
}

TEST(ChamberGap, SignChangingChamberLosesAtModerateExposure) {
  const GapResult g = chamber_gap_check(default_theory_scenario(2), 1000.0, 2, 11, 101);
  EXPECT_EQ(g.gap_count(), 2);
  for (const auto& r : g.reps) {
    EXPECT_NEAR(r.sup_positive, r.sup_negative, 1e-12 * std::abs(r.sup_positive));
    EXPECT_LT(r.argmax_distance, 2.0 * g.grid_step * std::sqrt(2.0));
  }
}

TEST(Dominance, RatioDecreasesAndChambersAreSymmetric) {
  TheoryScenario s = default_theory_scenario(2);
  s.exposure_ladder = {10.0, 100.0, 1000.0};
  const DominanceResult r = dominance_ratio(s, 2, 13, 200);
  EXPECT_EQ(r.reps_decreasing(), 2);
  double scale = 0.0;
  for (const auto& rep : r.reps) {
    EXPECT_TRUE(std::isfinite(rep.log_ratio[0]));
    EXPECT_GT(std::exp(rep.log_ratio[0]), 0.0);
    for (const double v : rep.log_z_positive) scale = std::max(scale, std::abs(v));
  }
  EXPECT_LE(r.max_symmetry_gap(), 1e-9 * scale);
}

TEST(TruncatedLog, LeavesTheSignedChambersUnchanged) {
  const TruncationCheck t = truncated_log_check(default_theory_scenario(3), 500.0, 100, 17);
  EXPECT_EQ(t.points, 100);
  EXPECT_EQ(t.mismatches, 0);
  EXPECT_GT(std::exp(-t.l_tr), 0.0);
  EXPECT_LT(std::exp(-t.l_tr), default_theory_scenario(3).delta);
}

TEST(Concavity, ProbeAndPairsOnATheoryBlock) {
  const TheoryProblem p(default_theory_scenario(4));
  Rng rng = derive_stream(19);
  const EmpiricalBlock e = p.empirical(100.0, rng);
  ThetaBlockContext ctx = e.ctx;
  ctx.events = {WeightedRows{1.0, &e.sparse}};
  const ConcavityReport rep = concavity_probe(ctx, p.mass, 100, rng);
  EXPECT_LE(rep.max_lambda, rep.bound);
  EXPECT_LE(strong_concavity_pairs(ctx, p.mass, 50, rng), 1e-10);
}

TEST(Concavity, ProbeRefusesZeroExposure) {
  const TheoryProblem p(default_theory_scenario(3));
  const ThetaBlockContext ctx = make_block_context(0.0, 1.0, p.mass, p.omega);
  Rng rng = derive_stream(23);
  EXPECT_THROW(concavity_probe(ctx, p.mass, 10, rng), DiagnosticFailure);
}
