#include "threelp/gaits.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace threelp;

namespace {
const StrideTiming kScenarioTiming{0.1, 0.6028};
}

TEST(Periodicity, StructuralMatrices) {
  const auto M = PeriodicitySystem::relative_matrix();
  const auto T = PeriodicitySystem::exchange_matrix();
  EXPECT_EQ((T * T), (Eigen::Matrix<double, 8, 8>::Identity()));
  Eigen::Matrix<double, 8, 1> xp;
  xp << 1, 1, 1, 1, 0, 0, 1, 1;  // pelvis over both feet
  EXPECT_EQ((M * xp).head<4>().norm(), 0.0);
  EXPECT_EQ(PeriodicitySystem::sign_matrix().diagonal().sum(), 0.0);
}

TEST(Periodicity, NullSpaceHasSevenDirections) {
  for (double T : {0.7, 0.9, 1.1}) {
    const auto sys = build_periodicity(fixtures::adult(), StrideTiming{0.3, T - 0.3});
    const auto sp = singular_spectrum(sys, Reduced::R0);
    ASSERT_EQ(sp.gram.size(), 15u);
    EXPECT_EQ(sp.count_below(1e-10), 7) << T;
    EXPECT_NEAR(sp.gram[0], sp.sigma[0] * sp.sigma[0], 1e-12 * sp.gram[0]);
    EXPECT_NO_THROW(null_basis(sys, Reduced::R0, 7));
    EXPECT_THROW(null_basis(sys, Reduced::R0, 6), NullSpaceMismatch);
  }
}

TEST(Periodicity, NullBasisSolvesPeriodicity) {
  const auto sys = build_periodicity(fixtures::adult(), StrideTiming{0.3, 0.6});
  const auto nb = null_basis(sys, Reduced::R0, 7);
  EXPECT_LE((sys.R_full * nb.lifted).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((nb.reduced.transpose() * nb.reduced - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-12);
  for (int row : {idx::dX2x, idx::dX2y, idx::X3x, idx::X3y, idx::F1x, idx::M1x})
    EXPECT_EQ(nb.lifted.row(row).norm(), 0.0);
}

TEST(Relax, AdultTiming) {
  const auto r = find_relax_time(fixtures::adult(), 0.3, 0.32, 1.5);
  EXPECT_NEAR(r.t_relax, 0.8637996403, 1e-8);
  EXPECT_LE(r.ratio, 1e-10);
  EXPECT_FALSE(r.scan_t.empty());
}

TEST(Relax, ShortDoubleSupportAndKid) {
  EXPECT_NEAR(find_relax_time(fixtures::adult(), 0.1, 0.3, 1.5).t_relax, 0.6782245672, 1e-8);
  const auto kid = find_relax_time(default_params(BodySize::kid), 0.3, 0.32, 1.5);
  EXPECT_TRUE(std::isfinite(kid.t_relax));
  EXPECT_GT(kid.t_relax, 0.6);
  EXPECT_LT(kid.t_relax, 0.85);
}

TEST(Relax, NoRootReported) {
  EXPECT_THROW(find_relax_time(fixtures::adult(), 0.3, 1.2, 1.5), NoRelaxTime);
  EXPECT_THROW(find_relax_time(fixtures::adult(), 0.3, 0.2, 1.5), std::invalid_argument);
}

TEST(Scenario, NamesRoundTrip) {
  for (auto s : {Scenario::pseudo_passive, Scenario::long_double_support, Scenario::stage_walk,
                 Scenario::cop_modulated, Scenario::lip_like})
    EXPECT_EQ(parse_scenario(to_string(s)), s);
  EXPECT_FALSE(parse_scenario("moonwalk"));
}

TEST(Scenario, BodyAndTimingVariants) {
  const auto p = fixtures::adult();
  const auto lip = lip_like_params(p);
  EXPECT_NEAR(lip.total_mass(), p.total_mass(), 1e-12);
  EXPECT_NEAR(lip.m2, 0.05 * p.m2, 1e-15);
  EXPECT_NEAR(lip.z2, 0.1 * p.z2, 1e-15);
  const auto t = long_double_support_timing(kScenarioTiming);
  EXPECT_NEAR(t.t_ds, 0.2, 1e-15);
  EXPECT_NEAR(t.stride(), kScenarioTiming.stride(), 1e-15);
  EXPECT_NEAR(cop_ramp_torque(p, 0.24), 164.808, 1e-9);
}

TEST(Gait, PseudoPassiveAtRelaxTimingNeedsNoTorque) {
  const auto p = fixtures::adult();
  const double T = find_relax_time(p, 0.1, 0.3, 1.5).t_relax;
  const auto g = synthesize_gait(p, StrideTiming{0.1, T - 0.1}, 1.0, ScenarioSpec{});
  EXPECT_LE(g.diagnostics.torque_norm, 1e-6);
  EXPECT_LE(g.diagnostics.periodicity, 1e-9);
  EXPECT_LE(g.diagnostics.end_swing_speed, 1e-8);
  EXPECT_NEAR(g.q0[idx::X2x], -1.0 * T, 1e-9);
  EXPECT_NEAR(g.q0[idx::d], 1.0, 1e-12);
}

TEST(Gait, EveryScenarioIsPeriodicAndImpactFree) {
  const auto p = fixtures::adult();
  for (auto s : {Scenario::pseudo_passive, Scenario::long_double_support, Scenario::stage_walk,
                 Scenario::cop_modulated, Scenario::lip_like}) {
    const auto g = synthesize_gait(p, kScenarioTiming, 1.0, ScenarioSpec{s});
    EXPECT_LE(g.diagnostics.periodicity, 1e-9) << to_string(s);
    EXPECT_LE(g.diagnostics.end_swing_speed, 1e-8) << to_string(s);
    EXPECT_LE(g.diagnostics.r0_residual, 1e-9) << to_string(s);
  }
}

TEST(Gait, ScenarioConstraintsHold) {
  const auto p = fixtures::adult();
  const auto stage = synthesize_gait(p, kScenarioTiming, 1.0, ScenarioSpec{Scenario::stage_walk});
  EXPECT_LE(stage.diagnostics.max_lateral_com_speed, 1e-6);
  for (int i : {idx::May, idx::Max, idx::rMay, idx::rMax}) EXPECT_NEAR(stage.q0[i], 0.0, 1e-10);
  const auto cop = synthesize_gait(p, kScenarioTiming, 1.0, ScenarioSpec{Scenario::cop_modulated});
  EXPECT_NEAR(cop.q0[idx::rMay], cop_ramp_torque(p, 0.24), 1e-8);
  EXPECT_NEAR(cop.q0[idx::May], 0.0, 1e-10);
  const auto lds = synthesize_gait(p, kScenarioTiming, 1.0, ScenarioSpec{Scenario::long_double_support});
  EXPECT_NEAR(lds.timing.t_ds, 0.2, 1e-15);
}

TEST(Gait, MinimalTorqueMirrorsWithSide) {
  const auto ctx = make_context(fixtures::adult(), kScenarioTiming);
  const auto a = solve_gait(ctx, 1.2, ScenarioSpec{}, 1.0);
  const auto b = solve_gait(ctx, 1.2, ScenarioSpec{}, -1.0);
  EXPECT_NEAR(a.diagnostics.torque_norm, b.diagnostics.torque_norm, 1e-9);
  EXPECT_NEAR(a.q0[idx::X1x], b.q0[idx::X1x], 1e-9);
  EXPECT_NEAR(a.q0[idx::X1y], -b.q0[idx::X1y], 1e-9);
  EXPECT_THROW(solve_gait(ctx, 1.0, ScenarioSpec{}, 0.5), std::invalid_argument);
}

TEST(Gait, NestedConstraintsCannotLowerCost) {
  const auto ctx = make_context(fixtures::adult(), kScenarioTiming);
  const auto free = solve_gait(ctx, 1.0, ScenarioSpec{});
  ScenarioSpec s;
  s.kind = Scenario::cop_modulated;
  const auto cop = solve_gait(ctx, 1.0, s);
  EXPECT_GE(cop.diagnostics.torque_norm, free.diagnostics.torque_norm);
}

TEST(Gait, InfeasibleBlockIsNamed) {
  const auto ctx = make_context(fixtures::adult(), kScenarioTiming);
  ScenarioSpec s;
  s.zero_all_torques = true;
  try {
    solve_gait(ctx, 1.0, s);
    FAIL() << "expected infeasible";
  } catch (const InfeasibleGait& e) {
    EXPECT_EQ(e.block(), "all-torques");
  }
}

TEST(Gait, JsonRecord) {
  const auto g = synthesize_gait(fixtures::adult(), kScenarioTiming, 1.0, ScenarioSpec{});
  const auto j = to_json(g);
  EXPECT_EQ(j["scenario"], "pseudo-passive");
  EXPECT_EQ(j["Q0"].size(), 23u);
  EXPECT_EQ(j["alpha"].size(), 7u);
  EXPECT_TRUE(j["diagnostics"].contains("torque_norm"));
}
