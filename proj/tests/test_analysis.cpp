#include "threelp/analysis.hpp"
#include "threelp/oracle.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace threelp;

namespace {
const StrideTiming kScenarioTiming{0.1, 0.6028};

GaitSolution gait(Scenario s, const BodyParams& p = fixtures::adult(), StrideTiming tm = kScenarioTiming,
                  double v = 1.0, double side = 1.0) {
  return synthesize_gait(p, tm, v, ScenarioSpec{s}, side);
}
}  // namespace

TEST(Trajectory, UniformSamplesWithPhaseBoundary) {
  const auto g = gait(Scenario::pseudo_passive);
  const auto s = sample_trajectory(g, 50);
  ASSERT_EQ(s.size(), 51u);
  EXPECT_EQ(s.front().t, 0.0);
  EXPECT_DOUBLE_EQ(s.back().t, kScenarioTiming.stride());
  int boundary = 0;
  for (const auto& x : s) boundary += x.t == kScenarioTiming.t_ds;
  EXPECT_EQ(boundary, 1);
  EXPECT_THROW(sample_trajectory(g, 1), std::invalid_argument);
  for (const auto& x : s) EXPECT_LE((x.q - g.maps->at(x.t) * g.q0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Trajectory, EndpointsSatisfyMirrorRelation) {
  const auto g = gait(Scenario::pseudo_passive);
  const auto s = sample_trajectory(g, 20);
  const auto sys = build_periodicity(*g.maps);
  EXPECT_LE(sys.mismatch(s.front().q, s.back().q).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_LE(s.front().Xdot.head<2>().norm(), 1e-12);
  EXPECT_LE(s.back().Xdot.head<2>().norm(), 1e-8);
}

TEST(Trajectory, ComInvariants) {
  const auto g = gait(Scenario::cop_modulated);
  const auto p = g.params;
  for (const auto& x : sample_trajectory(g, 30)) {
    const Vec3 com = (p.m1 * x.y1 + p.m2 * x.y2 + p.m3 * x.y3) / p.total_mass();
    EXPECT_NEAR(com.x(), x.com.x(), 1e-12);
    EXPECT_NEAR(com.y(), x.com.y(), 1e-12);
    EXPECT_NEAR(x.com_kinetic_energy, 0.5 * p.total_mass() * x.com_velocity.squaredNorm(), 1e-12);
  }
}

TEST(Trajectory, ComVelocityMatchesFiniteDifferences) {
  const auto g = gait(Scenario::pseudo_passive);
  const auto& m = *g.maps;
  const auto C = com_position_map(m.params);
  const double dt = 1e-4;
  for (double t : {0.05, 0.25, 0.4, 0.65}) {
    const Eigen::Vector2d fd = (C * (m.at(t + dt) * g.q0) - C * (m.at(t - dt) * g.q0)) / (2 * dt);
    const Eigen::Vector2d v = com_velocity_map(m.params, t > m.timing.t_ds) * (m.at(t) * g.q0);
    EXPECT_LE((fd - v).cwiseAbs().maxCoeff(), 1e-5) << t;
  }
}

TEST(Grf, TrapezoidalForEveryScenario) {
  for (auto sc : {Scenario::pseudo_passive, Scenario::long_double_support, Scenario::stage_walk,
                  Scenario::cop_modulated, Scenario::lip_like}) {
    const auto g = gait(sc);
    const auto r = grf_shape(sample_trajectory(g, 200), g.params);
    EXPECT_TRUE(r.ok(1e-9)) << to_string(sc) << ' ' << r.plateau_deviation << ' ' << r.ramp_nonlinearity << ' '
                            << r.sum_deviation;
  }
}

TEST(Cop, RampReachesToeAtEndOfSwing) {
  const auto g = gait(Scenario::cop_modulated);
  const auto s = sample_trajectory(g, 101);
  EXPECT_NEAR(stance_cop(s.back()).x(), 0.24, 1e-9);
  const auto& first_ss = *std::find_if(s.begin(), s.end(), [](const auto& x) { return x.phase == Phase::single_support; });
  EXPECT_LT(stance_cop(first_ss).x(), 0.24 * 0.05);
}

TEST(Scenarios, SagittalVelocityOrdering) {
  const double pp = sagittal_com_velocity_range(sample_trajectory(gait(Scenario::pseudo_passive), 400));
  const double lip = sagittal_com_velocity_range(sample_trajectory(gait(Scenario::lip_like), 400));
  const double cop = sagittal_com_velocity_range(sample_trajectory(gait(Scenario::cop_modulated), 400));
  EXPECT_GT(lip, pp);
  EXPECT_LT(cop, pp);
}

TEST(Work, ComExtremaWithLipLargerThanPseudoPassive) {
  EXPECT_GT(com_work_per_distance(gait(Scenario::lip_like)), com_work_per_distance(gait(Scenario::pseudo_passive)));
  auto g = gait(Scenario::pseudo_passive);
  g.v_des = 0.0;
  EXPECT_THROW(com_work_per_distance(g), std::invalid_argument);
}

TEST(Work, InvariantUnderSampleRefinement) {
  const auto g = gait(Scenario::pseudo_passive, economy_body(), StrideTiming::from_stride(1 / 1.8, 0.2), 1.6);
  for (auto w : {WorkMeasure::com_extrema, WorkMeasure::com_positive, WorkMeasure::total_positive}) {
    const double a = work_per_distance(g, w, 1000), b = work_per_distance(g, w, 2000);
    EXPECT_LE(std::abs(a - b), 1e-6 * std::abs(a)) << to_string(w);
  }
}

TEST(Work, MirrorInvariant) {
  const auto tm = StrideTiming::from_stride(1 / 1.8, 0.2);
  const auto a = gait(Scenario::pseudo_passive, economy_body(), tm, 1.6, 1.0);
  const auto b = gait(Scenario::pseudo_passive, economy_body(), tm, 1.6, -1.0);
  for (auto w : {WorkMeasure::com_extrema, WorkMeasure::total_positive})
    EXPECT_NEAR(work_per_distance(a, w), work_per_distance(b, w), 1e-10);
}

// Positive kinetic-energy increments checked against RK4 integration of the
// positive part of the power along the oracle trajectory.
TEST(Work, PositiveWorkMatchesIntegratedPower) {
  const auto p = economy_body();
  const auto tm = StrideTiming::from_stride(1 / 1.8, 0.2);
  const auto g = gait(Scenario::pseudo_passive, p, tm, 1.6);
  OracleConfig cfg;
  cfg.step = 2e-5;
  cfg.record_every = 1;
  const auto tr = integrate(p, tm, g.q0, cfg);
  double com_pos = 0, total_pos = 0, lo = 1e300, hi = -1e300;
  double prev_c = 0, prev_t = 0;
  for (std::size_t i = 0; i < tr.q.size(); ++i) {
    const bool moving = tr.t[i] > tm.t_ds;
    const Eigen::Vector2d v = com_velocity_map(p, moving) * tr.q[i];
    const double c = 0.5 * p.total_mass() * v.squaredNorm();
    const double k = mass_kinetic_energy(p, tr.q[i], moving);
    if (i > 0) {
      com_pos += std::max(0.0, c - prev_c);
      total_pos += std::max(0.0, k - prev_t);
    }
    prev_c = c;
    prev_t = k;
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  const double scale = p.total_mass() * 1.6 * tm.stride();
  EXPECT_NEAR(work_per_distance(g, WorkMeasure::com_positive), com_pos / scale, 1e-4 * com_pos / scale);
  EXPECT_NEAR(work_per_distance(g, WorkMeasure::total_positive), total_pos / scale, 1e-4 * total_pos / scale);
  EXPECT_NEAR(com_work_per_distance(g), (hi - lo) / scale, 1e-4 * (hi - lo) / scale);
}

TEST(Economy, HumanDoubleSupportRatio) {
  EXPECT_EQ(human_double_support_ratio(0.8), 0.273);
  EXPECT_EQ(human_double_support_ratio(2.5), 0.12);
  EXPECT_EQ(TdsPolicy::parse("human").ratio_at(0.8), 0.273);
  EXPECT_EQ(TdsPolicy::parse("fixed:0.1").ratio_at(1.7), 0.1);
  EXPECT_EQ(TdsPolicy::parse("fixed:0.3").text(), "fixed:0.29999999999999999");
  EXPECT_THROW(TdsPolicy::parse("fixed:1.2"), std::invalid_argument);
  EXPECT_THROW(TdsPolicy::parse("fixed:"), std::invalid_argument);
  EXPECT_THROW(TdsPolicy::parse("robot"), std::invalid_argument);
}

TEST(Economy, PeakLineOfSyntheticGrid) {
  EconomyGrid g;
  g.speeds = {1.0, 2.0};
  g.frequencies = {1.0, 1.5, 2.0, 2.5};
  g.economy.resize(2, 4);
  g.economy << 1, 2, 3, 4,  // increasing: boundary maximum
      1, 3, 3, 1;           // symmetric around 1.75
  g.tds_ratio.setConstant(2, 4, 0.1);
  g.feasible.assign(2, std::vector<bool>(4, true));
  g.failure.assign(2, std::vector<std::string>(4));
  const auto line = peak_line(g);
  EXPECT_TRUE(line[0].boundary);
  EXPECT_EQ(line[0].frequency, 2.5);
  EXPECT_FALSE(line[1].boundary);
  EXPECT_NEAR(line[1].frequency, 1.75, 1e-12);
  g.feasible[1].assign(4, false);
  EXPECT_THROW(peak_line(g), std::domain_error);
  EXPECT_FALSE(row_peak(g, 1));
}

TEST(Economy, SurfaceIsDeterministicAcrossThreads) {
  const std::vector<double> speeds = {1.0, 1.4}, freqs = {1.6, 1.8, 2.0};
  EconomyOptions one, three;
  one.threads = 1;
  three.threads = 3;
  const auto a = economy_surface(economy_body(), speeds, freqs, TdsPolicy::human(), one);
  const auto b = economy_surface(economy_body(), speeds, freqs, TdsPolicy::human(), three);
  std::ostringstream sa, sb;
  write_economy_csv(sa, a);
  write_economy_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(a.feasible_fraction(), 1.0);
  EXPECT_TRUE((a.economy.array() > 0).all());
  EXPECT_THROW(economy_surface(economy_body(), {}, freqs, TdsPolicy::human()), std::invalid_argument);
}

TEST(Economy, InfeasibleCellsAreFlagged) {
  const auto g = economy_surface(economy_body(), {1.0, 5.0}, {1.8}, TdsPolicy::human());
  EXPECT_TRUE(g.feasible[0][0]);
  EXPECT_FALSE(g.feasible[1][0]);  // ratio below zero at this speed
  EXPECT_FALSE(g.failure[1][0].empty());
  std::ostringstream os;
  write_economy_csv(os, g);
  EXPECT_NE(os.str().find(",nan,0\n"), std::string::npos);
}

TEST(Csv, TrajectoryHeaderAndPrecision) {
  std::ostringstream os;
  write_trajectory_csv(os, sample_trajectory(gait(Scenario::pseudo_passive), 3));
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')),
            "t,X2x,X2y,X1x,X1y,vX2x,vX2y,vX1x,vX1y,comx,comy,comvx,comvy,grf3z,grf2z,tau2y,tau2x,M3y,M3x,tau1y,tau1x");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 5);
  EXPECT_NE(s.find("0.10000000000000001"), std::string::npos);
}
