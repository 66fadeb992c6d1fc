#include <gtest/gtest.h>

#include <random>

#include "hrf/flow_engine.hpp"
#include "oracles.hpp"

using namespace hrf;

namespace {

SpacePtr su2_space() { return reductive_split(algebras::su2(), {}, 2.0 * kPi); }
SpacePtr s2xs1_space() { return reductive_split(algebras::su2_u1(), {Vec::Unit(4, 0)}, 2.0 * kPi); }

Mat diag3(double a, double b, double c) { return Eigen::Vector3d(a, b, c).asDiagonal(); }

std::vector<double> log_times(double from, double to, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(-std::exp(std::log(from) + (std::log(to) - std::log(from)) * i / (n - 1)));
  return out;
}

}  // namespace

TEST(RicciRhs, Examples) {
  EXPECT_LE((ricci_rhs(InvariantMetric(su2_space(), Mat::Identity(3, 3))) + Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-14);
  auto sp = s2xs1_space();
  Mat r = ricci_rhs(InvariantMetric(sp, diag3(1.7, 1.7, 0.4)));
  EXPECT_LE((r - diag3(-2, -2, 0)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE(isotropy_invariance_defect(*sp, r), 1e-10);
  auto t3 = reductive_split(algebras::abelian(3), {});
  EXPECT_EQ(ricci_rhs(InvariantMetric(t3, Mat::Identity(3, 3))).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Pack, RoundTrip) {
  Mat g(3, 3);
  g << 1, 2, 3, 2, 4, 5, 3, 5, 6;
  Vec v = pack_symmetric(g);
  ASSERT_EQ(v.size(), 6);
  EXPECT_EQ(v(1), 2.0);
  EXPECT_EQ(v(3), 4.0);
  EXPECT_EQ(unpack_symmetric(v, 3), g);
}

TEST(Integrate, ProductShrinksLinearly) {
  auto sp = s2xs1_space();
  FlowControls ctl;
  ctl.sample_times = {-0.75, -0.5, -0.25, -0.1};
  auto traj = integrate_flow(InvariantMetric(sp, diag3(2, 2, 1)), -1.0, 1.0, ctl);
  EXPECT_EQ(traj.status, FlowStatus::hit_singularity);
  ASSERT_TRUE(traj.t_star.has_value());
  EXPECT_LT(std::abs(*traj.t_star), 1e-6);
  for (std::size_t i = 0; i + 1 < traj.times.size(); ++i) {
    const double t = traj.times[i];
    EXPECT_NEAR(traj.metrics[i](0, 0), -2.0 * t, 1e-10);
    EXPECT_NEAR(traj.metrics[i](2, 2), 1.0, 1e-12);
  }
  EXPECT_LE(traj.max_invariance_defect, 1e-9);
}

TEST(Integrate, RoundSphereExtinction) {
  auto traj = integrate_flow(InvariantMetric(su2_space(), Mat::Identity(3, 3)), 0.0, 2.0, {});
  EXPECT_EQ(traj.status, FlowStatus::hit_singularity);
  EXPECT_NEAR(*traj.t_star, 1.0, 1e-6);
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    if (traj.times[i] > 0.999) continue;
    EXPECT_NEAR(traj.metrics[i](1, 1), 1.0 - traj.times[i], 1e-9);
  }
}

TEST(Integrate, BergerBackwardAgainstOracle) {
  FlowControls ctl;
  ctl.sample_times = {-100.0};
  auto traj = integrate_flow(InvariantMetric(su2_space(), diag3(0.9, 1, 1)), -1.0, -100.0, ctl);
  ASSERT_EQ(traj.status, FlowStatus::completed);
  const Mat& g = traj.metrics.front();
  auto ref = oracle::berger_backward({0.9, 1.0}, 100.0);
  EXPECT_NEAR(g(0, 0), ref.a, 1e-7 * ref.a);
  EXPECT_NEAR(g(1, 1), ref.b, 1e-7 * ref.b);
  // b = 2|t| - O(log|t|): at t = -100 the ratio is still 0.96 (0.9993 at -1e4)
  EXPECT_NEAR(g(1, 1) / 200.0, 0.95983, 1e-4);
  EXPECT_LT(g(0, 0), 10.0);
  EXPECT_LE(std::abs(g(0, 1)) + std::abs(g(1, 2)) + std::abs(g(0, 2)), 1e-12);
}

TEST(Monitors, RoundAncient) {
  FlowControls ctl;
  ctl.sample_times = log_times(1.0, 1e4, 30);
  auto traj = integrate_flow(InvariantMetric(su2_space(), Mat::Identity(3, 3)), -1.0, -1e4, ctl);
  auto rep = monitors(traj);
  EXPECT_NEAR(rep.typeI_min, std::sqrt(3.0) / 2.0, 1e-8);
  EXPECT_NEAR(rep.typeI_max, std::sqrt(3.0) / 2.0, 1e-8);
  for (double f : rep.F_values) EXPECT_NEAR(f, 1.5, 1e-6);
  EXPECT_TRUE(rep.scal_positive);
  // diam = 2 pi sqrt(|t|): ratio 2 pi
  EXPECT_NEAR(rep.diam_over_sqrt_t_max, 2.0 * kPi, 1e-8);
  auto cls = classify_asymptotics(traj);
  EXPECT_EQ(cls.verdict, Asymptotics::noncollapsed);
}

TEST(Monitors, BergerAncient) {
  FlowControls ctl;
  ctl.sample_times = log_times(1.0, 1e4, 41);
  auto traj = integrate_flow(InvariantMetric(su2_space(), diag3(0.9, 1, 1)), -1.0, -1e4, ctl);
  auto rep = monitors(traj);
  EXPECT_GE(rep.typeI_min, 0.1);
  EXPECT_LE(rep.typeI_max, 10.0);
  EXPECT_TRUE(rep.F_monotone);
  EXPECT_FALSE(traj.scal_positivity_violated);
  auto cls = classify_asymptotics(traj);
  EXPECT_EQ(cls.verdict, Asymptotics::collapsed);
  EXPECT_NEAR(cls.slope, -1.0 / 3.0, 0.05);
}

TEST(Monitors, ProductAncientCollapses) {
  FlowControls ctl;
  ctl.sample_times = log_times(1.0, 1e4, 9);
  auto traj = integrate_flow(InvariantMetric(s2xs1_space(), diag3(2, 2, 1)), -1.0, -1e4, ctl);
  auto cls = classify_asymptotics(traj);
  EXPECT_EQ(cls.verdict, Asymptotics::collapsed);
  EXPECT_NEAR(cls.slope, -1.0 / 3.0, 1e-8);
  EXPECT_TRUE(cls.ratio_below_005);
}

TEST(Monitors, RequiresAncientSpan) {
  auto traj = integrate_flow(InvariantMetric(su2_space(), Mat::Identity(3, 3)), 0.0, 0.5, {});
  EXPECT_THROW(monitors(traj), DomainError);
  EXPECT_THROW(classify_asymptotics(traj), DomainError);
}

TEST(Monotonicity, RandomForwardRuns) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto sp = su2_space();
  FlowControls ctl;
  for (int i = 0; i <= 10; ++i) ctl.sample_times.push_back(0.02 * i);
  for (int k = 0; k < 10; ++k) {
    Mat a(3, 3);
    for (int i = 0; i < 9; ++i) a.data()[i] = u(rng);
    Mat g = a * a.transpose() + 0.5 * Mat::Identity(3, 3);
    auto traj = integrate_flow(InvariantMetric(sp, g), 0.0, 0.2, ctl);
    for (std::size_t i = 0; i + 1 < traj.times.size(); ++i) {
      const double dF = (traj.monitors[i + 1].F - traj.monitors[i].F) / (traj.times[i + 1] - traj.times[i]);
      EXPECT_GE(dF, -1e-8 * (1.0 + std::abs(traj.monitors[i].F)));
    }
  }
}

TEST(Monotonicity, RateMatchesFiniteDifference) {
  auto sp = su2_space();
  InvariantMetric g(sp, diag3(1, 2, 2));
  const double formula = F_rate(g);
  EXPECT_NEAR(formula, std::pow(2.0, 5.0 / 3.0) / 24.0, 1e-13);
  const double h = 1e-3;
  FlowControls ctl;
  ctl.sample_times = {-h, -h / 2, h / 2, h};
  auto fwd = integrate_flow(g, 0.0, h, ctl);
  auto bwd = integrate_flow(g, 0.0, -h, ctl);
  auto F = [&](const FlowTrajectory& tr, double t) { return F_functional(tr.invariant_metric_at(t)).F; };
  // Richardson-combined central differences
  const double d1 = (F(fwd, h) - F(bwd, -h)) / (2 * h);
  const double d2 = (F(fwd, h / 2) - F(bwd, -h / 2)) / h;
  const double fd = (4 * d2 - d1) / 3;
  EXPECT_NEAR(fd, formula, 1e-4 * formula);
}

TEST(Equivariance, ParabolicScaling) {
  auto sp = su2_space();
  Mat g0 = diag3(0.5, 1.2, 2.0);
  g0(1, 2) = g0(2, 1) = 0.3;
  const double c = 3.0;
  FlowControls ctl;
  ctl.sample_times = {0.1};
  auto a = integrate_flow(InvariantMetric(sp, g0), 0.0, 0.1, ctl);
  FlowControls ctl2;
  ctl2.sample_times = {0.3};
  auto b = integrate_flow(InvariantMetric(sp, c * g0), 0.0, 0.3, ctl2);
  EXPECT_LE((b.metrics.back() - c * a.metrics.back()).cwiseAbs().maxCoeff(), 1e-9 * c);
}

TEST(Equivariance, DiagonalPreserved) {
  auto traj = integrate_flow(InvariantMetric(su2_space(), diag3(0.3, 1.0, 2.5)), 0.0, 0.1, {});
  for (const Mat& g : traj.metrics) {
    Mat off = g;
    off.diagonal().setZero();
    EXPECT_LE(off.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Budget, DerivativeNorms) {
  auto round = curvature_derivative_norms(InvariantMetric(su2_space(), Mat::Identity(3, 3)));
  EXPECT_NEAR(round[0], std::sqrt(3.0) / 2, 1e-14);
  EXPECT_LE(round[1], 1e-14);
  EXPECT_LE(round[2], 1e-14);
  auto berger = curvature_derivative_norms(InvariantMetric(su2_space(), diag3(0.3, 1, 1)));
  EXPECT_GT(berger[1], 1e-3);
  auto prod = curvature_derivative_norms(InvariantMetric(s2xs1_space(), diag3(2, 2, 0.5)));
  EXPECT_LE(prod[1], 1e-13);  // S^2 x S^1 is locally symmetric
  auto b = geometry_budget(InvariantMetric(su2_space(), diag3(0.3, 1, 1)), 0.5, 0.1);
  EXPECT_TRUE(b.valid());
  EXPECT_NEAR(b.D, 2 * kPi, 1e-12);
}
