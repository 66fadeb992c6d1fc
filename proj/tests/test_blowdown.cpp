#include <gtest/gtest.h>

#include "hrf/blowdown.hpp"
#include "oracles.hpp"

using namespace hrf;

namespace {

SpacePtr su2_space() { return reductive_split(algebras::su2(), {}, 2.0 * kPi); }
SpacePtr s2xs1_space() { return reductive_split(algebras::su2_u1(), {Vec::Unit(4, 0)}, 2.0 * kPi); }

Mat diag(std::initializer_list<double> v) {
  Vec d(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) d(i++) = x;
  return d.asDiagonal();
}

FlowControls sparse_samples() {
  FlowControls c;
  c.sample_times = {-1.0};
  return c;
}

const FlowTrajectory& berger_traj() {
  static const FlowTrajectory traj =
      integrate_flow(InvariantMetric(su2_space(), diag({0.9, 1, 1})), -1.0, -1e4, sparse_samples());
  return traj;
}

const FlowTrajectory& product_traj() {
  static const FlowTrajectory traj =
      integrate_flow(InvariantMetric(s2xs1_space(), diag({2, 2, 1})), -1.0, -1e4, sparse_samples());
  return traj;
}

const FlowTrajectory& round_traj() {
  static const FlowTrajectory traj =
      integrate_flow(InvariantMetric(su2_space(), Mat::Identity(3, 3)), -1.0, -1e4, sparse_samples());
  return traj;
}

DetectionOptions su2_detection() {
  DetectionOptions o;
  o.period_factor = 2.0;
  return o;
}

LimitOptions no_epsilon() {
  LimitOptions o;
  o.measure_epsilon = false;
  return o;
}

}  // namespace

TEST(Blowdown, ProductClosedForm) {
  auto seq = blowdown_metrics(product_traj(), {1e2, 1e3});
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Mat expect = diag({2, 2, 1.0 / seq.taus[i]});
    EXPECT_LE((seq.metrics[i].G() - expect).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Blowdown, RoundIsSelfSimilar) {
  auto seq = blowdown_metrics(round_traj(), {1e2, 1e3, 1e4});
  for (const auto& g : seq.metrics) EXPECT_LE((g.G() - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Blowdown, BergerMatchesOracle) {
  auto seq = blowdown_metrics(berger_traj(), {1e2, 1e3, 1e4});
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double tau = seq.taus[i];
    const auto o = oracle::berger_backward({0.9, 1.0}, tau);
    EXPECT_NEAR(seq.metrics[i].G()(0, 0), o.a / tau, 1e-7 * o.a / tau);
    EXPECT_NEAR(seq.metrics[i].G()(1, 1), o.b / tau, 1e-7);
  }
  EXPECT_NEAR(seq.metrics.back().G()(1, 1), 2.0, 2e-3);
}

TEST(Blowdown, CoverageAndOrdering) {
  EXPECT_THROW(blowdown_metrics(berger_traj(), {1e2, 1e5}), DomainError);
  EXPECT_THROW(blowdown_metrics(berger_traj(), {1e3, 1e2}), ConfigError);
  EXPECT_THROW(blowdown_metrics(berger_traj(), {1e2}, 0.5), DomainError);
}

TEST(Detection, Berger) {
  auto det = detect_collapsing_torus(blowdown_metrics(berger_traj(), {1e2, 1e3, 1e4}), su2_detection());
  ASSERT_EQ(det.s, 1);
  EXPECT_LE((det.t_basis[0] - Vec::Unit(3, 0)).norm(), 1e-10);
  EXPECT_NEAR(det.rates[0], -1.0, 0.05);
  EXPECT_NEAR(det.torus.group_periods[0], 4.0 * kPi, 1e-9);
  for (std::size_t i = 1; i < det.eigen_decay.size(); ++i) EXPECT_LT(det.eigen_decay[i], det.eigen_decay[i - 1]);
  EXPECT_THROW(detect_collapsing_torus(blowdown_metrics(berger_traj(), {1e2, 1e3})), PreconditionError);
  EXPECT_THROW(detect_collapsing_torus(blowdown_metrics(berger_traj(), {1e2, 2e2, 5e2})), PreconditionError);
}

TEST(Detection, ProductAndRound) {
  auto det = detect_collapsing_torus(blowdown_metrics(product_traj(), {1e2, 1e3, 1e4}));
  ASSERT_EQ(det.s, 1);
  EXPECT_LE((det.t_basis[0] - Vec::Unit(4, 3)).norm(), 1e-12);
  EXPECT_NEAR(det.rates[0], -1.0, 1e-6);
  auto none = detect_collapsing_torus(blowdown_metrics(round_traj(), {1e2, 1e3, 1e4}));
  EXPECT_EQ(none.s, 0);
  EXPECT_TRUE(none.t_basis.empty());
}

TEST(Symmetrize, Examples) {
  auto sp = su2_space();
  auto t = verify_torus(*sp, {Vec::Unit(3, 0)}, {4.0 * kPi});
  auto gt = symmetrize(InvariantMetric(sp, diag({1, 2, 4})), t);
  EXPECT_LE((gt.G() - diag({1, 3, 3})).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE(torus_invariance_defect(*sp, t, gt.G()), 1e-10);
  EXPECT_LE((symmetrize(gt, t).G() - gt.G()).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LE((symmetrize(InvariantMetric(sp, diag({1, 2, 2})), t).G() - diag({1, 2, 2})).cwiseAbs().maxCoeff(),
            1e-13);

  auto sp4 = s2xs1_space();
  auto t4 = verify_torus(*sp4, {Vec::Unit(4, 3)});
  EXPECT_LE((symmetrize(InvariantMetric(sp4, diag({3, 3, 0.2})), t4).G() - diag({3, 3, 0.2})).cwiseAbs().maxCoeff(),
            1e-15);
}

TEST(Symmetrize, GeneralMetricBecomesInvariant) {
  auto sp = su2_space();
  auto t = verify_torus(*sp, {Vec(Eigen::Vector3d(1, 1, 0).normalized())});
  Mat g(3, 3);
  g << 1.3, 0.2, -0.1, 0.2, 0.8, 0.3, -0.1, 0.3, 2.1;
  auto gt = symmetrize(InvariantMetric(sp, g), t);
  EXPECT_LE(torus_invariance_defect(*sp, t, gt.G()), 1e-10);
  EXPECT_NEAR(gt.G().trace(), g.trace(), 1e-12);
}

TEST(AveragingDefect, Examples) {
  auto sp = su2_space();
  auto t = verify_torus(*sp, {Vec::Unit(3, 0)});
  auto d0 = averaging_defect(InvariantMetric(sp, diag({1, 2, 2})), t);
  EXPECT_LE(d0.delta0, 1e-13);
  EXPECT_LE(d0.pull_defect, 1e-14);
  auto d = averaging_defect(InvariantMetric(sp, diag({1, 2, 4})), t);
  EXPECT_NEAR(d.delta0, 1.0 / 3, 1e-12);
  // quarter turn swaps the (e2, e3) entries: |diag(0, -2, 2)| against diag(1, 3, 3)
  EXPECT_NEAR(d.pull_defect, 2.0 / 3, 1e-12);
  for (double n : {4.0, 16.0, 64.0}) {
    auto dn = averaging_defect(InvariantMetric(sp, diag({1 / n, 2 + 1 / n, 2 - 1 / n})), t);
    EXPECT_NEAR(dn.delta0, 0.5 / n, 1e-12);
  }
}

TEST(Limit, ProductExact) {
  auto seq = blowdown_metrics(product_traj(), {1e2, 1e3, 1e4});
  auto det = detect_collapsing_torus(seq);
  auto rec = limit_triple(seq, det, no_epsilon());
  EXPECT_EQ(rec.s, 1);
  EXPECT_EQ(rec.status, "converged");
  EXPECT_LE((rec.g_check_infty - diag({2, 2})).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(rec.einstein_lambda, 0.5, 1e-8);
  EXPECT_LE(rec.einstein_residual, 1e-10);
  EXPECT_TRUE(rec.passes());
  for (double a2 : rec.A_norm_sq_seq) EXPECT_EQ(a2, 0.0);
}

TEST(Limit, RoundEinstein) {
  auto seq = blowdown_metrics(round_traj(), {1e2, 1e3, 1e4});
  auto rec = limit_triple(seq, detect_collapsing_torus(seq), no_epsilon());
  EXPECT_EQ(rec.s, 0);
  EXPECT_LE((rec.g_check_infty - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(rec.einstein_lambda, 0.5, 1e-8);
  EXPECT_LE(rec.einstein_residual, 1e-10);
  EXPECT_NEAR(rec.scal_base, 1.5, 1e-8);
}

TEST(Limit, BergerTriple) {
  auto seq = blowdown_metrics(berger_traj(), {1e2, 1e3, 1e4});
  auto det = detect_collapsing_torus(seq, su2_detection());
  auto rec = limit_triple(seq, det, no_epsilon());
  EXPECT_EQ(rec.status, "converged");
  EXPECT_TRUE(rec.passes());
  EXPECT_LE((rec.g_check_infty - 2.0 * Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.04);
  EXPECT_NEAR(rec.einstein_lambda, 0.5, 0.01);
  EXPECT_GT(rec.scal_base, 0.0);
  EXPECT_LE(rec.einstein_residual, 1e-10);  // the base is a round S^2 at every scale
  EXPECT_LE(max_principal_angle(rec.b_infty, Mat(Mat::Identity(3, 3).rightCols(2))), 1e-10);
  // O'Neill: |A|^2 = a/(2 b^2) on the rescaled metrics, decaying like 1/tau
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Mat& g = seq.metrics[i].G();
    EXPECT_NEAR(rec.A_norm_sq_seq[i], oracle::berger_A_norm_sq(g(0, 0), g(1, 1)), 1e-14);
    EXPECT_LE(rec.dA_norm_seq[i], rec.C_bound * rec.A_norm_sq_seq[i]);
  }
  // g_hat decay exponent agrees with the detected eigenvalue rate
  EXPECT_NEAR(rec.g_hat_rates[0], det.rates[0], 0.1 * std::abs(det.rates[0]));
}

TEST(Limit, RefusesNonCauchyTail) {
  auto sp = su2_space();
  BlowdownSequence seq;
  seq.taus = {1, 10, 100};
  seq.metrics = {InvariantMetric(sp, diag({1, 1, 1})), InvariantMetric(sp, diag({0.03, 1.5, 1.5})),
                 InvariantMetric(sp, diag({0.001, 2.5, 2.5}))};
  auto det = detect_collapsing_torus(seq, su2_detection());
  ASSERT_EQ(det.s, 1);
  auto rec = limit_triple(seq, det, no_epsilon());
  EXPECT_EQ(rec.status, "inconclusive");
  EXPECT_FALSE(rec.passes());
}

TEST(Limit, EpsilonMeasured) {
  auto seq = blowdown_metrics(product_traj(), {1e2, 1e3, 1e4});
  LimitOptions o;
  o.submersion.samples = 2;
  auto rec = limit_triple(seq, detect_collapsing_torus(seq), o);
  ASSERT_EQ(rec.epsilon_seq.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    // fiber probe: the S^1 factor has length-per-angle 1/sqrt(tau)
    EXPECT_NEAR(rec.gh_seq[i], kPi / std::sqrt(seq.taus[i]), 1e-6);
    EXPECT_TRUE(rec.epsilon_valid[i]);
  }
}
