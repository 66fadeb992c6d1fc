#include <gtest/gtest.h>

#include "hrf/soliton_check.hpp"

using namespace hrf;

namespace {

SpacePtr su2_space() { return reductive_split(algebras::su2(), {}, 2.0 * kPi); }
SpacePtr s2xs1_space() { return reductive_split(algebras::su2_u1(), {Vec::Unit(4, 0)}, 2.0 * kPi); }
SpacePtr t3_space() { return reductive_split(algebras::abelian(3), {}, std::sqrt(3.0) * kPi); }

Mat diag(std::initializer_list<double> v) {
  Vec d(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) d(i++) = x;
  return d.asDiagonal();
}

// Limit record of a Berger-type collapse with base b * I on the S^2 quotient.
LimitRecord berger_record(double b) {
  auto sp = su2_space();
  auto torus = verify_torus(*sp, {Vec::Unit(3, 0)}, {4.0 * kPi});
  BlowdownSequence seq;
  seq.taus = {1e2, 1e3, 1e4};
  for (double tau : seq.taus) seq.metrics.push_back(InvariantMetric(sp, diag({2.8 / tau, b, b})));
  DetectionOptions o;
  o.period_factor = 2.0;
  LimitOptions lo;
  lo.measure_epsilon = false;
  return limit_triple(seq, detect_collapsing_torus(seq, o), lo);
}

LimitRecord constant_record(SpacePtr sp, const Mat& g) {
  BlowdownSequence seq;
  seq.taus = {1e2, 1e3, 1e4};
  for (int i = 0; i < 3; ++i) seq.metrics.push_back(InvariantMetric(sp, g));
  LimitOptions lo;
  lo.measure_epsilon = false;
  return limit_triple(seq, detect_collapsing_torus(seq), lo);
}

}  // namespace

TEST(Soliton, BergerAssembly) {
  auto rec = berger_record(2.0);
  ASSERT_TRUE(rec.passes());
  auto sol = assemble_product_soliton(rec);
  EXPECT_EQ(sol.s, 1);
  // scal(2 delta) on the unit-curvature S^2 quotient is 1
  EXPECT_NEAR(sol.scal_base, 1.0, 1e-13);
  EXPECT_NEAR(sol.lambda, 0.5, 1e-13);
  EXPECT_NEAR(sol.potential_coefficient, 0.25, 1e-13);
  EXPECT_NEAR(sol.c_constant, 1.0, 1e-12);
  EXPECT_LE(sol.scalsol_variance, 1e-12);
  auto res = soliton_residual(sol);
  EXPECT_LE(res.eq_res, 1e-12);
  EXPECT_LE(res.scalsol_var, 1e-12);
  EXPECT_EQ(killing_potential_check(sol), 0.0);
}

TEST(Soliton, RoundEinsteinCase) {
  auto rec = constant_record(su2_space(), Mat::Identity(3, 3));
  auto sol = assemble_product_soliton(rec);
  EXPECT_EQ(sol.s, 0);
  EXPECT_NEAR(sol.lambda, 0.5, 1e-13);
  EXPECT_NEAR(sol.c_constant, 1.5, 1e-13);
  EXPECT_EQ(sol.scalsol_variance, 0.0);
  auto res = soliton_residual(sol);
  EXPECT_NEAR(res.eq_res, rec.einstein_residual, 1e-15);
}

TEST(Soliton, FlatRecordRefused) {
  auto rec = constant_record(t3_space(), Mat::Identity(3, 3));
  EXPECT_EQ(rec.scal_base, 0.0);
  EXPECT_THROW(assemble_product_soliton(rec), PreconditionError);
  auto cert = rigidity_certificate(rec);
  EXPECT_FALSE(cert.pass);
  ASSERT_FALSE(cert.reasons.empty());
  EXPECT_EQ(cert.reasons.front(), "nonpositive Einstein constant");
}

TEST(Soliton, CorruptedPotential) {
  auto sol = assemble_product_soliton(berger_record(2.0));
  sol.potential_coefficient = 0.5 * sol.lambda + 0.1;
  EXPECT_NEAR(killing_potential_check(sol), 0.2, 1e-12);
  EXPECT_NEAR(soliton_residual(sol).eq_res, 0.2, 1e-12);
  // the x-dependent terms no longer cancel
  EXPECT_GT(soliton_residual(sol).scalsol_var, 1e-3);
}

TEST(Soliton, CorruptedBaseFails) {
  auto rec = berger_record(2.0);
  rec.g_check_infty = diag({2.0, 2.2});
  auto sol = soliton_from_base(record_base(rec), rec.s);
  EXPECT_GT(soliton_residual(sol).eq_res, 1e-2);
  auto cert = rigidity_certificate(rec);
  EXPECT_FALSE(cert.pass);
  EXPECT_GT(cert.einstein_residual, 1e-2);
}

TEST(Certificate, ProductPassesWithZeros) {
  auto rec = constant_record(s2xs1_space(), diag({2, 2, 1}));
  // constant sequence: nothing collapses, the whole space is the base
  EXPECT_EQ(rec.s, 0);

  auto sp = s2xs1_space();
  BlowdownSequence seq;
  seq.taus = {1e2, 1e3, 1e4};
  for (double tau : seq.taus) seq.metrics.push_back(InvariantMetric(sp, diag({2, 2, 1 / tau})));
  LimitOptions lo;
  lo.measure_epsilon = false;
  auto prod = limit_triple(seq, detect_collapsing_torus(seq), lo);
  auto cert = rigidity_certificate(prod);
  EXPECT_TRUE(cert.pass);
  EXPECT_EQ(cert.s, 1);
  EXPECT_NEAR(cert.lambda, 0.5, 1e-14);
  EXPECT_LE(cert.einstein_residual, 1e-15);
  EXPECT_LE(cert.eq_res, 1e-15);
  EXPECT_NEAR(cert.scalsol_constant, 1.0, 1e-14);
}

TEST(Certificate, BergerPassesAndRefinementIsMonotone) {
  double prev = std::numeric_limits<double>::infinity();
  for (double b : {1.9, 1.99, 1.999}) {
    auto cert = rigidity_certificate(berger_record(b));
    EXPECT_TRUE(cert.pass);
    EXPECT_NEAR(cert.lambda, 1.0 / b, 1e-12);
    EXPECT_LE(cert.eq_res, prev * 1.05);
    prev = cert.eq_res;
  }
}

TEST(Certificate, NonpositiveLambda) {
  // a very squashed Berger base: g = diag(10, 1, 1) on su(2) has negative scalar curvature
  auto rec = constant_record(su2_space(), diag({10, 1, 1}));
  auto cert = rigidity_certificate(rec);
  EXPECT_FALSE(cert.pass);
  EXPECT_LT(cert.lambda, 0.0);
  EXPECT_EQ(cert.reasons.front(), "nonpositive Einstein constant");
}
