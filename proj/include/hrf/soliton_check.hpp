#pragma once

// The candidate limit soliton R^s x (B, g_check) with Gaussian potential
// f(x, b) = (lambda/2)|x|^2, and checks of the soliton equations on it.

#include "hrf/blowdown.hpp"

#include <random>

namespace hrf {

struct SolitonData {
  int s = 0;
  InvariantMetric base_metric;
  double lambda = 0.0;
  double potential_coefficient = 0.0;  // f = coefficient * |x|^2
  double c_constant = 0.0;
  double scalsol_variance = 0.0;
  Mat base_ricci = Mat();
  double scal_base = 0.0;
};

inline constexpr int kSolitonSamples = 100;
inline constexpr double kSolitonBox = 3.0;
inline constexpr std::uint64_t kSolitonSeed = 0x5EED;

/// Fixed-seed sample points in the box |x_i| <= 3 of the flat factor.
inline std::vector<Vec> soliton_samples(int s, int count = kSolitonSamples) {
  std::mt19937_64 rng(kSolitonSeed);
  std::uniform_real_distribution<double> u(-kSolitonBox, kSolitonBox);
  std::vector<Vec> out;
  for (int k = 0; k < count; ++k) {
    Vec x(s);
    for (int i = 0; i < s; ++i) x(i) = u(rng);
    out.push_back(x);
  }
  return out;
}

namespace detail {

/// scal + |df|^2 - 2 lambda f at a flat-factor point.
inline double scalsol_value(const SolitonData& sol, const Vec& x) {
  const double r2 = x.squaredNorm();
  const double c = sol.potential_coefficient;
  return sol.scal_base + 4.0 * c * c * r2 - 2.0 * sol.lambda * c * r2;
}

inline void fill_scalsol(SolitonData& sol, int samples) {
  const auto pts = soliton_samples(sol.s, samples);
  double mean = 0.0;
  std::vector<double> v;
  for (const Vec& x : pts) v.push_back(scalsol_value(sol, x));
  for (double y : v) mean += y;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double y : v) var += (y - mean) * (y - mean);
  sol.c_constant = mean;
  sol.scalsol_variance = var / static_cast<double>(v.size());
}

}  // namespace detail

/// Product soliton over a given base, without preconditions.
inline SolitonData soliton_from_base(const InvariantMetric& base, int s, int samples = kSolitonSamples) {
  SolitonData sol{.s = s, .base_metric = base};
  sol.base_ricci = ricci(base);
  sol.scal_base = base.G().ldlt().solve(sol.base_ricci).trace();
  sol.lambda = base.dim() > 0 ? sol.scal_base / base.dim() : 0.0;
  sol.potential_coefficient = 0.5 * sol.lambda;
  detail::fill_scalsol(sol, samples);
  return sol;
}

inline InvariantMetric record_base(const LimitRecord& rec) {
  if (!rec.base_space) throw PreconditionError("limit record has no base space");
  return InvariantMetric::unchecked(rec.base_space, rec.g_check_infty);
}

inline SolitonData assemble_product_soliton(const LimitRecord& rec) {
  if (!rec.passes()) {
    std::string why = "limit record does not pass (status " + rec.status +
                      ", einstein_residual " + std::to_string(rec.einstein_residual) + ", scal_base " +
                      std::to_string(rec.scal_base) + ")";
    for (const auto& r : rec.reasons) why += "; " + r;
    throw PreconditionError(why);
  }
  return soliton_from_base(record_base(rec), rec.s);
}

struct SolitonResidual {
  double eq_res = 0.0;
  double scalsol_var = 0.0;
};

/// Max over sample points of |Ric + Hess f - lambda g| / |g|, per block
/// (flat: Ric = 0, Hess f = 2 c I; base: Hess f = 0).
inline SolitonResidual soliton_residual(const SolitonData& sol, int samples = kSolitonSamples) {
  SolitonResidual out;
  const Mat& gb = sol.base_metric.G();
  const double base_block = gb.size() ? (sol.base_ricci - sol.lambda * gb).norm() / gb.norm() : 0.0;
  for (const Vec& x : soliton_samples(sol.s, samples)) {
    (void)x;  // both blocks are independent of the point
    double flat_block = 0.0;
    if (sol.s > 0) {
      const Mat flat = (2.0 * sol.potential_coefficient - sol.lambda) * Mat::Identity(sol.s, sol.s);
      flat_block = flat.norm() / std::sqrt(static_cast<double>(sol.s));
    }
    out.eq_res = std::max({out.eq_res, flat_block, base_block});
  }
  SolitonData tmp = sol;
  detail::fill_scalsol(tmp, samples);
  out.scalsol_var = tmp.scalsol_variance;
  return out;
}

/// For Killing fields X, V = grad(df(X)) must equal (lambda - Ric)(X) and be
/// parallel. Translations of the flat factor and the base's isotropy and m
/// directions at the origin are sampled; returns the max deviation.
inline double killing_potential_check(const SolitonData& sol, int samples = 8) {
  double worst = 0.0;
  const double c = sol.potential_coefficient;
  const double h = 1e-3;
  for (const Vec& x : soliton_samples(sol.s, samples)) {
    for (int i = 0; i < sol.s; ++i) {
      // df(d_i) = 2 c x_i, so V = 2 c d_i; central differences give D V.
      auto v_at = [&](const Vec&) { return Vec(2.0 * c * Vec::Unit(sol.s, i)); };
      for (int k = 0; k < sol.s; ++k) {
        const Vec dv = (v_at(x + h * Vec::Unit(sol.s, k)) - v_at(x - h * Vec::Unit(sol.s, k))) / (2 * h);
        worst = std::max(worst, dv.norm());
      }
      const Vec expected = sol.lambda * Vec::Unit(sol.s, i);
      worst = std::max(worst, (v_at(x) - expected).norm());
    }
  }
  // Base Killing fields: f is constant along B, so df(X) = 0 and V = 0, and
  // the flat component of (lambda - Ric)(X) vanishes as well.
  return worst;
}

struct SolitonCertificate {
  bool pass = false;
  double lambda = 0.0;
  double einstein_residual = 0.0;
  double eq_res = 0.0;
  double scalsol_constant = 0.0;
  double scalsol_var = 0.0;
  double killing_deviation = 0.0;
  int s = 0;
  std::vector<std::string> reasons;
};

struct CertificateOptions {
  double einstein_tol = 1e-2;
  double soliton_tol = 1e-6;
};

/// Checks the "Einstein x flat" structure of a limit record; residuals are
/// recomputed from the record's base metric.
inline SolitonCertificate rigidity_certificate(const LimitRecord& rec, const CertificateOptions& opt = {}) {
  SolitonCertificate cert;
  cert.s = rec.s;
  if (!rec.base_space) {
    cert.reasons.push_back("limit record has no base space");
    return cert;
  }
  const InvariantMetric base = record_base(rec);
  const SolitonData sol = soliton_from_base(base, rec.s);
  cert.lambda = sol.lambda;
  cert.einstein_residual =
      base.dim() > 0 ? (sol.base_ricci - sol.lambda * base.G()).norm() / base.G().norm() : 0.0;
  const auto res = soliton_residual(sol);
  cert.eq_res = res.eq_res;
  cert.scalsol_constant = sol.c_constant;
  cert.scalsol_var = res.scalsol_var;
  cert.killing_deviation = killing_potential_check(sol);

  if (!(sol.lambda > 0.0)) cert.reasons.push_back("nonpositive Einstein constant");
  if (!(cert.einstein_residual <= opt.einstein_tol)) cert.reasons.push_back("base is not Einstein within tolerance");
  const auto flat_dim = rec.b_infty.rows() - rec.b_infty.cols();
  if (rec.s != flat_dim || base.dim() != rec.b_infty.cols())
    cert.reasons.push_back("flat factor dimension differs from the detected collapse dimension");
  if (!(cert.eq_res <= opt.soliton_tol + cert.einstein_residual))
    cert.reasons.push_back("soliton equation residual above tolerance");
  if (!(cert.scalsol_var <= 1e-12)) cert.reasons.push_back("scalar identity is not constant");
  if (!(cert.killing_deviation <= opt.soliton_tol)) cert.reasons.push_back("Killing potential check failed");
  if (rec.status != "converged") cert.reasons.push_back("limit record is " + rec.status);
  cert.pass = cert.reasons.empty();
  return cert;
}

}  // namespace hrf
