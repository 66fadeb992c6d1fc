#pragma once

// Blow-down sequences g_n(t) = g(tau_n t) / tau_n of an ancient solution, the
// collapsing torus, averaging over it, and the limit triple.

#include "hrf/flow_engine.hpp"
#include "hrf/geometric_model.hpp"

#include <algorithm>
#include <string>

namespace hrf {

struct BlowdownSequence {
  std::vector<double> taus;
  double t_eval = -1.0;
  std::vector<InvariantMetric> metrics;
  const FlowTrajectory* source = nullptr;

  SpacePtr space() const { return metrics.empty() ? SpacePtr() : metrics.front().space_ptr(); }
  std::size_t size() const { return metrics.size(); }
};

inline BlowdownSequence blowdown_metrics(const FlowTrajectory& traj, const std::vector<double>& taus,
                                         double t_eval = -1.0) {
  if (!(t_eval < 0.0)) throw DomainError("t_eval must be negative");
  if (taus.empty()) throw ConfigError("taus must not be empty");
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] > 0.0)) throw ConfigError("taus must be positive");
    if (i > 0 && !(taus[i] > taus[i - 1])) throw ConfigError("taus must be increasing");
  }
  const double lo = taus.back() * t_eval;
  if (!traj.covers(lo) || !traj.covers(t_eval))
    throw DomainError("trajectory covers [" + std::to_string(traj.t_min()) + ", " + std::to_string(traj.t_max()) +
                      "] but blow-downs need [" + std::to_string(lo) + ", " + std::to_string(t_eval) + "]");
  BlowdownSequence seq;
  seq.taus = taus;
  seq.t_eval = t_eval;
  seq.source = &traj;
  for (double tau : taus) {
    Mat g = traj.metric_at(tau * t_eval) / tau;
    if (min_eigenvalue(g) <= 0.0) throw NumericError("blow-down metric is not positive definite");
    seq.metrics.push_back(InvariantMetric::unchecked(traj.space, g));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Collapse detection
// ---------------------------------------------------------------------------

struct DetectionOptions {
  double relative_eigenvalue = 1e-3;
  double max_exponent = -0.5;
  double max_drift = 1e-3;  // radians
  /// Ratio of the group period of exp(theta V) to its adjoint period (2 when
  /// the group is SU(2) rather than SO(3), for instance).
  double period_factor = 1.0;
};

struct CollapseDetection {
  std::vector<Vec> t_basis;           // algebra coordinates
  std::vector<double> eigen_decay;    // smallest eigenvalue on m0 per n
  std::vector<std::vector<double>> eigenvalues;  // all m0 eigenvalues per n, ascending
  std::vector<double> rates;          // fitted exponent per eigenvalue index
  int s = 0;
  double drift = 0.0;
  TorusCertificate torus;
  DetectionOptions options;
};

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = x.size();
  if (n < 2) return 0.0;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxx > 0 ? sxy / sxx : 0.0;
}

inline CollapseDetection detect_collapsing_torus(const BlowdownSequence& seq, const DetectionOptions& opt = {}) {
  if (seq.size() < 3) throw PreconditionError("collapse detection needs at least three blow-downs");
  if (seq.taus.back() / seq.taus.front() < 100.0 * (1.0 - 1e-12))
    throw PreconditionError("blow-down scales must span at least two decades");
  const auto& sp = *seq.space();
  const Mat& m0 = sp.m0();
  const auto k = m0.cols();
  CollapseDetection det;
  det.options = opt;
  if (k == 0) {
    det.torus = verify_torus(sp, {});
    return det;
  }
  std::vector<Eigen::SelfAdjointEigenSolver<Mat>> eig;
  for (const auto& g : seq.metrics) {
    eig.emplace_back(symmetrized(m0.transpose() * g.G() * m0));
    const Vec& ev = eig.back().eigenvalues();
    det.eigenvalues.emplace_back(ev.data(), ev.data() + ev.size());
    det.eigen_decay.push_back(ev(0));
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    std::vector<double> y;
    for (const auto& e : det.eigenvalues) y.push_back(std::max(e[static_cast<std::size_t>(i)], 1e-300));
    det.rates.push_back(loglog_slope(seq.taus, y));
  }
  // Reference scale: median eigenvalue of the full metric on m.
  Vec all = Eigen::SelfAdjointEigenSolver<Mat>(seq.metrics.back().G()).eigenvalues();
  std::vector<double> sorted(all.data(), all.data() + all.size());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t nm = sorted.size();
  const double median = nm % 2 ? sorted[nm / 2] : 0.5 * (sorted[nm / 2 - 1] + sorted[nm / 2]);

  std::vector<Eigen::Index> collapsing;
  const auto& last = det.eigenvalues.back();
  for (Eigen::Index i = 0; i < k; ++i)
    if (last[static_cast<std::size_t>(i)] < opt.relative_eigenvalue * median &&
        det.rates[static_cast<std::size_t>(i)] <= opt.max_exponent)
      collapsing.push_back(i);
  if (collapsing.empty()) {
    det.torus = verify_torus(sp, {});
    return det;
  }
  const auto c = static_cast<Eigen::Index>(collapsing.size());
  auto span_at = [&](std::size_t n) {
    Mat out(k, c);
    for (Eigen::Index j = 0; j < c; ++j) out.col(j) = eig[n].eigenvectors().col(collapsing[static_cast<std::size_t>(j)]);
    return out;
  };
  const Mat tail = span_at(seq.size() - 1);
  det.drift = max_principal_angle(span_at(seq.size() - 2), tail);
  if (det.drift >= opt.max_drift)
    throw NumericError("collapsing directions did not stabilize (drift " + std::to_string(det.drift) + " rad)");

  // Greedy pruning to an abelian family, most collapsed direction first.
  const auto& alg = sp.algebra();
  std::vector<Vec> chosen;
  for (Eigen::Index j = 0; j < c; ++j) {
    Vec v = sp.m() * (m0 * tail.col(j));
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0) v = -v;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (std::abs(v(i)) < 1e-14) v(i) = 0.0;
    bool commutes = true;
    for (const Vec& w : chosen) commutes = commutes && alg.q_norm(alg.bracket(v, w)) <= kTorusTol;
    if (commutes) chosen.push_back(v);
  }
  std::vector<double> periods;
  for (const Vec& v : chosen) {
    const auto info = adjoint_period(alg.ad_of(v), alg.Q());
    if (info.trivial_action)
      periods.push_back(2.0 * kPi);
    else if (info.period)
      periods.push_back(opt.period_factor * *info.period);
    else
      periods.push_back(2.0 * kPi);
  }
  det.torus = verify_torus(sp, chosen, periods);
  if (!det.torus.passes())
    throw NumericError("detected collapsing directions are not an abelian subalgebra of m0");
  det.t_basis = chosen;
  det.s = static_cast<int>(chosen.size());
  return det;
}

// ---------------------------------------------------------------------------
// Averaging over the torus
// ---------------------------------------------------------------------------

namespace detail {

/// Quadrature nodes Ad(exp(sum theta_i V_i)) on m for the product trapezoid
/// rule with n nodes per angle.
inline std::vector<Mat> torus_nodes(const HomogeneousSpaceData& sp, const TorusCertificate& torus, int n) {
  const auto s = torus.t_basis.size();
  std::vector<Mat> gens, steps;
  for (std::size_t i = 0; i < s; ++i) {
    const double period = torus.averaging_period(i);
    Mat step = (sp.ad_on_m(torus.t_basis[i]) * (period / n)).exp();
    steps.push_back(step);
  }
  std::vector<Mat> nodes{Mat::Identity(sp.dim_m(), sp.dim_m())};
  for (std::size_t i = 0; i < s; ++i) {
    std::vector<Mat> next;
    next.reserve(nodes.size() * static_cast<std::size_t>(n));
    Mat power = Mat::Identity(sp.dim_m(), sp.dim_m());
    for (int j = 0; j < n; ++j) {
      for (const Mat& a : nodes) next.push_back(power * a);
      power = steps[i] * power;
    }
    nodes = std::move(next);
  }
  return nodes;
}

inline Mat average_over(const std::vector<Mat>& nodes, const Mat& g) {
  Mat acc = Mat::Zero(g.rows(), g.cols());
  for (const Mat& a : nodes) acc += a.transpose() * g * a;
  return symmetrized(acc / static_cast<double>(nodes.size()));
}

inline void require_periods(const TorusCertificate& torus) {
  if (!torus.passes()) throw PreconditionError("torus certificate does not pass");
  if (!torus.has_periods())
    throw PreconditionError("a torus generator has a non-closing adjoint one-parameter group; "
                            "supply a basis of the torus closure");
}

}  // namespace detail

inline constexpr int kAveragingNodes = 64;

inline InvariantMetric symmetrize(const InvariantMetric& g, const TorusCertificate& torus) {
  detail::require_periods(torus);
  if (torus.t_basis.empty()) return g;
  const auto& sp = g.space();
  int n = kAveragingNodes;
  Mat avg = detail::average_over(detail::torus_nodes(sp, torus, n), g.G());
  // Doubling check against under-resolution.
  for (int round = 0; round < 4; ++round) {
    const Mat fine = detail::average_over(detail::torus_nodes(sp, torus, 2 * n), g.G());
    const double change = (fine - avg).cwiseAbs().maxCoeff() / std::max(1e-300, avg.cwiseAbs().maxCoeff());
    avg = fine;
    n *= 2;
    if (change <= 1e-12) return InvariantMetric(g.space_ptr(), avg);
    if (torus.t_basis.size() > 1 && n > 256) break;
  }
  throw NumericError("torus average did not resolve under node doubling");
}

struct AveragingDefect {
  double delta0 = 0.0;       // |g - g_T| in the g_T operator norm
  double pull_defect = 0.0;  // max over quadrature nodes f of |g - f*g|, same norm
};

inline AveragingDefect averaging_defect(const InvariantMetric& g, const TorusCertificate& torus) {
  detail::require_periods(torus);
  AveragingDefect out;
  if (torus.t_basis.empty()) return out;
  const InvariantMetric gt = symmetrize(g, torus);
  const Mat w = inverse_sqrt_spd(gt.G());
  auto op_norm = [&](const Mat& e) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(w * e * w));
    return es.eigenvalues().cwiseAbs().maxCoeff();
  };
  out.delta0 = op_norm(g.G() - gt.G());
  for (const Mat& a : detail::torus_nodes(g.space(), torus, kAveragingNodes))
    out.pull_defect = std::max(out.pull_defect, op_norm(g.G() - a.transpose() * g.G() * a));
  return out;
}

// ---------------------------------------------------------------------------
// Limit triple
// ---------------------------------------------------------------------------

struct LimitOptions {
  double b_angle_tol = 1e-4;
  double cauchy_tol = 1e-2;
  bool measure_epsilon = true;
  SubmersionOptions submersion;
};

struct LimitRecord {
  int s = 0;
  Mat b_infty;        // m coordinates, columns
  Mat g_check_infty;  // on the quotient's m basis
  SpacePtr base_space;
  std::vector<double> g_hat_decay;  // largest eigenvalue of g_hat per n
  std::vector<double> g_hat_rates;  // fitted exponent per g_hat eigenvalue index
  std::vector<double> epsilon_seq;
  std::vector<double> gh_seq;
  std::vector<bool> epsilon_valid;
  std::vector<double> A_norm_sq_seq;
  std::vector<double> dA_norm_seq;
  double C_bound = 0.0;
  std::vector<double> delta0_seq;
  std::vector<double> b_angle_seq;   // angle between consecutive b^(n)
  std::vector<double> g_check_change_seq;  // relative change between consecutive g_check^(n)
  double reconstruction_defect = 0.0;
  double reductivity_defect = 0.0;
  double einstein_lambda = 0.0;
  double einstein_residual = 0.0;
  double scal_base = 0.0;
  std::string status = "inconclusive";
  std::vector<std::string> reasons;

  bool passes(double residual_tol = 1e-2) const {
    return status == "converged" && einstein_residual <= residual_tol && scal_base > 0.0;
  }
};

inline LimitRecord limit_triple(const BlowdownSequence& seq, const CollapseDetection& det,
                                const LimitOptions& opt = {}) {
  if (seq.size() == 0) throw PreconditionError("empty blow-down sequence");
  LimitRecord rec;
  rec.s = det.s;
  const auto& sp = *seq.space();
  const int m = sp.dim_m();
  const auto n = seq.size();

  std::vector<Mat> b_seq, gc_seq, gh_seq;
  for (std::size_t i = 0; i < n; ++i) {
    const InvariantMetric& g = seq.metrics[i];
    if (det.s == 0) {
      b_seq.push_back(Mat::Identity(m, m));
      gc_seq.push_back(g.G());
      rec.epsilon_seq.push_back(0.0);
      rec.gh_seq.push_back(0.0);
      rec.epsilon_valid.push_back(true);
      rec.A_norm_sq_seq.push_back(0.0);
      rec.dA_norm_seq.push_back(0.0);
      rec.delta0_seq.push_back(0.0);
      continue;
    }
    rec.delta0_seq.push_back(averaging_defect(g, det.torus).delta0);
    const InvariantMetric gt = symmetrize(g, det.torus);
    const auto tr = metric_triple(gt, det.torus);
    rec.reconstruction_defect = std::max(rec.reconstruction_defect, tr.reconstruction_defect);
    rec.reductivity_defect = tr.bracket_invariance_defect;
    Eigen::HouseholderQR<Mat> qr(tr.b_basis);
    b_seq.push_back(qr.householderQ() * Mat::Identity(m, tr.b_basis.cols()));
    gc_seq.push_back(tr.g_check);
    gh_seq.push_back(tr.g_hat);
    rec.g_hat_decay.push_back(max_eigenvalue(tr.g_hat));
    const auto on = oneill_data(gt, det.torus);
    rec.A_norm_sq_seq.push_back(on.A_norm_sq);
    rec.dA_norm_seq.push_back(on.dA_norm);
    rec.C_bound = on.C_bound;
    if (opt.measure_epsilon) {
      const auto sd = submersion_defects(gt, det.torus, opt.submersion);
      rec.epsilon_seq.push_back(sd.epsilon());
      rec.gh_seq.push_back(sd.gh_eps);
      rec.epsilon_valid.push_back(sd.gh_valid);
    }
    if (i + 1 == n) rec.base_space = tr.base_space;
  }
  if (det.s > 0 && n >= 2) {
    const auto s = gh_seq.front().rows();
    for (Eigen::Index k = 0; k < s; ++k) {
      std::vector<double> y;
      for (const Mat& gh : gh_seq) y.push_back(Eigen::SelfAdjointEigenSolver<Mat>(gh).eigenvalues()(k));
      rec.g_hat_rates.push_back(loglog_slope(seq.taus, y));
    }
  }
  if (det.s == 0) rec.base_space = seq.space();
  for (std::size_t i = 1; i < n; ++i) {
    rec.b_angle_seq.push_back(max_principal_angle(b_seq[i - 1], b_seq[i]));
    rec.g_check_change_seq.push_back((gc_seq[i] - gc_seq[i - 1]).norm() / gc_seq[i].norm());
  }
  rec.b_infty = b_seq.back();
  rec.g_check_infty = gc_seq.back();

  bool ok = true;
  if (!rec.b_angle_seq.empty() && rec.b_angle_seq.back() >= opt.b_angle_tol) {
    ok = false;
    rec.reasons.push_back("horizontal space has not stabilized");
  }
  if (!rec.g_check_change_seq.empty() && rec.g_check_change_seq.back() > opt.cauchy_tol) {
    ok = false;
    rec.reasons.push_back("base metric tail is not Cauchy");
  }
  if (det.s > 0 && rec.reductivity_defect > 1e-8) {
    ok = false;
    rec.reasons.push_back("limit horizontal space is not reductive for h + t");
  }
  for (bool v : rec.epsilon_valid)
    if (!v) {
      rec.reasons.push_back("some distance samples were dropped");
      break;
    }

  const InvariantMetric base(rec.base_space, rec.g_check_infty);
  const Mat ric = ricci(base);
  rec.scal_base = (base.G().ldlt().solve(ric)).trace();
  const int dim_base = m - det.s;
  rec.einstein_lambda = dim_base > 0 ? rec.scal_base / dim_base : 0.0;
  rec.einstein_residual = dim_base > 0 ? (ric - rec.einstein_lambda * base.G()).norm() / base.G().norm() : 0.0;
  if (rec.scal_base <= 0.0) rec.reasons.push_back("base scalar curvature is not positive");
  rec.status = ok ? "converged" : "inconclusive";
  return rec;
}

}  // namespace hrf
