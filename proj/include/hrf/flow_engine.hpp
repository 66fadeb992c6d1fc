#pragma once

// Homogeneous Ricci flow dg/dt = -2 Ric(g) as an ODE on invariant metrics,
// with the monitors used to study ancient solutions.

#include "hrf/invariant_geometry.hpp"
#include "hrf/ode.hpp"

#include <limits>
#include <string>

namespace hrf {

/// Upper triangle of a symmetric matrix, row-major.
inline Vec pack_symmetric(const Mat& g) {
  const auto m = g.rows();
  Vec v(m * (m + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i; j < m; ++j) v(k++) = g(i, j);
  return v;
}

inline Mat unpack_symmetric(const Vec& v, Eigen::Index m) {
  Mat g(m, m);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i; j < m; ++j) g(i, j) = g(j, i) = v(k++);
  return g;
}

/// Right-hand side -2 Ric(g) of the flow, as a matrix on the m basis.
inline Mat ricci_rhs(const InvariantMetric& g) { return -2.0 * ricci(g); }

struct FlowControls {
  double rtol = 1e-10;
  double atol = 1e-12;
  double max_step = std::numeric_limits<double>::infinity();
  double kappa_max = 1e8;     // singularity threshold on |Rm|
  double degeneracy = 1e-10;  // min eigenvalue floor
  std::vector<double> sample_times;  // empty: every accepted step
};

enum class FlowStatus { completed, hit_singularity, step_failure };

inline const char* to_string(FlowStatus s) {
  switch (s) {
    case FlowStatus::completed: return "completed";
    case FlowStatus::hit_singularity: return "hit_singularity";
    case FlowStatus::step_failure: return "step_failure";
  }
  return "unknown";
}

struct MonitorRecord {
  double scal = 0.0;
  double Rm_norm = 0.0;
  double F = 0.0;
  double vol_rel = 0.0;
  double typeI_ratio = 0.0;
  double diam_over_sqrt_t = 0.0;
  double min_eig = 0.0;
};

inline MonitorRecord monitor_record(const InvariantMetric& g, double t) {
  MonitorRecord r;
  const auto pkg = curvature_package(g, false);
  r.scal = pkg.scal;
  r.Rm_norm = pkg.rm_norm;
  r.vol_rel = std::sqrt(g.G().determinant());
  r.F = std::pow(r.vol_rel, 2.0 / g.dim()) * r.scal;
  r.typeI_ratio = r.Rm_norm * std::abs(t);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.diam_over_sqrt_t = (t != 0.0 && g.space().diam_Q()) ? diameter_bound(g) / std::sqrt(std::abs(t)) : nan;
  r.min_eig = g.min_eig();
  return r;
}

struct FlowTrajectory {
  SpacePtr space;
  std::vector<double> times;  // increasing
  std::vector<Mat> metrics;
  std::vector<MonitorRecord> monitors;
  FlowStatus status = FlowStatus::completed;
  std::optional<double> t_star;
  double t_start = 0.0;
  double t_end = 0.0;  // where integration actually stopped
  long accepted_steps = 0;
  long rejected_steps = 0;
  double max_invariance_defect = 0.0;
  bool scal_positivity_violated = false;
  OdeResult dense;

  int dim() const { return space ? space->dim_m() : 0; }
  double t_min() const { return std::min(t_start, t_end); }
  double t_max() const { return std::max(t_start, t_end); }
  bool covers(double t) const { return t >= t_min() && t <= t_max(); }

  /// Dense-output metric at any time of the integrated span.
  Mat metric_at(double t) const {
    if (!covers(t))
      throw DomainError("trajectory covers [" + std::to_string(t_min()) + ", " + std::to_string(t_max()) +
                        "], requested t = " + std::to_string(t));
    return unpack_symmetric(dense.eval(t), dim());
  }
  InvariantMetric invariant_metric_at(double t) const { return InvariantMetric::unchecked(space, metric_at(t)); }
};

/// Integrates the flow from (t0, g0) to t1, forward or backward.
inline FlowTrajectory integrate_flow(const InvariantMetric& g0, double t0, double t1,
                                     const FlowControls& ctl = {}) {
  if (t0 == t1) throw DomainError("t0 must differ from t1");
  const SpacePtr space = g0.space_ptr();
  const auto m = static_cast<Eigen::Index>(g0.dim());

  OdeRhs rhs = [&](double, const Vec& y, Vec& dy) {
    const Mat g = unpack_symmetric(y, m);
    try {
      dy = pack_symmetric(ricci_rhs(InvariantMetric::unchecked(space, g)));
    } catch (const NumericError&) {
      dy = Vec::Constant(y.size(), std::numeric_limits<double>::quiet_NaN());
    }
  };
  OdeGuard guard = [&](double, const Vec& y) {
    const Mat g = unpack_symmetric(y, m);
    if (min_eigenvalue(g) < ctl.degeneracy) return StepVerdict::reject;
    const auto pkg = curvature_package(InvariantMetric::unchecked(space, g), false);
    if (!(pkg.rm_norm < ctl.kappa_max)) return StepVerdict::stop;
    return StepVerdict::accept;
  };
  OdeControls oc;
  oc.rtol = ctl.rtol;
  oc.atol = ctl.atol;
  oc.max_step = ctl.max_step;

  FlowTrajectory traj;
  traj.space = space;
  traj.t_start = t0;
  traj.dense = dopri5(rhs, t0, pack_symmetric(g0.G()), t1, oc, guard);
  const auto& res = traj.dense;
  traj.t_end = res.t_last;
  traj.accepted_steps = res.accepted;
  traj.rejected_steps = res.rejected;
  switch (res.status) {
    case OdeStatus::completed: traj.status = FlowStatus::completed; break;
    case OdeStatus::stopped:
    case OdeStatus::guard_exhausted:
      traj.status = FlowStatus::hit_singularity;
      traj.t_star = res.t_last;
      break;
    case OdeStatus::step_failure: traj.status = FlowStatus::step_failure; break;
  }

  std::vector<double> ts;
  if (ctl.sample_times.empty()) {
    ts.push_back(t0);
    for (const auto& s : res.segments) ts.push_back(s.t + s.h);
  } else {
    for (double t : ctl.sample_times)
      if (traj.covers(t)) ts.push_back(t);
    if (traj.status != FlowStatus::completed) ts.push_back(res.t_last);
  }
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  traj.times = ts;
  traj.metrics.resize(ts.size());
  traj.monitors.resize(ts.size());
  parallel_for(ts.size(), [&](std::size_t i) {
    traj.metrics[i] = symmetrized(traj.metric_at(ts[i]));
    traj.monitors[i] = monitor_record(InvariantMetric::unchecked(space, traj.metrics[i]), ts[i]);
  });
  for (std::size_t i = 0; i < ts.size(); ++i) {
    traj.max_invariance_defect =
        std::max(traj.max_invariance_defect, isotropy_invariance_defect(*space, traj.metrics[i]));
  }
  // Ancient solutions have scal > 0; flag long backward runs that violate it.
  if (traj.t_min() <= -1.0)
    for (const auto& mr : traj.monitors)
      if (!(mr.scal > 0.0)) traj.scal_positivity_violated = true;
  return traj;
}

struct MonitorReport {
  double typeI_min = 0.0;
  double typeI_max = 0.0;
  std::vector<double> F_times;
  std::vector<double> F_values;
  std::vector<int> dF_signs;    // sign of each discrete increment
  double min_normalized_dF = 0.0;  // min of (dF/dt) / (1 + |F|)
  bool F_monotone = true;          // discrete dF/dt >= -1e-8 (1 + |F|) everywhere
  double diam_over_sqrt_t_max = 0.0;
  bool scal_positive = true;
  std::size_t samples_used = 0;
};

inline constexpr double kMonotonicitySlack = 1e-8;

inline MonitorReport monitors(const FlowTrajectory& traj) {
  MonitorReport rep;
  rep.typeI_min = std::numeric_limits<double>::infinity();
  rep.typeI_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    if (traj.times[i] > -1.0) continue;
    const auto& mr = traj.monitors[i];
    rep.typeI_min = std::min(rep.typeI_min, mr.typeI_ratio);
    rep.typeI_max = std::max(rep.typeI_max, mr.typeI_ratio);
    if (std::isfinite(mr.diam_over_sqrt_t)) rep.diam_over_sqrt_t_max = std::max(rep.diam_over_sqrt_t_max, mr.diam_over_sqrt_t);
    if (!(mr.scal > 0.0)) rep.scal_positive = false;
    ++rep.samples_used;
  }
  if (rep.samples_used == 0) throw DomainError("trajectory has no stored time t <= -1");
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    rep.F_times.push_back(traj.times[i]);
    rep.F_values.push_back(traj.monitors[i].F);
  }
  rep.min_normalized_dF = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < rep.F_values.size(); ++i) {
    const double dt = rep.F_times[i + 1] - rep.F_times[i];
    const double dF = rep.F_values[i + 1] - rep.F_values[i];
    rep.dF_signs.push_back(dF > 0.0 ? 1 : (dF < 0.0 ? -1 : 0));
    const double rate = dF / dt / (1.0 + std::abs(rep.F_values[i]));
    rep.min_normalized_dF = std::min(rep.min_normalized_dF, rate);
    if (rate < -kMonotonicitySlack) rep.F_monotone = false;
  }
  return rep;
}

enum class Asymptotics { collapsed, noncollapsed, inconclusive };

inline const char* to_string(Asymptotics a) {
  switch (a) {
    case Asymptotics::collapsed: return "collapsed";
    case Asymptotics::noncollapsed: return "noncollapsed";
    case Asymptotics::inconclusive: return "inconclusive";
  }
  return "unknown";
}

struct AsymptoticsReport {
  Asymptotics verdict = Asymptotics::inconclusive;
  double slope = 0.0;              // fitted d log F / d log|t| over the last two decades
  double per_decade_change = 0.0;  // |F(-T) - F(-T/10)| / |F(-T)|
  double F_end = 0.0;
  double F_reference = 0.0;  // F(-1), or F at the latest covered time
  double F_ratio = 0.0;      // F_end / F_reference
  bool ratio_below_005 = false;
};

inline constexpr double kCollapseSlope = -0.05;
inline constexpr double kConvergedPerDecade = 1e-4;

/// Decides between the two branches of the F dichotomy from the last two
/// decades of a backward run.
inline AsymptoticsReport classify_asymptotics(const FlowTrajectory& traj) {
  const double T = -traj.t_min();
  if (T < 1e3) throw DomainError("classification needs a backward run reaching t <= -1e3");
  auto F_at = [&](double t) {
    const InvariantMetric g = traj.invariant_metric_at(t);
    return F_functional(g).F;
  };
  AsymptoticsReport rep;
  constexpr int kPoints = 21;
  std::vector<double> x(kPoints), y(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    const double lt = std::log(T) - std::log(100.0) * (1.0 - static_cast<double>(i) / (kPoints - 1));
    const double t = i == kPoints - 1 ? -T : -std::exp(lt);
    x[static_cast<std::size_t>(i)] = lt;
    y[static_cast<std::size_t>(i)] = F_at(t);
  }
  rep.F_end = y.back();
  rep.F_reference = traj.covers(-1.0) ? F_at(-1.0) : F_at(traj.t_max());
  rep.F_ratio = rep.F_end / rep.F_reference;
  rep.ratio_below_005 = rep.F_ratio < 0.05;
  rep.per_decade_change = std::abs(rep.F_end - F_at(-T / 10.0)) / std::abs(rep.F_end);

  bool all_positive = true;
  for (double v : y) all_positive = all_positive && v > 0.0;
  if (all_positive) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < kPoints; ++i) {
      const double ly = std::log(y[static_cast<std::size_t>(i)]);
      sx += x[static_cast<std::size_t>(i)];
      sy += ly;
      sxx += x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
      sxy += x[static_cast<std::size_t>(i)] * ly;
    }
    rep.slope = (kPoints * sxy - sx * sy) / (kPoints * sxx - sx * sx);
  } else {
    rep.slope = std::numeric_limits<double>::quiet_NaN();
  }

  if (rep.F_end > 0.0 && rep.per_decade_change < kConvergedPerDecade)
    rep.verdict = Asymptotics::noncollapsed;
  else if (all_positive && rep.slope <= kCollapseSlope)
    rep.verdict = Asymptotics::collapsed;
  else
    rep.verdict = Asymptotics::inconclusive;
  return rep;
}

/// Controlled-geometry budget of a metric: diameter bound, curvature
/// derivative bounds for k <= 2, the supplied injectivity floor and the
/// measured collapse defect.
struct GeometryBudget {
  double D = 0.0;
  std::array<double, 3> Gamma{};
  double iota = 0.0;
  double epsilon = 0.0;

  bool valid() const {
    return D > 0.0 && Gamma[0] > 0.0 && Gamma[1] >= 0.0 && Gamma[2] >= 0.0 && iota > 0.0 && epsilon > 0.0;
  }
};

inline GeometryBudget geometry_budget(const InvariantMetric& g, double iota, double epsilon) {
  if (!(iota > 0.0) || !(epsilon > 0.0)) throw DomainError("iota and epsilon must be positive");
  GeometryBudget b;
  b.D = diameter_bound(g);
  b.Gamma = curvature_derivative_norms(g);
  b.iota = iota;
  b.epsilon = epsilon;
  return b;
}

}  // namespace hrf
