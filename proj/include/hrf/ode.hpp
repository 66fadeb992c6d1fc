#pragma once

// Dormand-Prince 5(4) with the standard continuous extension, integrating in
// either time direction.

#include "hrf/core.hpp"

#include <functional>
#include <limits>

namespace hrf {

struct OdeControls {
  double rtol = 1e-10;
  double atol = 1e-12;
  double max_step = std::numeric_limits<double>::infinity();
  double initial_step = 0.0;  // 0: automatic
  long max_steps = 2'000'000;
};

enum class StepVerdict { accept, reject, stop };

enum class OdeStatus { completed, stopped, guard_exhausted, step_failure };

/// One accepted step's continuous extension on [t, t + h].
struct DenseSegment {
  double t = 0.0;
  double h = 0.0;
  Vec r1, r2, r3, r4, r5;

  Vec eval(double x) const {
    const double th = (x - t) / h;
    const double th1 = 1.0 - th;
    return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
  }
};

struct OdeResult {
  OdeStatus status = OdeStatus::completed;
  double t_start = 0.0;
  double t_last = 0.0;
  Vec y_last;
  std::vector<DenseSegment> segments;
  long accepted = 0;
  long rejected = 0;

  bool covers(double x) const {
    const double lo = std::min(t_start, t_last), hi = std::max(t_start, t_last);
    return x >= lo && x <= hi;
  }

  /// Dense output anywhere on the integrated span.
  Vec eval(double x) const {
    if (!covers(x)) throw DomainError("time outside the integrated span");
    if (segments.empty()) return y_last;
    const double dir = t_last >= t_start ? 1.0 : -1.0;
    // segments are ordered along the integration direction
    std::size_t lo = 0, hi = segments.size();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (dir * (x - segments[mid].t) >= 0.0)
        lo = mid;
      else
        hi = mid;
    }
    return segments[lo].eval(x);
  }
};

using OdeRhs = std::function<void(double, const Vec&, Vec&)>;
using OdeGuard = std::function<StepVerdict(double, const Vec&)>;

namespace dopri {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                        a75 = -2187.0 / 6784, a76 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
inline constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                        d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                        d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;
}  // namespace dopri

/// Integrates y' = f(t, y) from t0 to t1 (either direction). The guard sees
/// every error-accepted candidate: `reject` shrinks the step, `stop` accepts
/// the step and ends the run.
inline OdeResult dopri5(const OdeRhs& f, double t0, const Vec& y0, double t1,
                        const OdeControls& ctl = {}, const OdeGuard& guard = {}) {
  using namespace dopri;
  if (t0 == t1) throw DomainError("integration interval is empty");
  OdeResult res;
  res.t_start = t0;
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const auto n = y0.size();
  Vec y = y0, k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), y1(n), err(n);
  double t = t0;
  f(t, y, k1);

  auto scaled_norm = [&](const Vec& e, const Vec& ya, const Vec& yb) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = ctl.atol + ctl.rtol * std::max(std::abs(ya(i)), std::abs(yb(i)));
      s += (e(i) / sc) * (e(i) / sc);
    }
    return std::sqrt(s / static_cast<double>(std::max<Eigen::Index>(n, 1)));
  };

  double h = ctl.initial_step;
  if (h <= 0.0) {
    const double d0 = scaled_norm(y, y, y), d1n = scaled_norm(k1, y, y);
    double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
    h0 = std::min(h0, std::abs(t1 - t0));
    tmp = y + dir * h0 * k1;
    f(t + dir * h0, tmp, k2);
    const double d2 = scaled_norm(k2 - k1, y, y) / h0;
    const double h1 = std::max(d1n, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                 : std::pow(0.01 / std::max(d1n, d2), 0.2);
    h = std::min(100 * h0, h1);
  }
  h = std::min({h, ctl.max_step, std::abs(t1 - t0)});

  bool last_rejected = false;
  for (long step = 0;; ++step) {
    if (step >= ctl.max_steps) {
      res.status = OdeStatus::step_failure;
      break;
    }
    const double min_step = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t));
    if (h < min_step) {
      res.status = last_rejected ? OdeStatus::guard_exhausted : OdeStatus::step_failure;
      break;
    }
    bool final_step = false;
    if (h >= std::abs(t1 - t)) {
      h = std::abs(t1 - t);
      final_step = true;
    }
    const double hs = dir * h;
    tmp = y + hs * a21 * k1;
    f(t + c2 * hs, tmp, k2);
    tmp = y + hs * (a31 * k1 + a32 * k2);
    f(t + c3 * hs, tmp, k3);
    tmp = y + hs * (a41 * k1 + a42 * k2 + a43 * k3);
    f(t + c4 * hs, tmp, k4);
    tmp = y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(t + c5 * hs, tmp, k5);
    tmp = y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    const double t_new = final_step ? t1 : t + hs;
    f(t_new, tmp, k6);
    y1 = y + hs * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    f(t_new, y1, k7);
    err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double en = scaled_norm(err, y, y1);
    if (!std::isfinite(en) || !y1.allFinite()) {
      // the right-hand side left its domain: same treatment as a guard rejection
      ++res.rejected;
      h *= 0.5;
      last_rejected = true;
      continue;
    }

    if (en > 1.0) {
      ++res.rejected;
      h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
      continue;
    }
    StepVerdict verdict = guard ? guard(t_new, y1) : StepVerdict::accept;
    if (verdict == StepVerdict::reject) {
      ++res.rejected;
      h *= 0.5;
      last_rejected = true;
      continue;
    }
    last_rejected = false;

    DenseSegment seg;
    seg.t = t;
    seg.h = hs;
    const Vec ydiff = y1 - y;
    const Vec bspl = hs * k1 - ydiff;
    seg.r1 = y;
    seg.r2 = ydiff;
    seg.r3 = bspl;
    seg.r4 = ydiff - hs * k7 - bspl;
    seg.r5 = hs * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
    res.segments.push_back(std::move(seg));
    ++res.accepted;

    t = t_new;
    y = y1;
    k1 = k7;
    if (verdict == StepVerdict::stop) {
      res.status = OdeStatus::stopped;
      break;
    }
    if (final_step) {
      res.status = OdeStatus::completed;
      break;
    }
    const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
    h = std::min(h * fac, ctl.max_step);
  }
  res.t_last = t;
  res.y_last = y;
  return res;
}

}  // namespace hrf
