#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library.

#include <array>
#include <cmath>
#include <functional>

namespace oracle {

/// Milnor's formulas for a diagonal left-invariant metric diag(x1, x2, x3) on
/// su(2) with [e1,e2] = e3 cyclic. Returns eigenvalues of the Ricci
/// endomorphism r_i = 2 mu_j mu_k.
inline std::array<double, 3> milnor_ricci(double x1, double x2, double x3) {
  // Orthonormal frame f_i = e_i / sqrt(x_i): [f2, f3] = lambda_1 f1 with
  // lambda_1 = sqrt(x1 / (x2 x3)), and cyclically.
  const double l1 = std::sqrt(x1 / (x2 * x3));
  const double l2 = std::sqrt(x2 / (x3 * x1));
  const double l3 = std::sqrt(x3 / (x1 * x2));
  const double half = 0.5 * (l1 + l2 + l3);
  const double mu1 = half - l1, mu2 = half - l2, mu3 = half - l3;
  return {2.0 * mu2 * mu3, 2.0 * mu3 * mu1, 2.0 * mu1 * mu2};
}

inline double milnor_scal(double x1, double x2, double x3) {
  auto r = milnor_ricci(x1, x2, x3);
  return r[0] + r[1] + r[2];
}

/// State (a, b) of the Berger family diag(a, b, b) on su(2):
/// da/dt = -a^2/b^2, db/dt = -2 + a/b.
struct Berger {
  double a;
  double b;
};

/// Integrates the Berger system from t = -1 to t = -t_end (t_end > 1) in the
/// logarithmic time s = log|t| with classical RK4 at a fixed step.
inline Berger berger_backward(Berger start, double t_end, int steps = 40000) {
  auto rhs = [](double s, const Berger& y) {
    const double e = std::exp(s);  // |t|; dt/ds = -e
    return Berger{e * y.a * y.a / (y.b * y.b), -e * (-2.0 + y.a / y.b)};
  };
  const double s_end = std::log(t_end);
  const double h = s_end / steps;
  Berger y = start;
  for (int i = 0; i < steps; ++i) {
    const double s = i * h;
    auto k1 = rhs(s, y);
    auto k2 = rhs(s + h / 2, {y.a + h / 2 * k1.a, y.b + h / 2 * k1.b});
    auto k3 = rhs(s + h / 2, {y.a + h / 2 * k2.a, y.b + h / 2 * k2.b});
    auto k4 = rhs(s + h, {y.a + h * k3.a, y.b + h * k3.b});
    y.a += h / 6 * (k1.a + 2 * k2.a + 2 * k3.a + k4.a);
    y.b += h / 6 * (k1.b + 2 * k2.b + 2 * k3.b + k4.b);
  }
  return y;
}

/// Closed-form curvature of the Berger metric diag(a, b, b).
inline double berger_scal(double a, double b) { return 2.0 / b - a / (2.0 * b * b); }
inline double berger_A_norm_sq(double a, double b) { return a / (2.0 * b * b); }

}  // namespace oracle
