#pragma once

// Levi-Civita connection, curvature, O'Neill data, volume functional and
// diameter bounds for G-invariant metrics, all computed algebraically at the
// origin of a reductive homogeneous space.

#include "hrf/lie_core.hpp"

#include <array>
#include <limits>
#include <random>

namespace hrf {

/// Relative Ad(h)-invariance defect of a symmetric form on m.
inline double isotropy_invariance_defect(const HomogeneousSpaceData& space, const Mat& g) {
  double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (const Mat& a : space.isotropy_maps())
    worst = std::max(worst, (g * a + a.transpose() * g).cwiseAbs().maxCoeff());
  return worst / scale;
}

/// Relative Ad(t)-invariance defect of a symmetric form on m.
inline double torus_invariance_defect(const HomogeneousSpaceData& space,
                                      const TorusCertificate& torus, const Mat& g) {
  double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (const Vec& v : torus.t_basis) {
    Mat a = space.ad_on_m(v);
    worst = std::max(worst, (g * a + a.transpose() * g).cwiseAbs().maxCoeff());
  }
  return worst / scale;
}

inline constexpr double kInvarianceTol = 1e-10;

/// Positive-definite Ad(H)-invariant inner product on m, given as a matrix in
/// the Q-orthonormal m basis of its space.
class InvariantMetric {
 public:
  InvariantMetric(SpacePtr space, Mat g) : space_(std::move(space)), g_(std::move(g)) {
    check_shape();
    if (g_.rows() > 0 && min_eigenvalue(g_) <= 0.0)
      throw NumericError("metric matrix is not positive definite");
    if (isotropy_invariance_defect(*space_, g_) > kInvarianceTol)
      throw PreconditionError("metric is not Ad(H)-invariant");
  }

  /// Skips the positivity and invariance checks. Only for diagnostics and
  /// negative controls; downstream formulas assume a valid metric.
  static InvariantMetric unchecked(SpacePtr space, Mat g) {
    InvariantMetric out;
    out.space_ = std::move(space);
    out.g_ = std::move(g);
    out.check_shape();
    return out;
  }

  const Mat& G() const { return g_; }
  const HomogeneousSpaceData& space() const { return *space_; }
  const SpacePtr& space_ptr() const { return space_; }
  int dim() const { return static_cast<int>(g_.rows()); }
  double min_eig() const { return min_eigenvalue(g_); }
  double max_eig() const { return max_eigenvalue(g_); }
  double invariance_defect() const { return isotropy_invariance_defect(*space_, g_); }
  InvariantMetric scaled(double c) const { return unchecked(space_, c * g_); }

 private:
  InvariantMetric() = default;

  void check_shape() {
    if (!space_) throw ShapeError("metric needs a homogeneous space");
    const int d = space_->dim_m();
    if (g_.rows() != d || g_.cols() != d)
      throw ShapeError("metric must be " + std::to_string(d) + "x" + std::to_string(d));
    const double scale = std::max(1.0, g_.cwiseAbs().maxCoeff());
    if ((g_ - g_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw ShapeError("metric matrix is not symmetric");
    g_ = symmetrized(g_);
  }

  SpacePtr space_;
  Mat g_;
};

// ---------------------------------------------------------------------------
// Connection
// ---------------------------------------------------------------------------

/// Nomizu map of the Levi-Civita connection at the origin:
/// lambda[a].col(b) = Lambda(e_a) e_b, u[a].col(b) = U(e_a, e_b).
struct ConnectionData {
  std::vector<Mat> lambda;
  std::vector<Mat> u;
  double compatibility_defect = 0.0;
  double torsion_defect = 0.0;

  Mat lambda_of(const Vec& x) const {
    Mat out = Mat::Zero(lambda.empty() ? 0 : lambda[0].rows(), lambda.empty() ? 0 : lambda[0].cols());
    for (std::size_t a = 0; a < lambda.size(); ++a)
      if (x(static_cast<Eigen::Index>(a)) != 0.0) out += x(static_cast<Eigen::Index>(a)) * lambda[a];
    return out;
  }
};

/// Lambda(X)Y = 1/2 [X,Y]_m + U(X,Y), with
/// 2 g(U(X,Y), Z) = g([Z,X]_m, Y) + g(X, [Z,Y]_m).
inline ConnectionData connection_map(const InvariantMetric& metric) {
  const auto& sp = metric.space();
  const Mat& g = metric.G();
  const int d = metric.dim();
  ConnectionData conn;
  conn.lambda.assign(static_cast<std::size_t>(d), Mat::Zero(d, d));
  conn.u.assign(static_cast<std::size_t>(d), Mat::Zero(d, d));
  if (d == 0) return conn;
  Eigen::LDLT<Mat> solver(g);
  if (solver.info() != Eigen::Success || min_eigenvalue(g) <= 0.0)
    throw NumericError("linear solve with singular metric matrix");
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      Vec rhs = Vec::Zero(d);
      for (int z = 0; z < d; ++z) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += sp.bracket_m(z, a, k) * g(k, b) + g(a, k) * sp.bracket_m(z, b, k);
        rhs(z) = s;
      }
      Vec uab = 0.5 * solver.solve(rhs);
      conn.u[static_cast<std::size_t>(a)].col(b) = uab;
      for (int c = 0; c < d; ++c)
        conn.lambda[static_cast<std::size_t>(a)](c, b) = 0.5 * sp.bracket_m(a, b, c) + uab(c);
    }
  for (int a = 0; a < d; ++a) {
    const Mat& la = conn.lambda[static_cast<std::size_t>(a)];
    conn.compatibility_defect =
        std::max(conn.compatibility_defect, (g * la + la.transpose() * g).cwiseAbs().maxCoeff());
    for (int b = 0; b < d; ++b) {
      double t = 0.0;
      for (int c = 0; c < d; ++c)
        t = std::max(t, std::abs(la(c, b) - conn.lambda[static_cast<std::size_t>(b)](c, a) -
                                 sp.bracket_m(a, b, c)));
      conn.torsion_defect = std::max(conn.torsion_defect, t);
    }
  }
  return conn;
}

// ---------------------------------------------------------------------------
// Curvature
// ---------------------------------------------------------------------------

/// Curvature endomorphisms R(e_a, e_b), index a*d + b:
/// R(X,Y) = [Lambda(X), Lambda(Y)] - Lambda([X,Y]_m) - ad([X,Y]_h)|_m.
inline std::vector<Mat> curvature_endomorphisms(const HomogeneousSpaceData& sp,
                                                const ConnectionData& conn) {
  const int d = sp.dim_m();
  std::vector<Mat> r(static_cast<std::size_t>(d * d), Mat::Zero(d, d));
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      if (a == b) continue;
      const Mat& la = conn.lambda[static_cast<std::size_t>(a)];
      const Mat& lb = conn.lambda[static_cast<std::size_t>(b)];
      Mat rab = la * lb - lb * la - sp.isotropy_of_bracket(a, b);
      for (int c = 0; c < d; ++c) {
        const double coef = sp.bracket_m(a, b, c);
        if (coef != 0.0) rab -= coef * conn.lambda[static_cast<std::size_t>(c)];
      }
      r[static_cast<std::size_t>(a * d + b)] = rab;
    }
  return r;
}

inline Mat ricci_from_endomorphisms(const std::vector<Mat>& r, int d) {
  // Ric(b, c) = sum_a (R(e_a, e_b) e_c)^a
  Mat ric = Mat::Zero(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < d; ++c) ric(b, c) += r[static_cast<std::size_t>(a * d + b)](a, c);
  return symmetrized(ric);
}

/// Ricci tensor as a bilinear form on m (m coordinates).
inline Mat ricci(const InvariantMetric& metric) {
  const int d = metric.dim();
  if (d == 0) return Mat(0, 0);
  auto conn = connection_map(metric);
  return ricci_from_endomorphisms(curvature_endomorphisms(metric.space(), conn), d);
}

inline double scalar_curvature(const InvariantMetric& metric) {
  if (metric.dim() == 0) return 0.0;
  return metric.G().ldlt().solve(ricci(metric)).trace();
}

/// Dense 4-index array with d^4 entries.
struct Tensor4 {
  int d = 0;
  std::vector<double> v;
  explicit Tensor4(int dim = 0) : d(dim), v(static_cast<std::size_t>(dim * dim * dim * dim), 0.0) {}
  double& operator()(int i, int j, int k, int l) {
    return v[static_cast<std::size_t>(((i * d + j) * d + k) * d + l)];
  }
  double operator()(int i, int j, int k, int l) const {
    return v[static_cast<std::size_t>(((i * d + j) * d + k) * d + l)];
  }
};

struct SectionalBounds {
  double sec_min = 0.0;
  double sec_max = 0.0;
  bool converged = true;
  double operator_min = 0.0;  // curvature-operator eigenvalues: certified envelope
  double operator_max = 0.0;
};

struct SectionalOptions {
  int starts = 32;
  double tol = 1e-8;
  int max_iterations = 500;
  std::uint64_t seed = 0x5EED;
};

/// Sectional curvature of orthonormal x, y from an orthonormal-frame (0,4) tensor.
inline double sectional(const Tensor4& rm, const Vec& x, const Vec& y) {
  double s = 0.0;
  const int d = rm.d;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) s += rm(i, j, k, l) * x(i) * y(j) * y(k) * x(l);
  return s;
}

namespace detail {

inline Mat jacobi_operator(const Tensor4& rm, const Vec& y) {
  const int d = rm.d;
  Mat j = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int l = 0; l < d; ++l) {
      double s = 0.0;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) s += rm(i, a, b, l) * y(a) * y(b);
      j(i, l) = s;
    }
  return symmetrized(j);
}

/// Extreme eigenvector of the Jacobi operator of y restricted to y-perp.
inline Vec best_partner(const Tensor4& rm, const Vec& y, bool maximize) {
  Mat perp = orthonormal_complement(y, Mat::Identity(rm.d, rm.d));
  Mat red = perp.transpose() * jacobi_operator(rm, y) * perp;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(red));
  Vec v = maximize ? Vec(es.eigenvectors().col(red.rows() - 1)) : Vec(es.eigenvectors().col(0));
  Vec x = perp * v;
  return x / x.norm();
}

}  // namespace detail

/// Extremes of sectional curvature over 2-planes: multi-start alternating
/// maximization (each half-step solves the restricted Jacobi eigenproblem),
/// with curvature-operator eigenvalues as a certified envelope.
inline SectionalBounds sectional_extremes(const Tensor4& rm, const SectionalOptions& opt = {}) {
  SectionalBounds out;
  const int d = rm.d;
  if (d < 2) return out;
  // Curvature operator on the bivectors e_i ^ e_j, i < j.
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) pairs.emplace_back(i, j);
  const auto np = static_cast<Eigen::Index>(pairs.size());
  Mat op(np, np);
  for (Eigen::Index p = 0; p < np; ++p)
    for (Eigen::Index q = 0; q < np; ++q)
      op(p, q) = rm(pairs[static_cast<std::size_t>(p)].first, pairs[static_cast<std::size_t>(p)].second,
                    pairs[static_cast<std::size_t>(q)].second, pairs[static_cast<std::size_t>(q)].first);
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(op), Eigen::EigenvaluesOnly);
  out.operator_min = es.eigenvalues()(0);
  out.operator_max = es.eigenvalues()(np - 1);
  if (d == 2) {
    out.sec_min = out.sec_max = rm(0, 1, 1, 0);
    return out;
  }

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  double best_max = -std::numeric_limits<double>::infinity();
  double best_min = std::numeric_limits<double>::infinity();
  bool converged = true;
  for (int s = 0; s < opt.starts; ++s) {
    Vec x0(d), y0(d);
    if (s < static_cast<int>(pairs.size())) {
      x0 = Vec::Unit(d, pairs[static_cast<std::size_t>(s)].first);
      y0 = Vec::Unit(d, pairs[static_cast<std::size_t>(s)].second);
    } else {
      for (int i = 0; i < d; ++i) {
        x0(i) = normal(rng);
        y0(i) = normal(rng);
      }
      x0.normalize();
      y0 -= y0.dot(x0) * x0;
      y0.normalize();
    }
    for (int mode = 0; mode < 2; ++mode) {
      const bool maximize = mode == 0;
      Vec x = x0, y = y0;
      double val = sectional(rm, x, y), change = 1.0;
      int it = 0;
      for (; it < opt.max_iterations; ++it) {
        x = detail::best_partner(rm, y, maximize);
        y = detail::best_partner(rm, x, maximize);
        const double nv = sectional(rm, x, y);
        change = std::abs(nv - val);
        val = nv;
        if (change < 1e-14 * std::max(1.0, std::abs(val))) break;
      }
      if (change > opt.tol) converged = false;
      if (maximize)
        best_max = std::max(best_max, val);
      else
        best_min = std::min(best_min, val);
    }
  }
  out.sec_max = best_max;
  out.sec_min = best_min;
  out.converged = converged;
  return out;
}

struct CurvaturePackage {
  Tensor4 rm;     // (0,4) tensor in m coordinates: Rm(a,b,c,e) = g(R(e_a,e_b)e_c, e_e)
  Tensor4 rm_on;  // same tensor in the g-orthonormal frame G^{-1/2}
  Mat ric;        // bilinear form, m coordinates
  double scal = 0.0;
  double rm_norm = 0.0;
  double sec_min = 0.0;
  double sec_max = 0.0;
  bool sec_certified = true;  // false when the optimizer did not converge
  double curvature_operator_min = 0.0;
  double curvature_operator_max = 0.0;
  Vec ric_endo_eigs;
  double symmetry_defect = 0.0;  // worst algebraic-symmetry violation of rm_on
};

inline CurvaturePackage curvature_package(const InvariantMetric& metric, bool with_sectional = true,
                                          const SectionalOptions& sec_opt = {}) {
  const int d = metric.dim();
  CurvaturePackage pkg;
  pkg.rm = Tensor4(d);
  pkg.rm_on = Tensor4(d);
  pkg.ric = Mat::Zero(d, d);
  pkg.ric_endo_eigs = Vec::Zero(d);
  if (d == 0) return pkg;
  const Mat& g = metric.G();
  auto conn = connection_map(metric);
  auto r = curvature_endomorphisms(metric.space(), conn);
  pkg.ric = ricci_from_endomorphisms(r, d);

  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      Mat t = (g * r[static_cast<std::size_t>(a * d + b)]).transpose();  // t(c,e) = Rm(a,b,c,e)
      for (int c = 0; c < d; ++c)
        for (int e = 0; e < d; ++e) pkg.rm(a, b, c, e) = t(c, e);
    }

  Mat p = inverse_sqrt_spd(g);
  // Contract the last two indices, then the first two.
  Tensor4 half(d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      Mat t(d, d);
      for (int c = 0; c < d; ++c)
        for (int e = 0; e < d; ++e) t(c, e) = pkg.rm(a, b, c, e);
      Mat tp = p.transpose() * t * p;
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) half(a, b, k, l) = tp(k, l);
    }
  for (int k = 0; k < d; ++k)
    for (int l = 0; l < d; ++l) {
      Mat t(d, d);
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) t(a, b) = half(a, b, k, l);
      Mat tp = p.transpose() * t * p;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) pkg.rm_on(i, j, k, l) = tp(i, j);
    }

  double n2 = 0.0;
  for (double x : pkg.rm_on.v) n2 += x * x;
  pkg.rm_norm = std::sqrt(n2);

  Mat ric_on = symmetrized(p.transpose() * pkg.ric * p);
  Eigen::SelfAdjointEigenSolver<Mat> es(ric_on, Eigen::EigenvaluesOnly);
  pkg.ric_endo_eigs = es.eigenvalues();
  pkg.scal = ric_on.trace();

  double defect = 0.0;
  const Tensor4& t = pkg.rm_on;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) {
          defect = std::max(defect, std::abs(t(i, j, k, l) + t(j, i, k, l)));
          defect = std::max(defect, std::abs(t(i, j, k, l) + t(i, j, l, k)));
          defect = std::max(defect, std::abs(t(i, j, k, l) - t(k, l, i, j)));
          defect = std::max(defect, std::abs(t(i, j, k, l) + t(j, k, i, l) + t(k, i, j, l)));
        }
  pkg.symmetry_defect = defect;

  if (with_sectional) {
    auto sb = sectional_extremes(pkg.rm_on, sec_opt);
    pkg.sec_min = sb.sec_min;
    pkg.sec_max = sb.sec_max;
    pkg.sec_certified = sb.converged;
    pkg.curvature_operator_min = sb.operator_min;
    pkg.curvature_operator_max = sb.operator_max;
  } else {
    pkg.sec_min = pkg.sec_max = std::numeric_limits<double>::quiet_NaN();
  }
  return pkg;
}

/// |Ric|_g^2 = tr((G^{-1} Ric)^2).
inline double ricci_norm_sq(const InvariantMetric& metric, const Mat& ric) {
  if (metric.dim() == 0) return 0.0;
  Mat e = metric.G().ldlt().solve(ric);
  return (e * e).trace();
}

/// Norms |Rm|, |D Rm|, |D^2 Rm| at the origin. For an invariant tensor T,
/// (D_X T)(Y_1, ..., Y_k) = -sum_i T(..., Lambda(X) Y_i, ...), and D T is again
/// invariant, so the rule applies twice.
inline std::array<double, 3> curvature_derivative_norms(const InvariantMetric& metric) {
  const int d = metric.dim();
  if (d == 0) return {0.0, 0.0, 0.0};
  auto pkg = curvature_package(metric, false);
  auto conn = connection_map(metric);
  const Mat p = inverse_sqrt_spd(metric.G());
  const Mat pinv = sqrt_spd(metric.G());
  // Lambda in the orthonormal frame, one matrix per frame vector.
  std::vector<Mat> lam(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) lam[static_cast<std::size_t>(i)] = pinv * conn.lambda_of(p.col(i)) * p;

  // Flat storage with the derivative slots first.
  auto derive = [&](const std::vector<double>& t, int order) {
    const auto n = static_cast<std::size_t>(d);
    std::size_t block = 1;
    for (int k = 0; k < order; ++k) block *= n;
    std::vector<double> out(block * n, 0.0);
    std::vector<int> idx(static_cast<std::size_t>(order));
    for (std::size_t x = 0; x < n; ++x) {
      const Mat& l = lam[x];
      for (std::size_t flat = 0; flat < block; ++flat) {
        std::size_t rem = flat;
        for (int k = order - 1; k >= 0; --k) {
          idx[static_cast<std::size_t>(k)] = static_cast<int>(rem % n);
          rem /= n;
        }
        double acc = 0.0;
        std::size_t stride = block / n;
        for (int k = 0; k < order; ++k) {
          // replace slot k by Lambda(x) e_{idx_k} = sum_j l(j, idx_k) e_j
          const int ik = idx[static_cast<std::size_t>(k)];
          const std::size_t base = flat - static_cast<std::size_t>(ik) * stride;
          for (int j = 0; j < d; ++j) {
            const double c = l(j, ik);
            if (c != 0.0) acc += c * t[base + static_cast<std::size_t>(j) * stride];
          }
          stride /= n;
        }
        out[x * block + flat] = -acc;
      }
    }
    return out;
  };
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  auto d1 = derive(pkg.rm_on.v, 4);
  auto d2 = derive(d1, 5);
  return {pkg.rm_norm, norm(d1), norm(d2)};
}

// ---------------------------------------------------------------------------
// Volume functional and diameter
// ---------------------------------------------------------------------------

struct FValue {
  double vol_rel = 1.0;  // vol(M, g) / vol(M, Q)
  double F = 0.0;
  double scal = 0.0;
};

/// F(g) = vol^(2/m) scal with vol(M, Q) normalized to 1.
inline FValue F_functional(const InvariantMetric& metric) {
  FValue out;
  const int d = metric.dim();
  if (d == 0) return out;
  out.vol_rel = std::sqrt(metric.G().determinant());
  out.scal = scalar_curvature(metric);
  out.F = std::pow(out.vol_rel, 2.0 / d) * out.scal;
  return out;
}

/// dF/dt along the Ricci flow: 2 vol^(2/m) (|Ric|^2 - scal^2/m).
inline double F_rate(const InvariantMetric& metric) {
  const int d = metric.dim();
  if (d == 0) return 0.0;
  Mat ric = ricci(metric);
  const double scal = metric.G().ldlt().solve(ric).trace();
  const double vol = std::sqrt(metric.G().determinant());
  return 2.0 * std::pow(vol, 2.0 / d) * (ricci_norm_sq(metric, ric) - scal * scal / d);
}

/// sqrt(lambda_max(G)) * diam(M, Q): an upper bound for diam(M, g).
inline double diameter_bound(const InvariantMetric& metric) {
  const auto dq = metric.space().diam_Q();
  if (!dq) throw ConfigError("diam_Q is not set for this homogeneous space");
  return std::sqrt(metric.max_eig()) * *dq;
}

// ---------------------------------------------------------------------------
// Torus fibrations
// ---------------------------------------------------------------------------

/// Quotient data for G/HT: isotropy h + t, reductive complement m_B.
inline SpacePtr quotient_space(const HomogeneousSpaceData& space, const TorusCertificate& torus) {
  std::vector<Vec> hb = space.h_basis();
  for (const Vec& v : torus.t_basis) hb.push_back(v);
  return reductive_split(space.algebra(), hb, std::nullopt, space.chart_radius());
}

/// The triple (g_hat, b, g_check) of a metric relative to a torus in m0.
struct MetricTriple {
  Mat g_hat;       // s x s, on the t generators
  Mat b_basis;     // d x (d-s), m coordinates, g-orthogonal to t
  Mat g_check;     // (d-s) x (d-s), base metric on the quotient's m basis
  Mat t_m;         // d x s
  Mat base_in_m;   // d x (d-s): quotient m basis in m coordinates (Q-orthonormal)
  SpacePtr base_space;
  double reconstruction_defect = 0.0;
  double bracket_invariance_defect = 0.0;  // [h + t, b] in b
};

inline MetricTriple metric_triple(const InvariantMetric& metric, const TorusCertificate& torus) {
  if (!torus.passes()) throw PreconditionError("torus certificate does not pass");
  const auto& sp = metric.space();
  for (const Vec& v : torus.t_basis)
    if (sp.distance_from_m(v) > 1e-10) throw DomainError("torus generator is not inside m");
  MetricTriple out;
  out.base_space = quotient_space(sp, torus);
  const Mat& g = metric.G();
  const auto& q = sp.algebra().Q();
  out.t_m = torus.t_m;
  out.base_in_m = sp.m().transpose() * q * out.base_space->m();
  const Mat& t = out.t_m;
  const Mat& bq = out.base_in_m;
  out.g_hat = symmetrized(t.transpose() * g * t);
  Mat gtb = t.transpose() * g * bq;
  Mat coupling = out.g_hat.ldlt().solve(gtb);
  out.b_basis = bq - t * coupling;
  out.g_check = symmetrized(bq.transpose() * g * bq - gtb.transpose() * coupling);

  // Reassemble g in the basis [t | b] and compare.
  const int d = metric.dim();
  const auto s = t.cols();
  Mat basis(d, d);
  basis << t, out.b_basis;
  Mat blocks = Mat::Zero(d, d);
  blocks.topLeftCorner(s, s) = out.g_hat;
  blocks.bottomRightCorner(d - s, d - s) = out.g_check;
  Mat inv = basis.inverse();
  Mat rebuilt = inv.transpose() * blocks * inv;
  out.reconstruction_defect = (rebuilt - g).cwiseAbs().maxCoeff() / std::max(1.0, g.cwiseAbs().maxCoeff());

  // [h + t, b] in b: t-component of the g-orthogonal decomposition m = t + b.
  std::vector<Mat> maps = sp.isotropy_maps();
  for (const Vec& v : torus.t_basis) maps.push_back(sp.ad_on_m(v));
  double worst = 0.0;
  for (const Mat& a : maps)
    for (Eigen::Index j = 0; j < out.b_basis.cols(); ++j) {
      Vec img = a * out.b_basis.col(j);
      Vec coef = out.g_hat.ldlt().solve(t.transpose() * g * img);
      worst = std::max(worst, std::sqrt(std::max(0.0, coef.dot(out.g_hat * coef))));
    }
  out.bracket_invariance_defect = worst;
  return out;
}

/// The base metric of the triple as an invariant metric on G/HT.
inline InvariantMetric base_metric(const MetricTriple& triple) {
  return InvariantMetric(triple.base_space, triple.g_check);
}

struct OneillData {
  double A_norm_sq = 0.0;
  double dA_norm = 0.0;
  /// dA_norm <= C * A_norm_sq holds with C = 3 sqrt(2) in every dimension
  /// (Cauchy-Schwarz on the quadratic expressions for DA).
  double C_bound = 3.0 * std::sqrt(2.0);
  /// A_X for each g-orthonormal horizontal X, as a skew matrix in the
  /// g-orthonormal frame [vertical | horizontal].
  std::vector<Mat> A_components;
  double invariance_defect = 0.0;
  double max_A_XU = 0.0;  // max |A_X U| over the orthonormal frames
};

inline constexpr double kTorusInvarianceTol = 1e-8;

inline OneillData oneill_data(const InvariantMetric& metric, const TorusCertificate& torus) {
  OneillData out;
  out.invariance_defect = torus_invariance_defect(metric.space(), torus, metric.G());
  if (out.invariance_defect > kTorusInvarianceTol)
    throw PreconditionError("metric is not Ad(T)-invariant; symmetrize it over the torus first");
  const auto triple = metric_triple(metric, torus);
  const auto& sp = metric.space();
  const Mat& g = metric.G();
  const Mat& t = triple.t_m;
  const auto s = t.cols();
  const int d = metric.dim();
  const auto h = d - s;

  Mat vert = t * inverse_sqrt_spd(triple.g_hat);                // g-orthonormal vertical frame
  Mat horiz = triple.b_basis * inverse_sqrt_spd(triple.g_check); // g-orthonormal horizontal frame
  // pr_t along m = t + b, expressed in the vertical orthonormal frame.
  auto vertical_coords = [&](const Vec& v) -> Vec { return vert.transpose() * g * v; };

  // M(u, beta) for each alpha: vertical coordinate u of A_{E_alpha} E_beta.
  out.A_components.assign(static_cast<std::size_t>(h), Mat::Zero(d, d));
  double a2 = 0.0;
  for (Eigen::Index al = 0; al < h; ++al) {
    Mat& A = out.A_components[static_cast<std::size_t>(al)];
    for (Eigen::Index be = 0; be < h; ++be) {
      Vec br = sp.bracket_in_m(horiz.col(al), horiz.col(be));
      Vec vc = 0.5 * vertical_coords(br);
      a2 += vc.squaredNorm();
      for (Eigen::Index u = 0; u < s; ++u) {
        A(u, s + be) = vc(u);   // A_X E_beta (vertical)
        A(s + be, u) = -vc(u);  // A_X U_u (horizontal), skew-adjoint partner
      }
    }
  }
  out.A_norm_sq = a2;

  auto A_of_horizontal = [&](const Vec& w_on) -> Mat {
    // w_on: coordinates in the full orthonormal frame; only horizontal part enters.
    Mat r = Mat::Zero(d, d);
    for (Eigen::Index be = 0; be < h; ++be) r += w_on(s + be) * out.A_components[static_cast<std::size_t>(be)];
    return r;
  };

  double da2 = 0.0;
  for (Eigen::Index al = 0; al < h; ++al) {
    const Mat& ax = out.A_components[static_cast<std::size_t>(al)];
    for (Eigen::Index be = 0; be < h; ++be) {
      const Mat& ay = out.A_components[static_cast<std::size_t>(be)];
      da2 += (ax * ay - ay * ax).squaredNorm();
    }
    for (Eigen::Index u = 0; u < s; ++u) {
      Vec axu = ax.col(u);  // A_X U_u in orthonormal coordinates
      out.max_A_XU = std::max(out.max_A_XU, axu.norm());
      da2 += A_of_horizontal(axu).squaredNorm();
    }
  }
  out.dA_norm = std::sqrt(da2);
  return out;
}

}  // namespace hrf
