#pragma once

// Geometric models (normal-coordinate pullbacks on the radius-pi ball after
// |sec| <= 1 normalization), their comparison up to gauge, the exponential
// chart of a homogeneous space, and measured defects of the torus quotient map.

#include "hrf/invariant_geometry.hpp"
#include "hrf/ode.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>

namespace hrf {

// ---------------------------------------------------------------------------
// Exponential chart X -> exp(X) o
// ---------------------------------------------------------------------------

/// Pullback of an invariant metric under X -> exp(X) o, with the left
/// trivialized derivative sum_k (-ad X)^k / (k+1)! projected to m.
class Chart {
 public:
  explicit Chart(const InvariantMetric& g) : space_(g.space_ptr()), g_(g.G()) {
    const auto& alg = space_->algebra();
    proj_ = space_->m().transpose() * alg.Q();  // algebra -> m coordinates
    const int d = g.dim();
    basis_ad_.reserve(static_cast<std::size_t>(d));
    for (int l = 0; l < d; ++l) basis_ad_.push_back(-alg.ad_of(space_->m().col(l)));
  }

  int dim() const { return static_cast<int>(g_.rows()); }
  double radius() const { return space_->chart_radius(); }

  void check_domain(const Vec& x) const {
    if (!(x.norm() < radius()))
      throw DomainError("point outside the exponential chart (|X|_Q = " + std::to_string(x.norm()) + ")");
  }

  /// Chart metric at x (m coordinates).
  Mat metric(const Vec& x) const {
    check_domain(x);
    const Mat j = derivative(x, nullptr);
    return symmetrized(j.transpose() * g_ * j);
  }

  /// Chart metric and its partial derivatives along the m coordinate axes.
  Mat metric_with_derivatives(const Vec& x, std::vector<Mat>& dg) const {
    check_domain(x);
    std::vector<Mat> dj;
    const Mat j = derivative(x, &dj);
    const int d = dim();
    dg.assign(static_cast<std::size_t>(d), Mat());
    const Mat gj = g_ * j;
    for (int l = 0; l < d; ++l) {
      Mat t = dj[static_cast<std::size_t>(l)].transpose() * gj;
      dg[static_cast<std::size_t>(l)] = t + t.transpose();
    }
    return symmetrized(j.transpose() * gj);
  }

  /// Geodesic acceleration -Gamma(x)(v, v).
  Vec acceleration(const Vec& x, const Vec& v) const {
    check_domain(x);
    if (space_->algebra().dim() <= kSmall) return acceleration_impl<SmallMat>(x, v);
    return acceleration_impl<Mat>(x, v);
  }

 private:
  static constexpr int kSmall = 12;
  using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kSmall, kSmall>;
  using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kSmall, 1>;

  template <class M>
  Vec acceleration_impl(const Vec& x, const Vec& v) const {
    const int d = dim();
    M j, dj_v;
    series<M>(x, &v, j, dj_v);
    // g~ = J^T G J, (d_v g~) = dJ_v^T G J + J^T G dJ_v; w_l = (d_v g~ v)_l - 1/2 v^T (d_l g~) v,
    // with v^T (d_l g~) v = 2 (J v)^T G (dJ_l v) = 2 (G J v)^T (dJ_l v).
    const M gm = g_small<M>();
    const M gj = gm * j;
    M metric = j.transpose() * gj;
    const M dgv = dj_v.transpose() * gj + gj.transpose() * dj_v;
    Eigen::Matrix<double, Eigen::Dynamic, 1, 0, M::MaxRowsAtCompileTime, 1> vv = v;
    Eigen::Matrix<double, Eigen::Dynamic, 1, 0, M::MaxRowsAtCompileTime, 1> w = dgv * vv;
    // dJ_l v for each l: assembled from the same recurrence along each axis.
    const Eigen::Matrix<double, Eigen::Dynamic, 1, 0, M::MaxRowsAtCompileTime, 1> gjv = gj * vv;
    M djl_v(d, d);
    series_columns<M>(x, vv, djl_v);
    w -= djl_v.transpose() * gjv;
    metric = 0.5 * (metric + metric.transpose()).eval();
    Vec out = -metric.ldlt().solve(w);
    return out;
  }

  template <class M>
  M g_small() const {
    return M(g_);
  }

  /// Sum_k (-ad X)^k m / (k+1)! projected to m (J), and its derivative in the
  /// direction `dir` (dJ_dir).
  template <class M>
  void series(const Vec& x, const Vec* dir, M& j, M& dj) const {
    const auto& alg = space_->algebra();
    const int n = alg.dim();
    const M a = M(-alg.ad_of(space_->from_m(x)));
    const M m = M(space_->m());
    M b;
    if (dir) b = M(-alg.ad_of(space_->from_m(*dir)));
    M t = m, sum = m;
    M dt = M::Zero(n, m.cols()), dsum = dt;
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    int k = 1;
    for (; k < kMaxTerms; ++k) {
      if (dir) {
        dt = (a * dt + b * t) / static_cast<double>(k + 1);
        dsum += dt;
      }
      t = a * t / static_cast<double>(k + 1);
      sum += t;
      if (k > 3 && t.cwiseAbs().maxCoeff() < 1e-17 * scale && (!dir || dt.cwiseAbs().maxCoeff() < 1e-17 * scale)) break;
    }
    if (k >= kMaxTerms) throw DomainError("exponential-chart series did not converge");
    const M proj = M(proj_);
    j = proj * sum;
    if (dir) dj = proj * dsum;
  }

  /// Column l of the result is (d_l J) v.
  template <class M, class V>
  void series_columns(const Vec& x, const V& v, M& out) const {
    const auto& alg = space_->algebra();
    const int n = alg.dim();
    const int d = dim();
    const M a = M(-alg.ad_of(space_->from_m(x)));
    const M m = M(space_->m());
    // (d_l A^k) m v = A (d_l A^(k-1)) m v + B_l A^(k-1) m v; track u_k = A^k m v / (k+1)!.
    using VN = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, M::MaxRowsAtCompileTime, 1>;
    VN u = m * v;
    M du = M::Zero(n, d), dsum = M::Zero(n, d);
    M bu(n, d);
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    int k = 1;
    for (; k < kMaxTerms; ++k) {
      for (int l = 0; l < d; ++l) bu.col(l) = M(basis_ad_[static_cast<std::size_t>(l)]) * u;
      du = (a * du + bu) / static_cast<double>(k + 1);
      dsum += du;
      u = a * u / static_cast<double>(k + 1);
      if (k > 3 && u.cwiseAbs().maxCoeff() < 1e-17 * scale && du.cwiseAbs().maxCoeff() < 1e-17 * scale) break;
    }
    if (k >= kMaxTerms) throw DomainError("exponential-chart series did not converge");
    out = M(proj_) * dsum;
  }

  static constexpr int kMaxTerms = 200;

  /// J = P_m D_X restricted to m (d x d), and optionally dJ/dx_l.
  Mat derivative(const Vec& x, std::vector<Mat>* dj) const {
    const int d = dim();
    Mat j, djl;
    if (!dj) {
      series<Mat>(x, nullptr, j, djl);
      return j;
    }
    dj->assign(static_cast<std::size_t>(d), Mat());
    for (int l = 0; l < d; ++l) {
      const Vec e = Vec::Unit(d, l);
      series<Mat>(x, &e, j, (*dj)[static_cast<std::size_t>(l)]);
    }
    return j;
  }

  SpacePtr space_;
  Mat g_;
  Mat proj_;
  std::vector<Mat> basis_ad_;
};

inline Mat chart_metric(const InvariantMetric& g, const Vec& x) { return Chart(g).metric(x); }

/// Ricci tensor at the origin from finite differences of the chart metric
/// (fourth-order central differences with one Richardson step). Independent
/// of the algebraic curvature formula; used as its cross-check.
inline Mat chart_ricci_fd(const InvariantMetric& g, double h = 2e-2) {
  const Chart chart(g);
  const int d = g.dim();
  // First and second derivatives of the metric at 0 with step s.
  auto derivs = [&](double s, std::vector<Mat>& d1, std::vector<Mat>& d2) {
    const Mat g0 = chart.metric(Vec::Zero(d));
    d1.assign(static_cast<std::size_t>(d), Mat::Zero(d, d));
    d2.assign(static_cast<std::size_t>(d * d), Mat::Zero(d, d));
    std::vector<Mat> plus(static_cast<std::size_t>(d)), minus(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) {
      plus[static_cast<std::size_t>(k)] = chart.metric(s * Vec::Unit(d, k));
      minus[static_cast<std::size_t>(k)] = chart.metric(-s * Vec::Unit(d, k));
      d1[static_cast<std::size_t>(k)] = (plus[static_cast<std::size_t>(k)] - minus[static_cast<std::size_t>(k)]) / (2 * s);
      d2[static_cast<std::size_t>(k * d + k)] =
          (plus[static_cast<std::size_t>(k)] - 2 * g0 + minus[static_cast<std::size_t>(k)]) / (s * s);
    }
    for (int k = 0; k < d; ++k)
      for (int l = k + 1; l < d; ++l) {
        const Vec ek = Vec::Unit(d, k), el = Vec::Unit(d, l);
        Mat v = (chart.metric(s * (ek + el)) - chart.metric(s * (ek - el)) - chart.metric(s * (el - ek)) +
                 chart.metric(-s * (ek + el))) /
                (4 * s * s);
        d2[static_cast<std::size_t>(k * d + l)] = v;
        d2[static_cast<std::size_t>(l * d + k)] = v;
      }
  };
  std::vector<Mat> a1, a2, b1, b2;
  derivs(h, a1, a2);
  derivs(h / 2, b1, b2);
  for (std::size_t i = 0; i < a1.size(); ++i) a1[i] = (4 * b1[i] - a1[i]) / 3;
  for (std::size_t i = 0; i < a2.size(); ++i) a2[i] = (4 * b2[i] - a2[i]) / 3;

  const Mat g0 = chart.metric(Vec::Zero(d));
  const Mat gi = g0.inverse();
  auto dg = [&](int l, int i, int j) { return a1[static_cast<std::size_t>(l)](i, j); };
  auto ddg = [&](int m, int l, int i, int j) { return a2[static_cast<std::size_t>(m * d + l)](i, j); };
  // Gamma^k_ij and d_m Gamma^k_ij at the origin.
  auto gamma_low = [&](int l, int i, int j) { return 0.5 * (dg(i, j, l) + dg(j, i, l) - dg(l, i, j)); };
  auto dgamma_low = [&](int m, int l, int i, int j) {
    return 0.5 * (ddg(m, i, j, l) + ddg(m, j, i, l) - ddg(m, l, i, j));
  };
  std::vector<double> gam(static_cast<std::size_t>(d * d * d), 0.0), dgam(static_cast<std::size_t>(d * d * d * d), 0.0);
  auto G3 = [&](int k, int i, int j) -> double& { return gam[static_cast<std::size_t>((k * d + i) * d + j)]; };
  auto D4 = [&](int m, int k, int i, int j) -> double& {
    return dgam[static_cast<std::size_t>(((m * d + k) * d + i) * d + j)];
  };
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int l = 0; l < d; ++l) s += gi(k, l) * gamma_low(l, i, j);
        G3(k, i, j) = s;
      }
  for (int m = 0; m < d; ++m) {
    Mat dgi = -gi * a1[static_cast<std::size_t>(m)] * gi;
    for (int k = 0; k < d; ++k)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double s = 0.0;
          for (int l = 0; l < d; ++l) s += dgi(k, l) * gamma_low(l, i, j) + gi(k, l) * dgamma_low(m, l, i, j);
          D4(m, k, i, j) = s;
        }
  }
  Mat ric = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        s += D4(k, k, i, j) - D4(j, k, k, i);
        for (int l = 0; l < d; ++l) s += G3(k, k, l) * G3(l, i, j) - G3(k, j, l) * G3(l, k, i);
      }
      ric(i, j) = s;
    }
  return symmetrized(ric);
}

// ---------------------------------------------------------------------------
// Geodesics and distances inside the chart
// ---------------------------------------------------------------------------

struct ChartShot {
  bool ok = false;
  Vec x1;
  Vec v1;
};

struct ChartBvp {
  bool ok = false;
  Vec v;            // initial velocity (unit time parametrization)
  double length = 0.0;
  Vec v_end;        // velocity at the endpoint
  int iterations = 0;
};

class ChartGeodesics {
 public:
  explicit ChartGeodesics(const InvariantMetric& g, double rtol = 1e-10) : chart_(g), rtol_(rtol) {}

  const Chart& chart() const { return chart_; }

  ChartShot shoot(const Vec& p, const Vec& v) const {
    const int d = chart_.dim();
    Vec y0(2 * d);
    y0 << p, v;
    OdeRhs rhs = [&](double, const Vec& y, Vec& dy) {
      dy.resize(2 * d);
      const Vec x = y.head(d);
      if (!(x.norm() < chart_.radius())) {
        dy.setConstant(std::numeric_limits<double>::quiet_NaN());
        return;
      }
      dy.head(d) = y.tail(d);
      dy.tail(d) = chart_.acceleration(x, y.tail(d));
    };
    OdeControls ctl;
    ctl.rtol = rtol_;
    ctl.atol = 1e-12;
    ctl.max_steps = 5000;
    ChartShot out;
    try {
      auto res = dopri5(rhs, 0.0, y0, 1.0, ctl);
      if (res.status != OdeStatus::completed) return out;
      out.x1 = res.y_last.head(d);
      out.v1 = res.y_last.tail(d);
      out.ok = out.x1.allFinite() && out.x1.norm() < chart_.radius();
    } catch (const DomainError&) {
      out.ok = false;
    }
    return out;
  }

  /// Geodesic from p to q by shooting with Newton steps on the initial
  /// velocity (finite-difference Jacobian, backtracking).
  /// Candidate velocities longer than `max_length` (in g) count as failed shots.
  ChartBvp solve(const Vec& p, const Vec& q, const Vec& v_guess, double tol = 1e-6, int max_iter = 40,
                 double max_length = std::numeric_limits<double>::infinity()) const {
    const int d = chart_.dim();
    ChartBvp out;
    const Mat gp = chart_.metric(p);
    auto shoot = [&](const Vec& pp, const Vec& vv) {
      if (std::sqrt(std::max(0.0, vv.dot(gp * vv))) > max_length) return ChartShot{};
      return this->shoot(pp, vv);
    };
    Vec v = v_guess;
    ChartShot s = shoot(p, v);
    if (!s.ok) {
      v = q - p;
      s = shoot(p, v);
      if (!s.ok) return out;
    }
    Vec res = s.x1 - q;
    auto fd_jacobian = [&](Mat& jac) {
      const double hstep = 1e-6 * std::max(1.0, v.norm());
      for (int k = 0; k < d; ++k) {
        Vec vk = v + hstep * Vec::Unit(d, k);
        ChartShot sk = shoot(p, vk);
        if (sk.ok) {
          jac.col(k) = (sk.x1 - s.x1) / hstep;
          continue;
        }
        vk = v - hstep * Vec::Unit(d, k);
        sk = shoot(p, vk);
        if (!sk.ok) return false;
        jac.col(k) = (s.x1 - sk.x1) / hstep;
      }
      return true;
    };
    // Newton with a finite-difference Jacobian, then Broyden updates; a fresh
    // Jacobian is taken whenever the updated one fails to reduce the residual.
    Mat jac(d, d);
    bool fresh = fd_jacobian(jac);
    if (!fresh) return out;
    for (int it = 0; it < max_iter; ++it) {
      out.iterations = it;
      if (res.norm() < tol) {
        out.ok = true;
        break;
      }
      const Vec dv = jac.colPivHouseholderQr().solve(-res);
      double lam = 1.0;
      bool improved = false;
      for (int bt = 0; bt < (fresh ? 10 : 2); ++bt) {
        const Vec vn = v + lam * dv;
        ChartShot sn = shoot(p, vn);
        if (sn.ok && (sn.x1 - q).norm() < res.norm()) {
          const Vec step = vn - v;
          const Vec dres = (sn.x1 - q) - res;
          jac += (dres - jac * step) * step.transpose() / step.squaredNorm();
          v = vn;
          s = sn;
          res = sn.x1 - q;
          improved = true;
          break;
        }
        lam *= 0.5;
      }
      if (improved) {
        fresh = false;
        continue;
      }
      if (fresh) break;
      if (!fd_jacobian(jac)) break;
      fresh = true;
    }
    if (!out.ok && res.norm() < tol) out.ok = true;
    if (out.ok) {
      out.v = v;
      out.v_end = s.v1;
      out.length = std::sqrt(std::max(0.0, v.dot(gp * v)));
    }
    return out;
  }

 private:
  Chart chart_;
  double rtol_;
};

// ---------------------------------------------------------------------------
// Geometric models
// ---------------------------------------------------------------------------

struct GridSpec {
  int radial_points = 40;
  int directions = 0;  // 0: 60 for dim <= 3, 120 otherwise
  double radius = kPi - 0.05;
  std::uint64_t seed = 0x5EED;
  double rtol = 1e-10;
};

inline int default_direction_count(int dim) { return dim <= 3 ? 60 : 120; }

/// Chebyshev-Gauss nodes on (0, radius].
inline std::vector<double> radial_nodes(int n, double radius) {
  std::vector<double> r(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j)
    r[static_cast<std::size_t>(j - 1)] = 0.5 * radius * (1.0 - std::cos((2.0 * j - 1.0) * kPi / (2.0 * n)));
  return r;
}

/// Fixed-seed quasi-uniform unit vectors.
inline std::vector<Vec> sphere_directions(int dim, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Vec> out;
  if (dim == 1) {
    out.push_back(Vec::Constant(1, 1.0));
    out.push_back(Vec::Constant(1, -1.0));
    return out;
  }
  if (dim == 2) {
    const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * kPi / count)(rng);
    for (int i = 0; i < count; ++i) {
      const double a = phase + 2.0 * kPi * i / count;
      Vec u(2);
      u << std::cos(a), std::sin(a);
      out.push_back(u);
    }
    return out;
  }
  if (dim == 3) {
    Mat rnd(3, 3);
    for (int i = 0; i < 9; ++i) rnd.data()[i] = normal(rng);
    Eigen::HouseholderQR<Mat> qr(rnd);
    Mat rot = qr.householderQ() * Mat::Identity(3, 3);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
      const double z = 1.0 - (2.0 * i + 1.0) / count;
      const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
      Vec u(3);
      u << rho * std::cos(golden * i), rho * std::sin(golden * i), z;
      out.push_back(rot * u);
    }
    return out;
  }
  for (int i = 0; i < count; ++i) {
    Vec u(dim);
    for (int k = 0; k < dim; ++k) u(k) = normal(rng);
    out.push_back(u.normalized());
  }
  // Repulsion sweeps with a shrinking step.
  for (int sweep = 0; sweep < 200; ++sweep) {
    const double step = 0.05 / (1.0 + 0.05 * sweep);
    std::vector<Vec> force(out.size(), Vec::Zero(dim));
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = 0; j < out.size(); ++j) {
        if (i == j) continue;
        Vec diff = out[i] - out[j];
        const double r = std::max(diff.norm(), 1e-6);
        force[i] += diff / std::pow(r, dim);
      }
    for (std::size_t i = 0; i < out.size(); ++i) {
      Vec f = force[i] - force[i].dot(out[i]) * out[i];
      const double fn = f.norm();
      if (fn > 0) out[i] = (out[i] + step * f / fn).normalized();
    }
  }
  return out;
}

/// Evaluates the model metric along the ray t -> t u at the given radii.
using RayFunction = std::function<std::vector<Mat>(const Vec& u, const std::vector<double>& radii)>;

struct GeometricModel {
  int dim = 0;
  GridSpec grid;
  std::vector<double> radii;
  std::vector<Vec> directions;
  std::vector<std::vector<Mat>> field;  // [direction][radius]
  double kappa = 1.0;                   // the model is built from kappa * g
  bool flat = false;
  Mat origin_frame;                     // g-orthonormal frame at o (m coordinates)
  double gauss_defect = 0.0;            // max |g~(x) u - u|
  double inner_euclidean_defect = 0.0;  // relative, innermost shell
  double reached_radius = 0.0;
  bool analytic = false;
  std::string kind;
  RayFunction ray;

  Mat at(const Vec& x) const {
    const double r = x.norm();
    if (r == 0.0) return Mat::Identity(dim, dim);
    return ray(x / r, {r})[0];
  }
};

namespace detail {

inline void finish_model(GeometricModel& model) {
  const auto nd = model.directions.size();
  model.field.assign(nd, {});
  parallel_for(nd, [&](std::size_t i) { model.field[i] = model.ray(model.directions[i], model.radii); });
  double gauss = 0.0, inner = 0.0;
  const Mat id = Mat::Identity(model.dim, model.dim);
  for (std::size_t i = 0; i < nd; ++i) {
    const Vec& u = model.directions[i];
    for (const Mat& g : model.field[i]) gauss = std::max(gauss, (g * u - u).cwiseAbs().maxCoeff());
    inner = std::max(inner, (model.field[i][0] - id).cwiseAbs().maxCoeff());
  }
  model.gauss_defect = gauss;
  model.inner_euclidean_defect = inner;
  model.reached_radius = model.radii.back();
}

}  // namespace detail

/// Jacobi-field shooter along geodesics from o, in the left-translated
/// g-orthonormal frame: xi' = -Lambda(xi) xi, j' = y - Lambda(xi) j,
/// y' = -Lambda(xi) y - R(j, xi) xi.
class FrameShooter {
 public:
  FrameShooter(const InvariantMetric& g, double kappa, double rtol) : d_(g.dim()), kappa_(kappa), rtol_(rtol) {
    const Mat p = inverse_sqrt_spd(g.G());
    const Mat pinv = sqrt_spd(g.G());
    frame_ = p;
    const auto conn = connection_map(g);
    const auto r = curvature_endomorphisms(g.space(), conn);
    lam_.resize(static_cast<std::size_t>(d_));
    for (int a = 0; a < d_; ++a) lam_[static_cast<std::size_t>(a)] = pinv * conn.lambda_of(p.col(a)) * p;
    curv_.assign(static_cast<std::size_t>(d_ * d_), Mat::Zero(d_, d_));
    for (int a = 0; a < d_; ++a)
      for (int b = 0; b < d_; ++b) {
        Mat acc = Mat::Zero(d_, d_);
        for (int i = 0; i < d_; ++i)
          for (int j = 0; j < d_; ++j) {
            const double c = p(i, a) * p(j, b);
            if (c != 0.0) acc += c * r[static_cast<std::size_t>(i * d_ + j)];
          }
        curv_[static_cast<std::size_t>(a * d_ + b)] = pinv * acc * p;
      }
  }

  const Mat& frame() const { return frame_; }

  /// Model metric at normalized radii along direction u (unit, frame coords).
  std::vector<Mat> ray(const Vec& u, const std::vector<double>& radii) const {
    const int d = d_;
    const double scale = 1.0 / std::sqrt(kappa_);
    double rmax = 0.0;
    for (double r : radii) rmax = std::max(rmax, r);
    std::vector<Mat> out;
    out.reserve(radii.size());
    if (rmax == 0.0) {
      for (std::size_t i = 0; i < radii.size(); ++i) out.push_back(Mat::Identity(d, d));
      return out;
    }
    const Eigen::Index n = d + 2 * d * d;
    Vec y0 = Vec::Zero(n);
    y0.head(d) = u;
    for (int i = 0; i < d; ++i) y0(d + d * d + i * d + i) = 1.0;  // y_i(0) = e_i
    OdeRhs rhs = [this, d](double, const Vec& y, Vec& dy) {
      dy.resize(y.size());
      const Vec xi = y.head(d);
      Mat l = Mat::Zero(d, d);
      for (int a = 0; a < d; ++a) l += xi(a) * lam_[static_cast<std::size_t>(a)];
      Mat k(d, d);  // k * j = R(j, xi) xi
      for (int a = 0; a < d; ++a) {
        Vec col = Vec::Zero(d);
        for (int b = 0; b < d; ++b) col += xi(b) * (curv_[static_cast<std::size_t>(a * d + b)] * xi);
        k.col(a) = col;
      }
      Eigen::Map<const Mat> jm(y.data() + d, d, d);
      Eigen::Map<const Mat> ym(y.data() + d + d * d, d, d);
      dy.head(d) = -l * xi;
      Eigen::Map<Mat>(dy.data() + d, d, d) = ym - l * jm;
      Eigen::Map<Mat>(dy.data() + d + d * d, d, d) = -l * ym - k * jm;
    };
    OdeControls ctl;
    ctl.rtol = rtol_;
    ctl.atol = 1e-13;
    auto res = dopri5(rhs, 0.0, y0, rmax * scale, ctl);
    if (res.status != OdeStatus::completed) throw NumericError("geodesic shooting failed");
    for (double r : radii) {
      if (r == 0.0) {
        out.push_back(Mat::Identity(d, d));
        continue;
      }
      const double s = r * scale;
      const Vec y = res.eval(s);
      Eigen::Map<const Mat> jm(y.data() + d, d, d);
      out.push_back(symmetrized(jm.transpose() * jm) / (s * s));
    }
    return out;
  }

 private:
  int d_;
  double kappa_;
  double rtol_;
  Mat frame_;
  std::vector<Mat> lam_;
  std::vector<Mat> curv_;
};

/// Normalization scale: max |sec|, or 1 for flat metrics.
inline double model_normalization(const InvariantMetric& g, bool* flat = nullptr) {
  const auto pkg = curvature_package(g);
  double kappa = std::max(std::abs(pkg.sec_min), std::abs(pkg.sec_max));
  const bool is_flat = kappa < 1e-14;
  if (flat) *flat = is_flat;
  return is_flat ? 1.0 : kappa;
}

inline GeometricModel build_model(const InvariantMetric& g, const GridSpec& spec = {}) {
  GeometricModel model;
  model.dim = g.dim();
  model.grid = spec;
  if (model.grid.directions <= 0) model.grid.directions = default_direction_count(model.dim);
  model.radii = radial_nodes(model.grid.radial_points, model.grid.radius);
  model.directions = sphere_directions(model.dim, model.grid.directions, model.grid.seed);
  model.kappa = model_normalization(g, &model.flat);
  auto shooter = std::make_shared<FrameShooter>(g, model.kappa, model.grid.rtol);
  model.origin_frame = shooter->frame();
  model.ray = [shooter](const Vec& u, const std::vector<double>& radii) { return shooter->ray(u, radii); };
  model.kind = "shooter";
  detail::finish_model(model);
  return model;
}

/// Closed-form model of R^s x S^k(K): `flat_dirs` (dim x s, orthonormal)
/// spans the Euclidean factor, K > 0 is the sphere curvature in model units.
inline GeometricModel product_model(int dim, const Mat& flat_dirs, double K, const GridSpec& spec = {}) {
  GeometricModel model;
  model.dim = dim;
  model.grid = spec;
  if (model.grid.directions <= 0) model.grid.directions = default_direction_count(dim);
  model.radii = radial_nodes(model.grid.radial_points, model.grid.radius);
  model.directions = sphere_directions(dim, model.grid.directions, model.grid.seed);
  model.kappa = 1.0;
  model.flat = flat_dirs.cols() == dim;
  model.origin_frame = Mat::Identity(dim, dim);
  const Mat pflat = flat_dirs * flat_dirs.transpose();
  const Mat pperp = Mat::Identity(dim, dim) - pflat;
  model.ray = [pflat, pperp, K, dim](const Vec& u, const std::vector<double>& radii) {
    std::vector<Mat> out;
    out.reserve(radii.size());
    for (double r : radii) {
      const Vec y = pperp * (r * u);
      const double rho = y.norm();
      Mat g = pflat;
      if (rho < 1e-300) {
        g += pperp;
      } else {
        const Vec yh = y / rho;
        const double sr = std::sqrt(K) * rho;
        const double f = sr < 1e-8 ? 1.0 - sr * sr / 3.0 : std::sin(sr) * std::sin(sr) / (sr * sr);
        g += yh * yh.transpose() + f * (pperp - yh * yh.transpose());
      }
      out.push_back(g);
    }
    (void)dim;
    return out;
  };
  model.analytic = true;
  model.kind = "closed_form_product";
  detail::finish_model(model);
  return model;
}

// ---------------------------------------------------------------------------
// Model comparison up to gauge
// ---------------------------------------------------------------------------

struct CompareOptions {
  int order = 0;
  double radius = kPi - 0.1;
  int iterations = 50;
  double tol = 1e-10;
  double floor = 1e-9;  // values below this are shooting noise; refinement stops
  double fd_step = 1e-2;
  double derivative_min_radius = 0.1;
};

struct CompareResult {
  double value = 0.0;           // C^k distance at the optimized gauge
  double c0 = 0.0;              // C^0 part at the optimized gauge
  double initial_c0 = 0.0;      // after alignment, before refinement
  Mat rotation;                 // gauge acting on the rotated model
  bool flagged = false;         // refinement hit its iteration cap
  int iterations = 0;
  int order = 0;
  bool swapped = false;         // arguments were reordered canonically
};

namespace detail {

inline double model_checksum(const GeometricModel& m) {
  double s = 0.0;
  double w = 1.0;
  for (const auto& dir : m.field)
    for (const Mat& g : dir) {
      s += w * g.sum();
      w = w * 1.000001 + 1e-3;
    }
  return s;
}

/// Averaged second-order shell term, diagonalized: a curvature fingerprint
/// used to align frames.
inline Mat shell_curvature(const GeometricModel& m) {
  Mat c = Mat::Zero(m.dim, m.dim);
  const double r0 = m.radii.front();
  for (const auto& dir : m.field) c += (dir.front() - Mat::Identity(m.dim, m.dim)) / (r0 * r0);
  return symmetrized(c / static_cast<double>(m.field.size()));
}

inline Mat skew_from(const Vec& w, int d) {
  Mat s = Mat::Zero(d, d);
  int k = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      s(i, j) = w(k);
      s(j, i) = -w(k);
      ++k;
    }
  return s;
}

}  // namespace detail

/// Gauge-minimized C^k distance between two models. The reference grid is the
/// one of the model that is expensive to re-evaluate; the other model is
/// evaluated exactly at the rotated reference nodes.
inline CompareResult compare_models(const GeometricModel& first, const GeometricModel& second,
                                    const CompareOptions& opt = {}) {
  if (first.dim != second.dim) throw ShapeError("models have different dimensions");
  if (opt.order < 0 || opt.order > 2) throw ConfigError("comparison order must be 0, 1 or 2");
  // Canonical roles make the result independent of argument order.
  bool swap = false;
  if (first.analytic != second.analytic)
    swap = first.analytic;
  else
    swap = detail::model_checksum(first) > detail::model_checksum(second);
  const GeometricModel& ref = swap ? second : first;
  const GeometricModel& rot = swap ? first : second;
  const int d = ref.dim;

  std::vector<std::size_t> rad_idx;
  std::vector<double> rad_sub;
  for (std::size_t j = 0; j < ref.radii.size(); ++j)
    if (ref.radii[j] <= opt.radius) {
      rad_idx.push_back(j);
      rad_sub.push_back(ref.radii[j]);
    }
  const auto nd = ref.directions.size();

  auto c0_of = [&](const Mat& r) {
    std::vector<double> worst(nd, 0.0);
    parallel_for(nd, [&](std::size_t i) {
      const auto vals = rot.ray(r * ref.directions[i], rad_sub);
      double w = 0.0;
      for (std::size_t k = 0; k < rad_idx.size(); ++k)
        w = std::max(w, (ref.field[i][rad_idx[k]] - r.transpose() * vals[k] * r).cwiseAbs().maxCoeff());
      worst[i] = w;
    });
    return *std::max_element(worst.begin(), worst.end());
  };

  CompareResult out;
  out.order = opt.order;
  out.swapped = swap;

  // Alignment of the shell curvature eigenframes, all sign patterns.
  Eigen::SelfAdjointEigenSolver<Mat> ea(detail::shell_curvature(ref)), eb(detail::shell_curvature(rot));
  Mat best = Mat::Identity(d, d);
  double best_val = c0_of(best);
  for (int mask = 0; mask < (1 << d); ++mask) {
    Vec s(d);
    for (int k = 0; k < d; ++k) s(k) = (mask >> k) & 1 ? -1.0 : 1.0;
    const Mat r = eb.eigenvectors() * s.asDiagonal() * ea.eigenvectors().transpose();
    const double v = c0_of(r);
    if (v < best_val) {
      best_val = v;
      best = r;
    }
  }
  out.initial_c0 = best_val;

  // Pattern search over rotations best * exp(skew(w)).
  const int p = d * (d - 1) / 2;
  Vec w = Vec::Zero(p);
  double step = 0.05;
  int it = 0;
  for (; it < opt.iterations && step > opt.tol && best_val > opt.floor; ++it) {
    bool improved = false;
    for (int k = 0; k < p; ++k)
      for (double sgn : {1.0, -1.0}) {
        Vec trial = w;
        trial(k) += sgn * step;
        const Mat r = best * detail::skew_from(trial, d).exp();
        const double v = c0_of(r);
        if (v < best_val) {
          best_val = v;
          w = trial;
          improved = true;
        }
      }
    if (!improved) step *= 0.5;
  }
  out.iterations = it;
  out.flagged = it >= opt.iterations && step > opt.tol && best_val > opt.floor;
  const Mat r = best * detail::skew_from(w, d).exp();
  out.rotation = r;
  out.c0 = best_val;
  out.value = best_val;
  if (opt.order == 0) return out;

  // Derivatives in polar coordinates (r, angles) by central differences,
  // angular derivatives scaled by 1/r to Cartesian size.
  const double h = opt.fd_step;
  std::vector<std::size_t> didx;
  std::vector<double> drad;
  for (std::size_t k = 0; k < rad_sub.size(); ++k)
    if (rad_sub[k] >= opt.derivative_min_radius && rad_sub[k] + h <= ref.radii.back() + 1e-12) {
      didx.push_back(k);
      drad.push_back(rad_sub[k]);
    }
  std::vector<double> stencil_r;
  for (double x : drad) {
    stencil_r.push_back(x - h);
    stencil_r.push_back(x);
    stencil_r.push_back(x + h);
  }
  std::vector<double> worst(nd, 0.0);
  parallel_for(nd, [&](std::size_t i) {
    const Vec& u = ref.directions[i];
    const Mat tang = orthonormal_complement(u, Mat::Identity(d, d));
    const int q = d - 1;
    // Difference field on the stencil ray with angular offset a.
    auto diff_ray = [&](const Vec& a) {
      Vec dir = u + tang * a;
      dir.normalize();
      const auto va = ref.ray(dir, stencil_r);
      const auto vb = rot.ray(r * dir, stencil_r);
      std::vector<Mat> dd(va.size());
      for (std::size_t k = 0; k < va.size(); ++k) dd[k] = va[k] - r.transpose() * vb[k] * r;
      return dd;
    };
    const auto c = diff_ray(Vec::Zero(q));
    std::vector<std::vector<Mat>> plus(static_cast<std::size_t>(q)), minus(static_cast<std::size_t>(q));
    for (int k = 0; k < q; ++k) {
      plus[static_cast<std::size_t>(k)] = diff_ray(h * Vec::Unit(q, k));
      minus[static_cast<std::size_t>(k)] = diff_ray(-h * Vec::Unit(q, k));
    }
    double wmax = 0.0;
    auto upd = [&](const Mat& m, double scale) { wmax = std::max(wmax, m.cwiseAbs().maxCoeff() * scale); };
    for (std::size_t n = 0; n < drad.size(); ++n) {
      const double rr = drad[n];
      const std::size_t lo = 3 * n, mid = 3 * n + 1, hi = 3 * n + 2;
      upd((c[hi] - c[lo]) / (2 * h), 1.0);
      if (opt.order >= 2) upd((c[hi] - 2 * c[mid] + c[lo]) / (h * h), 1.0);
      for (int k = 0; k < q; ++k) {
        const auto& pk = plus[static_cast<std::size_t>(k)];
        const auto& mk = minus[static_cast<std::size_t>(k)];
        upd((pk[mid] - mk[mid]) / (2 * h), 1.0 / rr);
        if (opt.order >= 2) {
          upd((pk[mid] - 2 * c[mid] + mk[mid]) / (h * h), 1.0 / (rr * rr));
          upd((pk[hi] - pk[lo] - mk[hi] + mk[lo]) / (4 * h * h), 1.0 / rr);
        }
      }
    }
    if (opt.order >= 2)
      for (int k = 0; k < q; ++k)
        for (int l = k + 1; l < q; ++l) {
          const Vec ek = Vec::Unit(q, k), el = Vec::Unit(q, l);
          const auto pp = diff_ray(h * (ek + el)), pm = diff_ray(h * (ek - el));
          const auto mp = diff_ray(h * (el - ek)), mm = diff_ray(-h * (ek + el));
          for (std::size_t n = 0; n < drad.size(); ++n) {
            const std::size_t mid = 3 * n + 1;
            upd((pp[mid] - pm[mid] - mp[mid] + mm[mid]) / (4 * h * h), 1.0 / (drad[n] * drad[n]));
          }
        }
    worst[i] = wmax;
  });
  out.value = std::max(out.c0, *std::max_element(worst.begin(), worst.end()));
  return out;
}

// ---------------------------------------------------------------------------
// Defects of the quotient map by a torus
// ---------------------------------------------------------------------------

struct SubmersionOptions {
  int samples = 6;           // random point pairs besides the fiber probes
  std::uint64_t seed = 0x5EED;
  double sample_radius = 0.35;  // fraction of the chart radius
  double bvp_tol = 1e-6;
  int theta_grid = 6;
};

struct SubmersionDefects {
  double gh_eps = 0.0;   // lower estimate of the GH distortion
  double sub_eps = 0.0;  // horizontal length distortion of d(pi)
  double c2_eps = 0.0;   // max |Hess pi| on unit horizontal vectors
  double drop_rate = 0.0;
  bool gh_valid = true;
  int pairs_used = 0;
  double epsilon() const { return std::max({gh_eps, sub_eps, c2_eps}); }
};

/// Measures how far pi : G/H -> G/HT is from an isometry on distances and from
/// a Riemannian submersion, for an Ad(T)-invariant metric. By homogeneity one
/// endpoint of every sampled pair is the origin.
inline SubmersionDefects submersion_defects(const InvariantMetric& g, const TorusCertificate& torus,
                                            const SubmersionOptions& opt = {}) {
  if (torus_invariance_defect(g.space(), torus, g.G()) > kTorusInvarianceTol)
    throw PreconditionError("metric is not Ad(T)-invariant; symmetrize it over the torus first");
  SubmersionDefects out;
  const auto triple = metric_triple(g, torus);
  const int d = g.dim();
  const auto s = triple.t_m.cols();

  // d(pi) at o: Q-orthogonal projection onto the quotient complement.
  {
    const Mat horiz = triple.b_basis * inverse_sqrt_spd(triple.g_check);
    double worst = 0.0;
    for (Eigen::Index k = 0; k < horiz.cols(); ++k) {
      const Vec img = triple.base_in_m.transpose() * horiz.col(k);
      worst = std::max(worst, std::abs(1.0 - std::sqrt(img.dot(triple.g_check * img))));
    }
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> normal;
    for (int k = 0; k < 16 && horiz.cols() > 0; ++k) {
      Vec c(horiz.cols());
      for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = normal(rng);
      const Vec v = horiz * c.normalized();
      const Vec img = triple.base_in_m.transpose() * v;
      worst = std::max(worst, std::abs(1.0 - std::sqrt(img.dot(triple.g_check * img))));
    }
    out.sub_eps = worst;
  }
  if (s == 0) return out;
  out.c2_eps = oneill_data(g, torus).max_A_XU;

  const ChartGeodesics geo(g, 1e-9);
  const double R = g.space().chart_radius();
  std::vector<Vec> samples;
  // Fiber probes: points of the fiber through o.
  for (Eigen::Index k = 0; k < s; ++k) {
    const Vec v = triple.t_m.col(k);
    const double vq = v.norm();
    const double half = 0.5 * torus.group_periods[static_cast<std::size_t>(k)];
    const double reach = std::min(half, 0.9 * R / vq);
    samples.push_back(0.5 * reach * v);
    samples.push_back(reach * v);
  }
  const std::size_t fiber_probes = samples.size();
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.3, 1.0);
  for (int k = 0; k < opt.samples; ++k) {
    Vec y(d);
    for (int i = 0; i < d; ++i) y(i) = normal(rng);
    samples.push_back(y.normalized() * (opt.sample_radius * R * unif(rng)));
  }

  // Angular search range for each torus generator.
  std::vector<double> theta_max(static_cast<std::size_t>(s));
  for (Eigen::Index k = 0; k < s; ++k) {
    const double vq = triple.t_m.col(k).norm();
    theta_max[static_cast<std::size_t>(k)] =
        std::min(0.5 * torus.group_periods[static_cast<std::size_t>(k)], 0.9 * R / vq);
  }

  std::vector<double> defect(samples.size(), 0.0);
  std::vector<int> ok(samples.size(), 0);
  parallel_for(samples.size(), [&](std::size_t idx) {
    const Vec& y = samples[idx];
    const Vec zero = Vec::Zero(d);
    const auto direct = geo.solve(zero, y, y, opt.bvp_tol);
    if (!direct.ok) return;
    if (idx < fiber_probes) {
      // The probe lies on the fiber through o: its base distance is zero.
      defect[idx] = direct.length;
      ok[idx] = 1;
      return;
    }
    // Base distance: min over the fiber of d(exp(-Y) o, exp(theta V) o).
    const Vec p = -y;
    // A minimizing geodesic is no longer than the path through o.
    const Mat g0 = g.G();
    auto cap = [&](const Vec& th) {
      const Vec w = triple.t_m * th;
      return 1.5 * (direct.length + std::sqrt(std::max(0.0, w.dot(g0 * w)))) + 1e-9;
    };
    auto fiber_point = [&](const Vec& th) { return Vec(triple.t_m * th); };
    double best = std::numeric_limits<double>::infinity();
    Vec best_th = Vec::Zero(s);
    Vec warm = fiber_point(Vec::Zero(s)) - p;
    const int n = opt.theta_grid;
    // Coarse product grid over the torus angles.
    long total = 1;
    for (Eigen::Index k = 0; k < s; ++k) total *= n;
    for (long code = 0; code < total; ++code) {
      Vec th(s);
      long c = code;
      for (Eigen::Index k = 0; k < s; ++k) {
        const double tm = theta_max[static_cast<std::size_t>(k)];
        th(k) = -tm + 2.0 * tm * static_cast<double>(c % n) / static_cast<double>(n - 1);
        c /= n;
      }
      const Vec q = fiber_point(th);
      const auto b = geo.solve(p, q, q - p, opt.bvp_tol, 40, cap(th));
      if (b.ok && b.length < best) {
        best = b.length;
        best_th = th;
        warm = b.v;
      }
    }
    if (!std::isfinite(best)) return;
    // Secant iterations on dL/dtheta_k = g~(q)(x'(1), V_k) / L, coordinatewise.
    auto slope = [&](const Vec& th, Eigen::Index k, double& len, Vec& vwarm) -> std::optional<double> {
      const Vec q = fiber_point(th);
      const auto b = geo.solve(p, q, vwarm, opt.bvp_tol, 40, cap(th));
      if (!b.ok || b.length <= 0.0) return std::nullopt;
      len = b.length;
      vwarm = b.v;
      return b.v_end.dot(geo.chart().metric(q) * triple.t_m.col(k)) / b.length;
    };
    for (int sweep = 0; sweep < 2; ++sweep)
      for (Eigen::Index k = 0; k < s; ++k) {
        const double tm = theta_max[static_cast<std::size_t>(k)];
        const double h0 = 2.0 * tm / (n - 1);
        Vec th0 = best_th;
        Vec w0 = warm;
        double l0 = best;
        auto f0 = slope(th0, k, l0, w0);
        if (!f0) continue;
        Vec th1 = th0;
        th1(k) = std::clamp(th0(k) - (*f0 > 0 ? 0.25 : -0.25) * h0, -tm, tm);
        Vec w1 = w0;
        double l1 = l0;
        auto f1 = slope(th1, k, l1, w1);
        for (int it = 0; it < 12 && f1; ++it) {
          if (l1 < best) {
            best = l1;
            best_th = th1;
            warm = w1;
          }
          if (std::abs(*f1) < 1e-9 || std::abs(th1(k) - th0(k)) < 1e-10) break;
          const double denom = *f1 - *f0;
          if (denom == 0.0) break;
          Vec th2 = th1;
          th2(k) = std::clamp(th1(k) - *f1 * (th1(k) - th0(k)) / denom, -tm, tm);
          th0 = th1;
          f0 = f1;
          th1 = th2;
          f1 = slope(th1, k, l1, w1);
        }
      }
    defect[idx] = std::abs(direct.length - best);
    ok[idx] = 1;
  });
  int used = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (ok[i]) {
      ++used;
      out.gh_eps = std::max(out.gh_eps, defect[i]);
    }
  out.pairs_used = used;
  out.drop_rate = 1.0 - static_cast<double>(used) / static_cast<double>(samples.size());
  out.gh_valid = out.drop_rate <= 0.2;
  return out;
}

}  // namespace hrf
