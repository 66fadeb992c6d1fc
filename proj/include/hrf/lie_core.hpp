#pragma once

// Compact Lie-algebra data, reductive splittings g = h + m, the trivial
// submodule m0 and torus subalgebras of m0.

#include "hrf/core.hpp"

#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace hrf {

/// Structure-constant entry [e_i, e_j] += value * e_k (0-based).
struct StructureEntry {
  int i = 0;
  int j = 0;
  int k = 0;
  double value = 0.0;
};

/// Finite-dimensional real Lie algebra with an inner product Q.
/// The bracket is stored densely: c(i, j, k) with [e_i, e_j] = sum_k c(i,j,k) e_k.
class LieAlgebraData {
 public:
  LieAlgebraData() = default;

  /// Dense constructor; `c` has dim^3 entries laid out as c[(i*dim + j)*dim + k].
  LieAlgebraData(int dim, std::vector<double> c, Mat q, std::vector<std::string> labels = {})
      : dim_(dim), c_(std::move(c)), q_(std::move(q)), labels_(std::move(labels)) {
    if (dim_ < 1) throw ShapeError("dim must be >= 1");
    const auto n = static_cast<std::size_t>(dim_);
    if (c_.size() != n * n * n)
      throw ShapeError("structure array must have dim^3 = " + std::to_string(n * n * n) +
                       " entries, got " + std::to_string(c_.size()));
    if (q_.rows() != dim_ || q_.cols() != dim_) throw ShapeError("Q must be dim x dim");
    if (labels_.empty())
      for (int i = 0; i < dim_; ++i) labels_.push_back("e" + std::to_string(i + 1));
    if (static_cast<int>(labels_.size()) != dim_) throw ShapeError("need one label per basis vector");
    build_ad();
  }

  /// Builds the dense array from i<j entries, filling the antisymmetric partner.
  static LieAlgebraData from_entries(int dim, const std::vector<StructureEntry>& entries,
                                     std::optional<Mat> q = std::nullopt,
                                     std::vector<std::string> labels = {}) {
    if (dim < 1) throw ShapeError("dim must be >= 1");
    const auto n = static_cast<std::size_t>(dim);
    std::vector<double> c(n * n * n, 0.0);
    for (const auto& e : entries) {
      if (e.i < 0 || e.j < 0 || e.k < 0 || e.i >= dim || e.j >= dim || e.k >= dim)
        throw ShapeError("structure index out of range");
      if (e.i >= e.j) throw ShapeError("structure entries must satisfy i < j");
      c[(e.i * n + e.j) * n + e.k] = e.value;
      c[(e.j * n + e.i) * n + e.k] = -e.value;
    }
    return LieAlgebraData(dim, std::move(c), q ? *q : Mat::Identity(dim, dim), std::move(labels));
  }

  int dim() const { return dim_; }
  const Mat& Q() const { return q_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<double>& structure() const { return c_; }

  double c(int i, int j, int k) const {
    const auto n = static_cast<std::size_t>(dim_);
    return c_[(static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)) * n +
              static_cast<std::size_t>(k)];
  }

  /// Matrix of ad(e_i): column j holds [e_i, e_j].
  const Mat& ad(int i) const { return ad_[static_cast<std::size_t>(i)]; }

  Mat ad_of(const Vec& x) const {
    Mat out = Mat::Zero(dim_, dim_);
    for (int i = 0; i < dim_; ++i)
      if (x(i) != 0.0) out += x(i) * ad_[static_cast<std::size_t>(i)];
    return out;
  }

  Vec bracket(const Vec& x, const Vec& y) const { return ad_of(x) * y; }

  double q_norm(const Vec& x) const { return std::sqrt(std::max(0.0, x.dot(q_ * x))); }

  /// Killing form B(X, Y) = tr(ad X ad Y) in the given basis.
  Mat killing_form() const {
    Mat b(dim_, dim_);
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j) b(i, j) = (ad(i) * ad(j)).trace();
    return b;
  }

 private:
  void build_ad() {
    ad_.assign(static_cast<std::size_t>(dim_), Mat::Zero(dim_, dim_));
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j)
        for (int k = 0; k < dim_; ++k) ad_[static_cast<std::size_t>(i)](k, j) = c(i, j, k);
  }

  int dim_ = 0;
  std::vector<double> c_;
  Mat q_;
  std::vector<std::string> labels_;
  std::vector<Mat> ad_;
};

struct ValidationReport {
  double antisymmetry_defect = 0.0;
  double jacobi_defect = 0.0;
  double ad_invariance_defect = 0.0;
  double q_symmetry_defect = 0.0;
  double q_min_eigenvalue = 0.0;
  double tolerance = 1e-12;
  bool pass = false;

  std::string summary() const {
    std::ostringstream os;
    os << (pass ? "pass" : "fail") << " (antisymmetry " << antisymmetry_defect << ", jacobi "
       << jacobi_defect << ", ad-invariance " << ad_invariance_defect << ", Q min eig "
       << q_min_eigenvalue << ")";
    return os.str();
  }
};

/// Checks antisymmetry, the Jacobi identity and Ad-invariance of Q, reporting
/// the worst defect of each.
inline ValidationReport validate_structure(const LieAlgebraData& data, double tol = 1e-12) {
  ValidationReport r;
  r.tolerance = tol;
  const int n = data.dim();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        r.antisymmetry_defect =
            std::max(r.antisymmetry_defect, std::abs(data.c(i, j, k) + data.c(j, i, k)));

  // Jacobi: [[e_i,e_j],e_k] + [[e_j,e_k],e_i] + [[e_k,e_i],e_j] = 0, per component.
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        for (int m = 0; m < n; ++m) {
          double s = 0.0;
          for (int l = 0; l < n; ++l)
            s += data.c(i, j, l) * data.c(l, k, m) + data.c(j, k, l) * data.c(l, i, m) +
                 data.c(k, i, l) * data.c(l, j, m);
          r.jacobi_defect = std::max(r.jacobi_defect, std::abs(s));
        }

  // Q([e_i,e_k], e_j) + Q(e_i, [e_j,e_k]) = 0.
  const Mat& q = data.Q();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        double s = 0.0;
        for (int l = 0; l < n; ++l) s += data.c(i, k, l) * q(l, j) + q(i, l) * data.c(j, k, l);
        r.ad_invariance_defect = std::max(r.ad_invariance_defect, std::abs(s));
      }
  r.q_symmetry_defect = (q - q.transpose()).cwiseAbs().maxCoeff();
  r.q_min_eigenvalue = min_eigenvalue(q);
  r.pass = r.antisymmetry_defect <= tol && r.jacobi_defect <= tol &&
           r.ad_invariance_defect <= tol && r.q_symmetry_defect <= tol && r.q_min_eigenvalue > 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Homogeneous spaces
// ---------------------------------------------------------------------------

/// Reductive homogeneous-space data at the origin.
///
/// Vectors of g are coefficient vectors in the algebra basis. Vectors of m are
/// coordinates in the Q-orthonormal basis stored in the columns of `m()`.
class HomogeneousSpaceData {
 public:
  const LieAlgebraData& algebra() const { return algebra_; }
  const std::vector<Vec>& h_basis() const { return h_basis_; }
  /// Q-orthonormal basis of h (columns, algebra coordinates).
  const Mat& h() const { return h_; }
  /// Q-orthonormal basis of m (columns, algebra coordinates).
  const Mat& m() const { return m_; }
  /// Orthonormal basis of m0 in m coordinates.
  const Mat& m0() const { return m0_; }
  /// ad(h)|_m in m coordinates, one per h_basis vector.
  const std::vector<Mat>& isotropy_maps() const { return isotropy_; }
  std::optional<double> diam_Q() const { return diam_q_; }
  double chart_radius() const { return chart_radius_; }
  double reductivity_defect() const { return reductivity_defect_; }
  int dim_m() const { return static_cast<int>(m_.cols()); }
  int dim_h() const { return static_cast<int>(h_.cols()); }

  /// m-coordinates of [m_a, m_b]_m.
  double bracket_m(int a, int b, int c) const {
    const auto d = static_cast<std::size_t>(dim_m());
    return cm_[(static_cast<std::size_t>(a) * d + static_cast<std::size_t>(b)) * d +
               static_cast<std::size_t>(c)];
  }
  /// ad([m_a, m_b]_h) restricted to m, in m coordinates.
  const Mat& isotropy_of_bracket(int a, int b) const {
    return hterm_[static_cast<std::size_t>(a) * static_cast<std::size_t>(dim_m()) +
                  static_cast<std::size_t>(b)];
  }

  /// [x, y]_m for m-coordinate vectors.
  Vec bracket_in_m(const Vec& x, const Vec& y) const {
    const int d = dim_m();
    Vec out = Vec::Zero(d);
    for (int a = 0; a < d; ++a) {
      if (x(a) == 0.0) continue;
      for (int b = 0; b < d; ++b) {
        if (y(b) == 0.0) continue;
        for (int c = 0; c < d; ++c) out(c) += x(a) * y(b) * bracket_m(a, b, c);
      }
    }
    return out;
  }

  /// m coordinates of an algebra vector (Q-orthogonal projection to m).
  Vec to_m(const Vec& x) const { return m_.transpose() * algebra_.Q() * x; }
  Vec from_m(const Vec& x) const { return m_ * x; }
  /// Q-distance from m of an algebra vector.
  double distance_from_m(const Vec& x) const { return algebra_.q_norm(x - m_ * to_m(x)); }

  /// ad(x)|_m in m coordinates, for algebra vectors x normalizing m.
  Mat ad_on_m(const Vec& x) const { return m_.transpose() * algebra_.Q() * algebra_.ad_of(x) * m_; }

  void set_diam_Q(double d) { diam_q_ = d; }
  void set_chart_radius(double r) { chart_radius_ = r; }

 private:
  friend std::shared_ptr<const HomogeneousSpaceData> reductive_split(
      const LieAlgebraData&, const std::vector<Vec>&, std::optional<double>, double);

  LieAlgebraData algebra_;
  std::vector<Vec> h_basis_;
  Mat h_, m_, m0_;
  std::vector<Mat> isotropy_;
  std::optional<double> diam_q_;
  double chart_radius_ = 2.0 * kPi;
  double reductivity_defect_ = 0.0;
  std::vector<double> cm_;
  std::vector<Mat> hterm_;
};

using SpacePtr = std::shared_ptr<const HomogeneousSpaceData>;

inline constexpr double kSubalgebraTol = 1e-10;
inline constexpr double kKernelTol = 1e-10;

/// Splits g = h + m with m the Q-orthogonal complement of span(h_basis), and
/// extracts the trivial submodule m0 as the joint kernel of ad(h)|_m.
inline SpacePtr reductive_split(const LieAlgebraData& data, const std::vector<Vec>& h_basis,
                                std::optional<double> diam_q = std::nullopt,
                                double chart_radius = 2.0 * kPi) {
  const auto report = validate_structure(data);
  if (!report.pass) throw AlgebraError("Lie algebra data failed validation: " + report.summary());
  const int n = data.dim();
  const Mat& q = data.Q();
  for (const Vec& v : h_basis)
    if (v.size() != n) throw ShapeError("h_basis vectors must have dim entries");

  auto space = std::make_shared<HomogeneousSpaceData>();
  space->algebra_ = data;
  space->h_basis_ = h_basis;
  space->diam_q_ = diam_q;
  space->chart_radius_ = chart_radius;

  const auto k = static_cast<Eigen::Index>(h_basis.size());
  Mat hraw(n, k);
  for (Eigen::Index i = 0; i < k; ++i) hraw.col(i) = h_basis[static_cast<std::size_t>(i)];
  if (k > 0) {
    const double gram_min = min_eigenvalue(hraw.transpose() * q * hraw);
    const double gram_max = max_eigenvalue(hraw.transpose() * q * hraw);
    if (gram_min <= 1e-10 * std::max(1.0, gram_max))
      throw NumericError("h_basis is degenerate; cannot form a Q-nondegenerate split");
    space->h_ = hraw * inverse_sqrt_spd(hraw.transpose() * q * hraw);
  } else {
    space->h_ = Mat(n, 0);
  }
  const Mat& h = space->h_;

  // Closure of h under the bracket.
  double closure = 0.0;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) {
      Vec br = data.bracket(h.col(i), h.col(j));
      Vec out = br - h * (h.transpose() * q * br);
      closure = std::max(closure, data.q_norm(out));
    }
  if (closure > kSubalgebraTol)
    throw AlgebraError("h_basis does not span a subalgebra (closure defect " +
                       std::to_string(closure) + ")");

  space->m_ = orthonormal_complement(h, q);
  const Mat& m = space->m_;
  const int d = static_cast<int>(m.cols());

  // Isotropy maps and reductivity.
  double red = 0.0;
  for (const Vec& hv : h_basis) {
    Mat adh = data.ad_of(hv);
    Mat img = adh * m;
    Mat in_h = h * (h.transpose() * q * img);
    for (int b = 0; b < d; ++b) red = std::max(red, data.q_norm(in_h.col(b)));
    space->isotropy_.push_back(m.transpose() * q * img);
  }
  space->reductivity_defect_ = red;
  if (red > kSubalgebraTol) throw AlgebraError("[h, m] is not contained in m");

  // m0 = joint kernel of the isotropy maps.
  if (space->isotropy_.empty()) {
    space->m0_ = Mat::Identity(d, d);
  } else {
    Mat stack(static_cast<Eigen::Index>(space->isotropy_.size()) * d, d);
    for (std::size_t i = 0; i < space->isotropy_.size(); ++i)
      stack.block(static_cast<Eigen::Index>(i) * d, 0, d, d) = space->isotropy_[i];
    Eigen::JacobiSVD<Mat> svd(stack, Eigen::ComputeFullV);
    const Vec& sv = svd.singularValues();
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv(i) >= kKernelTol) ++rank;
    Mat row_space = svd.matrixV().leftCols(rank);
    space->m0_ = orthonormal_complement(row_space, Mat::Identity(d, d));
  }

  // Bracket tables in m coordinates.
  space->cm_.assign(static_cast<std::size_t>(d * d * d), 0.0);
  space->hterm_.assign(static_cast<std::size_t>(d * d), Mat::Zero(d, d));
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      Vec br = data.bracket(m.col(a), m.col(b));
      Vec cm = m.transpose() * q * br;
      for (int c = 0; c < d; ++c)
        space->cm_[static_cast<std::size_t>((a * d + b) * d + c)] = cm(c);
      if (k > 0) {
        Vec hpart = h * (h.transpose() * q * br);
        if (hpart.norm() > 0.0)
          space->hterm_[static_cast<std::size_t>(a * d + b)] =
              m.transpose() * q * data.ad_of(hpart) * m;
      }
    }
  return space;
}

// ---------------------------------------------------------------------------
// Tori
// ---------------------------------------------------------------------------

struct Rational {
  long p = 0;
  long q = 1;
};

/// Best rational approximation with denominator <= max_den (continued fractions).
inline Rational best_rational(double x, long max_den) {
  long p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double r = x;
  for (int it = 0; it < 64; ++it) {
    const double a = std::floor(r);
    const long ai = static_cast<long>(a);
    const long p2 = ai * p1 + p0, q2 = ai * q1 + q0;
    if (q2 > max_den) break;
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    const double frac = r - a;
    if (frac < 1e-14) break;
    r = 1.0 / frac;
  }
  if (q1 == 0) return {static_cast<long>(std::llround(x)), 1};
  return {p1, q1};
}

inline constexpr long kMaxPeriodDenominator = 64;

/// Distinct positive rotation frequencies of a Q-skew endomorphism of g.
inline std::vector<double> rotation_frequencies(const Mat& ad, const Mat& q) {
  Mat qh = sqrt_spd(q), qih = inverse_sqrt_spd(q);
  Mat s = qh * ad * qih;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(-s * s), Eigen::EigenvaluesOnly);
  std::vector<double> out;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double w2 = es.eigenvalues()(i);
    if (w2 <= 1e-20) continue;
    const double w = std::sqrt(w2);
    bool dup = false;
    for (double o : out)
      if (std::abs(o - w) <= 1e-8 * std::max(1.0, w)) dup = true;
    if (!dup) out.push_back(w);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct PeriodInfo {
  std::optional<double> period;  // of Ad(exp(theta V)) on g
  bool trivial_action = false;
  int closure_dim = 1;  // dimension of the closure of the generated group in Ad(G)
  std::vector<double> frequencies;
};

inline PeriodInfo adjoint_period(const Mat& ad, const Mat& q) {
  PeriodInfo info;
  info.frequencies = rotation_frequencies(ad, q);
  if (info.frequencies.empty()) {
    info.trivial_action = true;
    info.closure_dim = 0;
    return info;
  }
  const double w0 = info.frequencies.front();
  long lcm_den = 1;
  std::vector<Rational> ratios;
  bool commensurable = true;
  for (double w : info.frequencies) {
    const double ratio = w / w0;
    Rational r = best_rational(ratio, kMaxPeriodDenominator);
    if (std::abs(ratio - static_cast<double>(r.p) / static_cast<double>(r.q)) > 1e-9 * ratio) {
      commensurable = false;
      break;
    }
    ratios.push_back(r);
    lcm_den = std::lcm(lcm_den, r.q);
  }
  if (commensurable) {
    long g = 0;
    for (const auto& r : ratios) g = std::gcd(g, r.p * (lcm_den / r.q));
    const double fundamental = w0 * static_cast<double>(g) / static_cast<double>(lcm_den);
    info.period = 2.0 * kPi / fundamental;
    info.closure_dim = 1;
    return info;
  }
  // Incommensurable: count rationally independent classes (greedy).
  std::vector<double> reps;
  for (double w : info.frequencies) {
    bool found = false;
    for (double rep : reps) {
      const double ratio = w / rep;
      Rational r = best_rational(ratio, kMaxPeriodDenominator);
      if (std::abs(ratio - static_cast<double>(r.p) / static_cast<double>(r.q)) <= 1e-9 * ratio)
        found = true;
    }
    if (!found) reps.push_back(w);
  }
  info.closure_dim = static_cast<int>(reps.size());
  return info;
}

inline constexpr double kTorusTol = 1e-10;

/// Certificate that span(t_basis) is an abelian subalgebra of m0.
struct TorusCertificate {
  std::vector<Vec> t_basis;  // algebra coordinates
  Mat t_m;                   // m coordinates, one column per generator
  double pairwise_bracket_norm = 0.0;
  double containment_defect = 0.0;
  double independence = 0.0;  // smallest singular value of the Q-Gram matrix square root
  std::vector<PeriodInfo> adjoint;
  /// Period of theta -> exp(theta V_i) acting on M; used for fiber lengths.
  /// Defaults to the adjoint period; central directions default to 2*pi.
  std::vector<double> group_periods;

  int dim() const { return static_cast<int>(t_basis.size()); }
  bool abelian() const { return pairwise_bracket_norm <= kTorusTol; }
  bool contained() const { return containment_defect <= kTorusTol; }
  bool passes() const { return abelian() && contained(); }
  /// True when every generator has a closing adjoint one-parameter group.
  bool has_periods() const {
    for (const auto& a : adjoint)
      if (!a.trivial_action && !a.period) return false;
    return true;
  }
  /// Angular range used for averaging over generator i.
  double averaging_period(std::size_t i) const {
    const auto& a = adjoint[i];
    if (a.trivial_action) return 2.0 * kPi;
    if (!a.period) throw DomainError("generator has a non-closing adjoint one-parameter group");
    return *a.period;
  }
};

/// Measures how far t_basis is from an abelian subalgebra of m0 and finds the
/// adjoint periods. Failing checks are recorded, not thrown.
inline TorusCertificate verify_torus(const HomogeneousSpaceData& space,
                                     const std::vector<Vec>& t_basis,
                                     const std::vector<double>& group_periods = {}) {
  const auto& alg = space.algebra();
  const int n = alg.dim();
  TorusCertificate cert;
  cert.t_basis = t_basis;
  const auto s = static_cast<Eigen::Index>(t_basis.size());
  Mat traw(n, s);
  for (Eigen::Index i = 0; i < s; ++i) {
    if (t_basis[static_cast<std::size_t>(i)].size() != n)
      throw ShapeError("t_basis vectors must have dim entries");
    traw.col(i) = t_basis[static_cast<std::size_t>(i)];
  }
  if (s > 0) {
    Mat gram = traw.transpose() * alg.Q() * traw;
    cert.independence = std::sqrt(std::max(0.0, min_eigenvalue(gram)));
    if (cert.independence <= 1e-10 * std::sqrt(std::max(1.0, max_eigenvalue(gram))))
      throw PreconditionError("t_basis is not linearly independent");
  }
  cert.t_m = space.m().transpose() * alg.Q() * traw;

  // Distance from m0 inside g.
  Mat p_m0 = space.m() * space.m0();
  for (Eigen::Index i = 0; i < s; ++i) {
    Vec v = traw.col(i);
    Vec proj = p_m0 * (p_m0.transpose() * alg.Q() * v);
    cert.containment_defect = std::max(cert.containment_defect, alg.q_norm(v - proj));
  }
  for (Eigen::Index i = 0; i < s; ++i)
    for (Eigen::Index j = i + 1; j < s; ++j)
      cert.pairwise_bracket_norm = std::max(
          cert.pairwise_bracket_norm, alg.q_norm(alg.bracket(traw.col(i), traw.col(j))));

  for (Eigen::Index i = 0; i < s; ++i) {
    cert.adjoint.push_back(adjoint_period(alg.ad_of(traw.col(i)), alg.Q()));
    const auto idx = static_cast<std::size_t>(i);
    if (idx < group_periods.size()) {
      cert.group_periods.push_back(group_periods[idx]);
    } else {
      const auto& a = cert.adjoint.back();
      cert.group_periods.push_back(a.period ? *a.period : 2.0 * kPi);
    }
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Algebra presets
// ---------------------------------------------------------------------------

namespace algebras {

/// su(2) with [e1,e2] = e3 and cyclic, Q = identity.
inline LieAlgebraData su2() {
  return LieAlgebraData::from_entries(3, {{0, 1, 2, 1.0}, {1, 2, 0, 1.0}, {0, 2, 1, -1.0}});
}

/// su(2) + u(1), the u(1) generator last.
inline LieAlgebraData su2_u1() {
  return LieAlgebraData::from_entries(4, {{0, 1, 2, 1.0}, {1, 2, 0, 1.0}, {0, 2, 1, -1.0}});
}

inline LieAlgebraData abelian(int n) { return LieAlgebraData::from_entries(n, {}); }

}  // namespace algebras

}  // namespace hrf
