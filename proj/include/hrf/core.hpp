#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hrf {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

class AlgebraError : public Error {
 public:
  explicit AlgebraError(const std::string& what) : Error("algebra error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric error: " + what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("configuration error: " + what) {}
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what) : Error("precondition error: " + what) {}
};

// ---------------------------------------------------------------------------
// Small linear-algebra helpers
// ---------------------------------------------------------------------------

inline Mat symmetrized(const Mat& a) { return 0.5 * (a + a.transpose()); }

inline double min_eigenvalue(const Mat& sym) {
  if (sym.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double max_eigenvalue(const Mat& sym) {
  if (sym.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(sym.rows() - 1);
}

/// Symmetric inverse square root of an SPD matrix. Columns of the result form
/// an orthonormal frame for the inner product `sym`.
inline Mat inverse_sqrt_spd(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(sym));
  const Vec& w = es.eigenvalues();
  if (w.size() > 0 && w(0) <= 0.0) throw NumericError("matrix is not positive definite");
  return es.eigenvectors() * w.cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

inline Mat sqrt_spd(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(sym));
  const Vec& w = es.eigenvalues();
  if (w.size() > 0 && w(0) < 0.0) throw NumericError("matrix is not positive semidefinite");
  return es.eigenvectors() * w.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

/// Orthonormal basis (columns) for the `inner`-orthogonal complement of
/// span(`span_cols`) inside R^n. Coordinate vectors e_0..e_{n-1} are projected
/// in order and kept when they leave a residual above `tol`, so coordinate
/// aligned subspaces come out with coordinate aligned bases.
inline Mat orthonormal_complement(const Mat& span_cols, const Mat& inner, double tol = 1e-8) {
  const Eigen::Index n = inner.rows();
  std::vector<Vec> basis;
  // Orthonormalize the span first so projections are exact.
  for (Eigen::Index j = 0; j < span_cols.cols(); ++j) {
    Vec v = span_cols.col(j);
    for (const Vec& b : basis) v -= b.dot(inner * v) * b;
    for (const Vec& b : basis) v -= b.dot(inner * v) * b;
    const double nv = std::sqrt(std::max(0.0, v.dot(inner * v)));
    if (nv > tol) basis.push_back(v / nv);
  }
  const std::size_t span_rank = basis.size();
  for (Eigen::Index i = 0; i < n && static_cast<Eigen::Index>(basis.size()) < n; ++i) {
    Vec v = Vec::Unit(n, i);
    for (const Vec& b : basis) v -= b.dot(inner * v) * b;
    for (const Vec& b : basis) v -= b.dot(inner * v) * b;
    const double nv = std::sqrt(std::max(0.0, v.dot(inner * v)));
    if (nv > tol) basis.push_back(v / nv);
  }
  Mat out(n, static_cast<Eigen::Index>(basis.size() - span_rank));
  for (std::size_t k = span_rank; k < basis.size(); ++k)
    out.col(static_cast<Eigen::Index>(k - span_rank)) = basis[k];
  // Clean near-zero entries so exact presets stay exact.
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (std::abs(out.data()[i]) < 1e-15) out.data()[i] = 0.0;
  return out;
}

/// Principal angles (radians) between column spans of `a` and `b`,
/// orthonormal for the Euclidean product. Returns the largest angle.
inline double max_principal_angle(const Mat& a, const Mat& b) {
  if (a.cols() == 0 && b.cols() == 0) return 0.0;
  if (a.cols() != b.cols()) return kPi / 2;
  Eigen::HouseholderQR<Mat> qa(a), qb(b);
  Mat oa = qa.householderQ() * Mat::Identity(a.rows(), a.cols());
  Mat ob = qb.householderQ() * Mat::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<Mat> svd(oa.transpose() * ob);
  const double smin = svd.singularValues().minCoeff();
  return std::acos(std::clamp(smin, -1.0, 1.0));
}

/// Operator norm of a symmetric form `a` measured against SPD `ref`:
/// max |eig(ref^{-1} a)|.
inline double relative_operator_norm(const Mat& a, const Mat& ref) {
  Mat p = inverse_sqrt_spd(ref);
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(p * a * p), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

/// Worker cap from HRF_LAB_THREADS (default: hardware concurrency).
inline unsigned thread_budget() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HRF_LAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(std::min<long>(v, 1024));
  }
  return hw;
}

/// Runs body(i) for i in [0, n). Results must be written by index so the
/// outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_budget(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace hrf
