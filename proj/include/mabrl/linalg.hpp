#pragma once

// Dense row-major matrices and the regularized least-squares solver used as
// the learning rule of the broad networks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mabrl {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) throw std::invalid_argument("Matrix: non-finite fill value");
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                           shape_string(rows_, cols_));
    }
    if (!all_finite()) throw std::invalid_argument("Matrix: non-finite entry");
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
    if (!all_finite()) throw std::invalid_argument("Matrix: non-finite entry");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  std::string shape() const { return shape_string(rows_, cols_); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

// Cholesky factorization A = R^T R in place, R upper triangular (the strict
// lower triangle is left untouched). Returns false when a pivot falls below `tol`.
inline bool cholesky_in_place(Matrix& a, double tol) {
  const std::size_t n = a.rows();
  for (std::size_t k0 = 0; k0 < n; k0 += 4) {
    const std::size_t k1 = std::min(n, k0 + 4);
    // factor the panel rows, updating only each other
    for (std::size_t k = k0; k < k1; ++k) {
      double* rk = a.row(k).data();
      if (!(rk[k] > tol)) return false;
      const double rkk = std::sqrt(rk[k]);
      rk[k] = rkk;
      const double inv = 1.0 / rkk;
      for (std::size_t j = k + 1; j < n; ++j) rk[j] *= inv;
      for (std::size_t i = k + 1; i < k1; ++i) {
        const double v = rk[i];
        double* ai = a.row(i).data();
        for (std::size_t j = i; j < n; ++j) ai[j] -= v * rk[j];
      }
    }
    // delayed trailing update from the whole panel
    if (k1 - k0 == 4) {
      const double* r0 = a.row(k0).data();
      const double* r1 = r0 + n;
      const double* r2 = r1 + n;
      const double* r3 = r2 + n;
      for (std::size_t i = k1; i < n; ++i) {
        const double v0 = r0[i], v1 = r1[i], v2 = r2[i], v3 = r3[i];
        double* ai = a.row(i).data();
        for (std::size_t j = i; j < n; ++j) ai[j] -= v0 * r0[j] + v1 * r1[j] + v2 * r2[j] + v3 * r3[j];
      }
    } else {
      for (std::size_t k = k0; k < k1; ++k) {
        const double* rk = a.row(k).data();
        for (std::size_t i = k1; i < n; ++i) {
          const double v = rk[i];
          double* ai = a.row(i).data();
          for (std::size_t j = i; j < n; ++j) ai[j] -= v * rk[j];
        }
      }
    }
  }
  return true;
}

// Solves R^T R X = B in place of B.
inline void cholesky_solve(const Matrix& r, Matrix& b) {
  const std::size_t n = r.rows();
  const std::size_t m = b.cols();
  for (std::size_t k = 0; k < n; ++k) {
    auto bk = b.row(k);
    const double inv = 1.0 / r(k, k);
    for (std::size_t c = 0; c < m; ++c) bk[c] *= inv;
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = r(k, i);
      if (v == 0.0) continue;
      auto bi = b.row(i);
      for (std::size_t c = 0; c < m; ++c) bi[c] -= v * bk[c];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    auto bk = b.row(k);
    const double inv = 1.0 / r(k, k);
    for (std::size_t c = 0; c < m; ++c) bk[c] *= inv;
    for (std::size_t i = 0; i < k; ++i) {
      const double v = r(i, k);
      if (v == 0.0) continue;
      auto bi = b.row(i);
      for (std::size_t c = 0; c < m; ++c) bi[c] -= v * bk[c];
    }
  }
}

// Gaussian elimination with partial pivoting; returns false on a pivot below tol.
inline bool gauss_solve(Matrix a, Matrix& b, double tol) {
  const std::size_t n = a.rows();
  const std::size_t m = b.cols();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(pivot, k))) pivot = i;
    if (!(std::abs(a(pivot, k)) > tol)) return false;
    if (pivot != k) {
      std::swap_ranges(a.row(k).begin(), a.row(k).end(), a.row(pivot).begin());
      std::swap_ranges(b.row(k).begin(), b.row(k).end(), b.row(pivot).begin());
    }
    const double inv = 1.0 / a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) * inv;
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      for (std::size_t c = 0; c < m; ++c) b(i, c) -= f * b(k, c);
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    const double inv = 1.0 / a(k, k);
    for (std::size_t c = 0; c < m; ++c) b(k, c) *= inv;
    for (std::size_t i = 0; i < k; ++i) {
      const double f = a(i, k);
      for (std::size_t c = 0; c < m; ++c) b(i, c) -= f * b(k, c);
    }
  }
  return true;
}

}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto oi = out.row(i);
    const auto ai = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += aik * bk[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// a^T b without materializing the transpose.
inline Matrix transpose_matmul(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("transpose_matmul: row mismatch " + a.shape() + " vs " + b.shape());
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto ar = a.row(r);
    const auto br = b.row(r);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double v = ar[i];
      if (v == 0.0) continue;
      auto oi = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += v * br[j];
    }
  }
  return out;
}

// u^T u. The upper triangle is accumulated tile by tile from groups of four
// rows of u, then mirrored.
inline Matrix gram(const Matrix& u) {
  constexpr std::size_t kTile = 96;
  const std::size_t f = u.cols();
  const std::size_t n = u.rows();
  Matrix g(f, f);
  const std::size_t n4 = n - n % 4;
  for (std::size_t i0 = 0; i0 < f; i0 += kTile) {
    const std::size_t i1 = std::min(f, i0 + kTile);
    for (std::size_t j0 = i0; j0 < f; j0 += kTile) {
      const std::size_t j1 = std::min(f, j0 + kTile);
      for (std::size_t r = 0; r < n4; r += 4) {
        const double* u0 = u.row(r).data();
        const double* u1 = u0 + f;
        const double* u2 = u1 + f;
        const double* u3 = u2 + f;
        for (std::size_t i = i0; i < i1; ++i) {
          const double v0 = u0[i], v1 = u1[i], v2 = u2[i], v3 = u3[i];
          double* gi = g.row(i).data();
          for (std::size_t j = std::max(j0, i); j < j1; ++j)
            gi[j] += v0 * u0[j] + v1 * u1[j] + v2 * u2[j] + v3 * u3[j];
        }
      }
      for (std::size_t r = n4; r < n; ++r) {
        const double* ur = u.row(r).data();
        for (std::size_t i = i0; i < i1; ++i) {
          const double v = ur[i];
          double* gi = g.row(i).data();
          for (std::size_t j = std::max(j0, i); j < j1; ++j) gi[j] += v * ur[j];
        }
      }
    }
  }
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

inline Matrix hconcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("hconcat: row mismatch " + a.shape() + " vs " + b.shape());
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto o = out.row(r);
    std::copy(a.row(r).begin(), a.row(r).end(), o.begin());
    std::copy(b.row(r).begin(), b.row(r).end(), o.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("add: shape mismatch " + a.shape() + " vs " + b.shape());
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("sub: shape mismatch " + a.shape() + " vs " + b.shape());
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

/// Minimizer of ||U W - Y||^2 + lambda ||W||^2, i.e. W = (U^T U + lambda I)^{-1} U^T Y.
///
/// Factorizes the F x F normal equations by Cholesky, falling back to pivoted
/// Gaussian elimination when a pivot collapses. One round of iterative
/// refinement is applied. Throws SolverError when the system is singular
/// (only reachable with lambda == 0).
inline Matrix ridge_solve(const Matrix& u, const Matrix& y, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("ridge_solve: lambda must be finite and non-negative");
  if (u.rows() != y.rows()) {
    throw DimensionError("ridge_solve: design " + u.shape() + " and targets " + y.shape() +
                         " disagree on row count");
  }
  if (u.empty()) throw DimensionError("ridge_solve: empty design matrix");
  detail::require_finite(u, "ridge_solve");
  detail::require_finite(y, "ridge_solve");

  Matrix a = gram(u);
  double diag_scale = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    a(i, i) += lambda;
    diag_scale = std::max(diag_scale, std::abs(a(i, i)));
  }
  const Matrix rhs = transpose_matmul(u, y);
  const double tol = 1e-13 * std::max(diag_scale, 1e-300);

  Matrix factor = a;
  Matrix w = rhs;
  if (detail::cholesky_in_place(factor, tol)) {
    detail::cholesky_solve(factor, w);
    Matrix correction = rhs - matmul(a, w);
    detail::cholesky_solve(factor, correction);
    w = w + correction;
  } else {
    w = rhs;
    if (!detail::gauss_solve(a, w, tol)) {
      std::ostringstream msg;
      msg << "ridge_solve: normal equations are singular (" << a.rows() << "x" << a.cols()
          << ", lambda=" << lambda << "); raise lambda";
      throw SolverError(msg.str());
    }
    Matrix correction = rhs - matmul(a, w);
    if (detail::gauss_solve(a, correction, tol)) w = w + correction;
  }
  if (!w.all_finite()) throw SolverError("ridge_solve: solution is not finite; raise lambda");
  return w;
}

inline constexpr double kPseudoInverseLambda = 1e-8;

/// Moore-Penrose inverse approximated as ridge_solve(U, I, 1e-8).
inline Matrix pseudo_inverse(const Matrix& u) {
  if (u.empty()) throw DimensionError("pseudo_inverse: empty matrix");
  return ridge_solve(u, Matrix::identity(u.rows()), kPseudoInverseLambda);
}

}  // namespace mabrl
