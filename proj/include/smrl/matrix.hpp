#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace smrl {

/// Dense row-major matrix of 64-bit reals. The only numeric substrate used
/// in this library; everything here stays at desk scale (p <= ~800).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw std::invalid_argument("Matrix::from_rows: ragged rows");
      std::size_t j = 0;
      for (double v : r) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  /// Construction from untrusted input: rejects non-finite entries.
  static Matrix checked(std::size_t rows, std::size_t cols, std::vector<double> data) {
    if (data.size() != rows * cols)
      throw std::invalid_argument("Matrix::checked: data length " + std::to_string(data.size()) +
                                  " != " + std::to_string(rows) + "x" + std::to_string(cols));
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!std::isfinite(data[i]))
        throw std::invalid_argument("Matrix::checked: non-finite entry at flat index " +
                                    std::to_string(i));
    Matrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.data_ = std::move(data);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("multiply: inner dimensions " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// aᵀ·b without forming the transpose.
inline Matrix multiply_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("multiply_at_b: row counts " + std::to_string(a.rows()) + " vs " +
                                std::to_string(b.rows()));
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* arow = a.row_ptr(k);
    const double* brow = b.row_ptr(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c.row_ptr(i);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

/// a·bᵀ.
inline Matrix multiply_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("multiply_a_bt: column counts " + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.cols()));
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row_ptr(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      crow[j] = s;
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline void add_scaled_inplace(Matrix& a, const Matrix& b, double s) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("add_scaled_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += s * b.data()[i];
}

inline Matrix scaled(const Matrix& a, double s) {
  Matrix c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

inline std::vector<double> column_means(const Matrix& a) {
  std::vector<double> mu(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* row = a.row_ptr(i);
    for (std::size_t j = 0; j < a.cols(); ++j) mu[j] += row[j];
  }
  const double inv = a.rows() ? 1.0 / static_cast<double>(a.rows()) : 0.0;
  for (double& v : mu) v *= inv;
  return mu;
}

inline Matrix centered_columns(const Matrix& a) {
  const std::vector<double> mu = column_means(a);
  Matrix c = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* row = c.row_ptr(i);
    for (std::size_t j = 0; j < a.cols(); ++j) row[j] -= mu[j];
  }
  return c;
}

inline Matrix select_rows(const Matrix& a, const std::vector<std::size_t>& idx) {
  Matrix c(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) throw std::invalid_argument("select_rows: index out of range");
    std::copy(a.row_ptr(idx[i]), a.row_ptr(idx[i]) + a.cols(), c.row_ptr(i));
  }
  return c;
}

/// Empirical cross-covariance (1/n)·AcᵀBc with column-mean centering.
/// The 1/n normalizer (not 1/(n-1)) matches the empirical-expectation
/// convention used throughout; ridge terms downstream absorb the constant.
inline Matrix covariance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("covariance: row counts differ, " + std::to_string(a.rows()) +
                                " vs " + std::to_string(b.rows()));
  if (a.rows() < 2) throw std::invalid_argument("covariance: need at least 2 rows");
  const Matrix ac = centered_columns(a);
  const Matrix bc = centered_columns(b);
  Matrix c = multiply_at_b(ac, bc);
  const double inv = 1.0 / static_cast<double>(a.rows());
  for (double& v : c.data()) v *= inv;
  return c;
}

/// Solve S·X = B for symmetric positive definite S via Cholesky.
inline Matrix chol_solve(const Matrix& s, const Matrix& b) {
  if (s.rows() != s.cols()) throw std::invalid_argument("chol_solve: S must be square");
  if (s.rows() != b.rows())
    throw std::invalid_argument("chol_solve: S is " + std::to_string(s.rows()) + "x" +
                                std::to_string(s.cols()) + " but B has " +
                                std::to_string(b.rows()) + " rows");
  const std::size_t n = s.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = j; i < n; ++i) {
      double sum = 0.5 * (s(i, j) + s(j, i));
      for (std::size_t k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(sum > 0.0))
          throw std::runtime_error("chol_solve: matrix not positive definite, pivot " +
                                   std::to_string(j) + " = " + std::to_string(sum));
        l(j, j) = std::sqrt(sum);
      } else {
        l(i, j) = sum / l(j, j);
      }
    }
  }
  // L y = B, then Lᵀ x = y, all right-hand sides at once.
  Matrix x = b;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l(i, k);
      if (lik == 0.0) continue;
      for (std::size_t c = 0; c < b.cols(); ++c) x(i, c) -= lik * x(k, c);
    }
    const double inv = 1.0 / l(i, i);
    for (std::size_t c = 0; c < b.cols(); ++c) x(i, c) *= inv;
  }
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double lki = l(k, ii);
      if (lki == 0.0) continue;
      for (std::size_t c = 0; c < b.cols(); ++c) x(ii, c) -= lki * x(k, c);
    }
    const double inv = 1.0 / l(ii, ii);
    for (std::size_t c = 0; c < b.cols(); ++c) x(ii, c) *= inv;
  }
  return x;
}

/// Eigendecomposition of a symmetric matrix.
/// Eigenvalues descending; eigenvector column k pairs with eigenvalue k.
struct SymEigResult {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;
};

/// Cyclic Jacobi eigendecomposition. Input is symmetrized as (S+Sᵀ)/2 first,
/// so callers may pass matrices that are symmetric only to rounding error.
/// Degenerate eigenvalues are ordered value-descending then by original
/// diagonal index; eigenvector signs are not pinned.
inline SymEigResult sym_eig(const Matrix& s) {
  if (s.rows() != s.cols()) throw std::invalid_argument("sym_eig: matrix must be square");
  const std::size_t n = s.rows();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (s(i, j) + s(j, i));
  Matrix v = Matrix::identity(n);

  const double fnorm = frobenius_norm(a);
  const double stop = (fnorm > 0.0 ? fnorm : 1.0) * 1e-14;
  const double skip = (fnorm > 0.0 ? fnorm : 1.0) * 1e-18;

  for (int sweep = 0; sweep < 64 && n > 1; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= stop) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= skip) {
          a(p, q) = 0.0;
          a(q, p) = 0.0;
          continue;
        }
        const double theta = 0.5 * (a(q, q) - a(p, p)) / apq;
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;  // avoid overflow in theta*theta
        } else {
          t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          if (theta < 0.0) t = -t;
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;

        const double app = a(p, p), aqq = a(q, q);
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p), arq = a(r, q);
          a(r, p) = c * arp - sn * arq;
          a(p, r) = a(r, p);
          a(r, q) = sn * arp + c * arq;
          a(q, r) = a(r, q);
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v(r, p), vrq = v(r, q);
          v(r, p) = c * vrp - sn * vrq;
          v(r, q) = sn * vrp + c * vrq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a(i, i) > a(j, j);
  });

  SymEigResult out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, k) = v(r, order[k]);
  }
  return out;
}

/// Singular values of T, descending, length min(p, q). Computed as square
/// roots of the eigenvalues (clipped at 0) of the smaller Gram matrix.
inline std::vector<double> svd_values(const Matrix& t) {
  const std::size_t m = std::min(t.rows(), t.cols());
  if (m == 0) return {};
  const Matrix gram = (t.rows() <= t.cols()) ? multiply_a_bt(t, t) : multiply_at_b(t, t);
  const SymEigResult eig = sym_eig(gram);
  std::vector<double> out(m);
  for (std::size_t k = 0; k < m; ++k) out[k] = std::sqrt(std::max(eig.eigenvalues[k], 0.0));
  return out;
}

/// (S + ridge·I)^{-1/2} for symmetric PSD S, via the eigendecomposition
/// V·diag((λ_i+ridge)^{-1/2})·Vᵀ. Directions whose shifted eigenvalue falls
/// below 1e-12 of the largest are projected out (pseudo-inverse behavior),
/// which keeps the λ=0 corner of the RSK path defined.
inline Matrix inv_sqrt_psd(const Matrix& s, double ridge) {
  const SymEigResult eig = sym_eig(s);
  const std::size_t n = s.rows();
  double dmax = 0.0;
  for (double lv : eig.eigenvalues) dmax = std::max(dmax, lv + ridge);
  const double tol = dmax * 1e-12;
  std::vector<double> f(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double d = eig.eigenvalues[k] + ridge;
    f[k] = (d > tol && d > 0.0) ? 1.0 / std::sqrt(d) : 0.0;
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) sum += eig.eigenvectors(i, k) * f[k] * eig.eigenvectors(j, k);
      out(i, j) = sum;
      out(j, i) = sum;
    }
  }
  return out;
}

}  // namespace smrl
