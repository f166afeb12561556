#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Argument check that only builds its message on failure.
#define NOISEREG_REQUIRE(cond, msg)                               \
  do {                                                            \
    if (!(cond)) throw std::invalid_argument(msg);                \
  } while (0)

namespace noisereg {

using Vector = std::vector<double>;

/// Row-major dense real matrix. Small sizes (d <= 64) are the target, so all
/// kernels are straightforward loops written to auto-vectorize.
class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("DenseMatrix: data length " + std::to_string(data_.size()) +
                                  " does not match " + std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
    }
  }

  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw std::invalid_argument("DenseMatrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix diagonal(std::span<const double> values) {
    DenseMatrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
  }

  /// Column vector (n x 1) holding `values`.
  static DenseMatrix column_vector(std::span<const double> values) {
    return DenseMatrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool is_square() const noexcept { return rows_ == cols_; }
  [[nodiscard]] bool same_shape(const DenseMatrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::span<double> row(std::size_t i) noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  [[nodiscard]] std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  [[nodiscard]] bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    require_same_shape(o, "operator+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  DenseMatrix& operator-=(const DenseMatrix& o) {
    require_same_shape(o, "operator-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  DenseMatrix& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  void require_same_shape(const DenseMatrix& o, const char* what) const {
    if (!same_shape(o)) {
      throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                  std::to_string(rows_) + "x" + std::to_string(cols_) + " vs " +
                                  std::to_string(o.rows_) + "x" + std::to_string(o.cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
inline DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
inline DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }
inline DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

namespace detail {

inline std::string shape_str(const DenseMatrix& a) {
  return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

// Reductions use eight independent accumulators in a fixed order: results are
// deterministic and the loops vectorize without relaxed FP semantics.

inline double dot_kernel(const double* __restrict a, const double* __restrict b,
                         std::size_t n) noexcept {
  double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8)
    for (std::size_t l = 0; l < 8; ++l) s[l] += a[k + l] * b[k + l];
  for (; k < n; ++k) s[0] += a[k] * b[k];
  return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

inline double distance_sq_kernel(const double* __restrict a, const double* __restrict b,
                                 std::size_t n) noexcept {
  double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    for (std::size_t l = 0; l < 8; ++l) {
      const double diff = a[k + l] - b[k + l];
      s[l] += diff * diff;
    }
  }
  for (; k < n; ++k) {
    const double diff = a[k] - b[k];
    s[0] += diff * diff;
  }
  return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

/// o (m x n) = a (m x p) * b (p x n), all row-major and non-overlapping.
inline void matmul_kernel(const double* __restrict a, const double* __restrict b,
                          double* __restrict o, std::size_t m, std::size_t p,
                          std::size_t n) noexcept {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict oi = o + i * n;
    for (std::size_t j = 0; j < n; ++j) oi[j] = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = a[i * p + k];
      const double* __restrict bk = b + k * n;
      for (std::size_t j = 0; j < n; ++j) oi[j] += aik * bk[j];
    }
  }
}

}  // namespace detail

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// out = a * b, written into a preallocated matrix (no aliasing allowed).
inline void matmul_into(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  NOISEREG_REQUIRE(a.cols() == b.rows(),
                  "matmul: shape mismatch " + detail::shape_str(a) + " * " + detail::shape_str(b));
  NOISEREG_REQUIRE(&out != &a && &out != &b, "matmul_into: output aliases an input");
  if (out.rows() != a.rows() || out.cols() != b.cols()) out = DenseMatrix(a.rows(), b.cols());
  detail::matmul_kernel(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(),
                        b.cols());
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out(a.rows(), b.cols());
  matmul_into(a, b, out);
  return out;
}

/// out = a * a^T. Entry (i, j) and (j, i) accumulate identical products in the
/// same order, so the result is exactly symmetric.
inline void gram_into(const DenseMatrix& a, DenseMatrix& out) {
  const std::size_t n = a.rows();
  const std::size_t k = a.cols();
  NOISEREG_REQUIRE(&out != &a, "gram_into: output aliases the input");
  if (out.rows() != n || out.cols() != n) out = DenseMatrix(n, n);
  thread_local std::vector<double> at;
  at.resize(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) at[c * n + i] = a(i, c);
  detail::matmul_kernel(a.data().data(), at.data(), out.data().data(), n, k, n);
}

inline DenseMatrix gram(const DenseMatrix& a) {
  DenseMatrix out(a.rows(), a.rows());
  gram_into(a, out);
  return out;
}

/// a^T * b without forming the transpose.
inline DenseMatrix transpose_matmul(const DenseMatrix& a, const DenseMatrix& b) {
  NOISEREG_REQUIRE(a.rows() == b.rows(), "transpose_matmul: shape mismatch " +
                                            detail::shape_str(a) + "^T * " + detail::shape_str(b));
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* bk = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aki * bk[j];
    }
  }
  return out;
}

/// a * b^T without forming the transpose.
inline DenseMatrix matmul_transpose(const DenseMatrix& a, const DenseMatrix& b) {
  NOISEREG_REQUIRE(a.cols() == b.cols(), "matmul_transpose: shape mismatch " +
                                            detail::shape_str(a) + " * " + detail::shape_str(b) +
                                            "^T");
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j).data();
      double s = 0.0;
      for (std::size_t c = 0; c < a.cols(); ++c) s += ai[c] * bj[c];
      out(i, j) = s;
    }
  }
  return out;
}

inline Vector matvec(const DenseMatrix& a, std::span<const double> x) {
  NOISEREG_REQUIRE(a.cols() == x.size(), "matvec: shape mismatch " + detail::shape_str(a) +
                                            " * vector(" + std::to_string(x.size()) + ")");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += ai[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// a^T x.
inline Vector transpose_matvec(const DenseMatrix& a, std::span<const double> x) {
  NOISEREG_REQUIRE(a.rows() == x.size(), "transpose_matvec: shape mismatch " +
                                            detail::shape_str(a) + "^T * vector(" +
                                            std::to_string(x.size()) + ")");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += ai[j] * x[i];
  }
  return y;
}

inline DenseMatrix outer(std::span<const double> u, std::span<const double> v) {
  DenseMatrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
  return m;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  NOISEREG_REQUIRE(a.size() == b.size(), "dot: length mismatch");
  return detail::dot_kernel(a.data(), b.data(), a.size());
}

inline double norm2_sq(std::span<const double> a) { return dot(a, a); }
inline double norm2(std::span<const double> a) { return std::sqrt(norm2_sq(a)); }

/// Frobenius inner product <A, B> = tr(A^T B).
inline double inner_product(const DenseMatrix& a, const DenseMatrix& b) {
  NOISEREG_REQUIRE(a.same_shape(b), "inner_product: shape mismatch " + detail::shape_str(a) +
                                       " vs " + detail::shape_str(b));
  return dot(a.data(), b.data());
}

inline double frobenius_norm_sq(const DenseMatrix& a) { return norm2_sq(a.data()); }
inline double frobenius_norm(const DenseMatrix& a) { return std::sqrt(frobenius_norm_sq(a)); }

/// ||A - B||_F^2 without a temporary.
inline double frobenius_distance_sq(const DenseMatrix& a, const DenseMatrix& b) {
  NOISEREG_REQUIRE(a.same_shape(b), "frobenius_distance_sq: shape mismatch " +
                                       detail::shape_str(a) + " vs " + detail::shape_str(b));
  return detail::distance_sq_kernel(a.data().data(), b.data().data(), a.size());
}

inline double max_abs(const DenseMatrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  NOISEREG_REQUIRE(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

inline DenseMatrix symmetrize(const DenseMatrix& a) {
  NOISEREG_REQUIRE(a.is_square(), "symmetrize: matrix must be square, got " + detail::shape_str(a));
  DenseMatrix s(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

inline Vector column(const DenseMatrix& a, std::size_t j) {
  Vector c(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) c[i] = a(i, j);
  return c;
}

struct PowerIterationOptions {
  double relative_tolerance = 1e-8;
  int max_iterations = 10000;
};

/// Largest singular value by power iteration on A^T A. Stops once successive
/// estimates agree to 1% of the requested relative tolerance, which keeps the
/// returned value within the tolerance even when the spectral gap is small.
inline double spectral_norm(const DenseMatrix& a, PowerIterationOptions opts = {}) {
  const std::size_t n = a.cols();
  if (a.size() == 0 || max_abs(a) == 0.0) return 0.0;
  // Deterministic, generic start vector.
  Vector v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = 1.0 + 0.37 * std::sin(1.0 + 2.3 * static_cast<double>(i));
  const double nv = norm2(v);
  for (double& x : v) x /= nv;

  double estimate = 0.0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Vector av = matvec(a, v);
    const Vector w = transpose_matvec(a, av);
    const double nw = norm2(w);
    if (nw == 0.0) break;
    // ||A v|| with unit v; monotone non-decreasing along the iteration.
    const double next = norm2(av);
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
    const bool converged = it > 0 && std::abs(next - estimate) <= 1e-2 * opts.relative_tolerance * next;
    estimate = next;
    if (converged) break;
  }
  return std::max(estimate, norm2(matvec(a, v)));
}

}  // namespace noisereg
