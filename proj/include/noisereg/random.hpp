#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "noisereg/matrix.hpp"

namespace noisereg {

/// Seed plus number of 64-bit words drawn so far. Enough to rebuild a
/// generator at the same point of its stream.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t position = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Child seed for an independent stream, e.g. derive_seed(base, {trial, algo}).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(seed);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return s;
}

/// Deterministic 64-bit generator. Single owner; never share across threads.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  static Rng from_state(const RngState& state) {
    Rng r(state.seed);
    r.engine_.discard(state.position);
    r.position_ = state.position;
    return r;
  }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }

  result_type operator()() {
    ++position_;
    return engine_();
  }

  [[nodiscard]] RngState state() const noexcept { return {seed_, position_}; }

  double normal() { return normal_(*this); }
  double uniform01() { return uniform_(*this); }

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
  std::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_;
  boost::random::uniform_01<double> uniform_;
};

namespace detail {

/// Fills `out` (rows x cols, preallocated) with columns uniform on the sphere
/// of radius nu. Draw order is row-major so that a d x d fill matches
/// sample_sphere_columns(d, d, ...) exactly. nu == 0 consumes no randomness.
inline void fill_sphere_columns(DenseMatrix& out, double nu, Rng& rng, Vector& col_scratch) {
  const std::size_t rows = out.rows();
  const std::size_t cols = out.cols();
  if (nu == 0.0) {
    std::fill(out.data().begin(), out.data().end(), 0.0);
    return;
  }
  col_scratch.assign(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double* r = out.row(i).data();
    for (std::size_t j = 0; j < cols; ++j) {
      const double z = rng.normal();
      r[j] = z;
      col_scratch[j] += z * z;
    }
  }
  for (std::size_t j = 0; j < cols; ++j) {
    // A zero Gaussian vector has probability zero; fall back to e_1 anyway.
    if (col_scratch[j] == 0.0) {
      out(0, j) = 1.0;
      col_scratch[j] = 1.0;
    }
    col_scratch[j] = nu / std::sqrt(col_scratch[j]);
  }
  for (std::size_t i = 0; i < rows; ++i) {
    double* r = out.row(i).data();
    for (std::size_t j = 0; j < cols; ++j) r[j] *= col_scratch[j];
  }
}

}  // namespace detail

/// d x k matrix whose columns are independent and uniform on the radius-nu sphere.
inline DenseMatrix sample_sphere_columns(std::size_t d, std::size_t k, double nu, Rng& rng) {
  NOISEREG_REQUIRE(d >= 1 && k >= 1, "sample_sphere_columns: dimensions must be positive");
  NOISEREG_REQUIRE(nu >= 0.0 && std::isfinite(nu), "sample_sphere_columns: nu must be >= 0");
  DenseMatrix w(d, k);
  Vector scratch;
  detail::fill_sphere_columns(w, nu, rng, scratch);
  return w;
}

/// i.i.d. N(0, sigma^2) entries.
inline DenseMatrix sample_gaussian_matrix(std::size_t rows, std::size_t cols, double sigma,
                                          Rng& rng) {
  NOISEREG_REQUIRE(rows >= 1 && cols >= 1, "sample_gaussian_matrix: dimensions must be positive");
  NOISEREG_REQUIRE(sigma >= 0.0 && std::isfinite(sigma),
                  "sample_gaussian_matrix: sigma must be >= 0, got " + std::to_string(sigma));
  DenseMatrix g(rows, cols);
  if (sigma == 0.0) return g;
  for (double& v : g.data()) v = sigma * rng.normal();
  return g;
}

/// Haar-distributed orthogonal matrix: Gram-Schmidt (two passes) on a Gaussian
/// matrix. Keeping R's diagonal positive is the usual sign correction.
inline DenseMatrix sample_orthogonal(std::size_t d, Rng& rng) {
  NOISEREG_REQUIRE(d >= 1, "sample_orthogonal: dimension must be positive");
  // Work column-major: q[j] is the j-th column.
  std::vector<Vector> q(d, Vector(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) q[j][i] = rng.normal();
  for (std::size_t j = 0; j < d; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        const double proj = dot(q[k], q[j]);
        for (std::size_t i = 0; i < d; ++i) q[j][i] -= proj * q[k][i];
      }
    }
    const double n = norm2(q[j]);
    if (n == 0.0) throw std::runtime_error("sample_orthogonal: degenerate Gaussian draw");
    for (double& v : q[j]) v /= n;
  }
  DenseMatrix a(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) a(i, j) = q[j][i];
  return a;
}

/// Uniform point in the radius-1 ball of R^d.
inline Vector sample_unit_ball(std::size_t d, Rng& rng) {
  NOISEREG_REQUIRE(d >= 1, "sample_unit_ball: dimension must be positive");
  Vector x(d);
  for (double& v : x) v = rng.normal();
  const double n = norm2(x);
  const double radius = std::pow(rng.uniform01(), 1.0 / static_cast<double>(d));
  for (double& v : x) v *= radius / n;
  return x;
}

}  // namespace noisereg
