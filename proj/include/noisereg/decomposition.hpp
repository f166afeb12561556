#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "noisereg/matrix.hpp"
#include "noisereg/problem.hpp"

namespace noisereg {

/// Rank-1 problems are analysed in the frame where ||x*|| = 1: with
/// s = ||x*||^2, X -> X / sqrt(s), Gamma -> Gamma / s, sigma -> sigma / s,
/// nu -> nu / sqrt(s) and eta -> eta * s. The P-GD recursion is invariant
/// under this map, and (1/d^2)||X X^T - Y*||_F^2 changes by exactly s^2.
struct NormalizedFrame {
  Vector u_star;
  double scale = 1.0;  // ||x*||_2^2
  double sigma = 0.0;
  DenseMatrix gamma_sym;

  static NormalizedFrame of(const RecoveryProblem& p) {
    if (!p.has_signal_direction())
      throw std::invalid_argument("NormalizedFrame: requires a rank-1 PSD problem");
    NormalizedFrame f;
    f.u_star = p.x_star();
    f.scale = norm2_sq(f.u_star);
    if (!(f.scale > 0.0)) throw std::invalid_argument("NormalizedFrame: x* must be nonzero");
    const double n = std::sqrt(f.scale);
    for (double& v : f.u_star) v /= n;
    f.sigma = p.sigma / f.scale;
    f.gamma_sym = p.gamma_sym();
    f.gamma_sym *= 1.0 / f.scale;
    return f;
  }

  [[nodiscard]] DenseMatrix iterate(const DenseMatrix& x) const {
    return x * (1.0 / std::sqrt(scale));
  }
  [[nodiscard]] double nu(double raw_nu) const { return raw_nu / std::sqrt(scale); }
  [[nodiscard]] double eta(double raw_eta) const { return raw_eta * scale; }
};

/// The same instance expressed in the normalized frame (x* -> u*).
inline RecoveryProblem normalized_problem(const RecoveryProblem& p) {
  const NormalizedFrame f = NormalizedFrame::of(p);
  DenseMatrix gamma = p.gamma;
  gamma *= 1.0 / f.scale;
  return make_problem_from_parts(ProblemKind::psd, DenseMatrix::column_vector(f.u_star),
                                 DenseMatrix{}, std::move(gamma), f.sigma, p.seed);
}

/// X = u* r^T + E with r = X^T u* and every column of E orthogonal to u*.
struct SubspaceDecomposition {
  Vector r;
  DenseMatrix e;
  Vector u_star;
};

inline SubspaceDecomposition decompose(const DenseMatrix& x, std::span<const double> u_star) {
  NOISEREG_REQUIRE(x.rows() == u_star.size(),
                  "decompose: u* length " + std::to_string(u_star.size()) +
                      " does not match iterate " + detail::shape_str(x));
  const double n = norm2(u_star);
  if (std::abs(n - 1.0) > 1e-10)
    throw std::invalid_argument("decompose: u* must be a unit vector, ||u*|| = " +
                                std::to_string(n));
  SubspaceDecomposition dec;
  dec.u_star.assign(u_star.begin(), u_star.end());
  dec.r = transpose_matvec(x, u_star);
  dec.e = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* row = dec.e.row(i).data();
    for (std::size_t j = 0; j < x.cols(); ++j) row[j] -= u_star[i] * dec.r[j];
  }
  return dec;
}

struct ErrorTerms {
  double signal = 0.0;  // (1 - ||r||^2)^2
  double cross = 0.0;   // 2 ||E r||^2
  double orthogonal = 0.0;  // ||E E^T||_F^2
  double total = 0.0;   // ||X X^T - u* u*^T||_F^2, computed directly
};

/// Splits the recovery error in the normalized frame into signal, cross and
/// orthogonal terms; `total` is the direct norm so callers can check the identity.
inline ErrorTerms error_decomposition(const SubspaceDecomposition& dec, const DenseMatrix& x,
                                      const DenseMatrix& y_star_unit) {
  const std::size_t d = x.rows();
  NOISEREG_REQUIRE(dec.e.same_shape(x) && dec.r.size() == x.cols(),
                  "error_decomposition: decomposition does not match iterate");
  NOISEREG_REQUIRE(y_star_unit.rows() == d && y_star_unit.cols() == d,
                  "error_decomposition: y_star_unit must be " + std::to_string(d) + "x" +
                      std::to_string(d));
  if (max_abs_diff(y_star_unit, outer(dec.u_star, dec.u_star)) > 1e-10)
    throw std::invalid_argument("error_decomposition: y_star_unit must equal u* u*^T");
  ErrorTerms t;
  const double r2 = norm2_sq(dec.r);
  t.signal = (1.0 - r2) * (1.0 - r2);
  t.cross = 2.0 * norm2_sq(matvec(dec.e, dec.r));
  t.orthogonal = frobenius_norm_sq(gram(dec.e));
  t.total = frobenius_distance_sq(gram(x), y_star_unit);
  return t;
}

}  // namespace noisereg
