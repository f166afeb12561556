#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include <nlohmann/json.hpp>

#include "noisereg/matrix.hpp"
#include "noisereg/random.hpp"

namespace noisereg {

enum class ProblemKind { psd, rectangular };

inline std::string_view to_string(ProblemKind k) {
  return k == ProblemKind::psd ? "psd" : "rectangular";
}

inline ProblemKind problem_kind_from_string(std::string_view s) {
  if (s == "psd") return ProblemKind::psd;
  if (s == "rectangular") return ProblemKind::rectangular;
  throw std::invalid_argument("unknown problem kind '" + std::string(s) + "'");
}

/// Synthetic recovery instance: Y = Y* + Gamma with Y* = F F^T (psd) or
/// U* V*^T (rectangular). Immutable once built; share read-only across trials.
struct RecoveryProblem {
  ProblemKind kind = ProblemKind::psd;
  std::size_t d = 0;
  std::size_t rank = 0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  DenseMatrix ground_truth_factor;    // d x r; U* for rectangular problems
  DenseMatrix ground_truth_factor_v;  // d x r; rectangular only
  DenseMatrix y_star;
  DenseMatrix gamma;
  DenseMatrix y_observed;
  DenseMatrix y_sym;

  /// Rank-1 PSD problems have a well-defined signal direction u* = x*/||x*||.
  [[nodiscard]] bool has_signal_direction() const noexcept {
    return kind == ProblemKind::psd && rank == 1;
  }

  [[nodiscard]] Vector x_star() const {
    if (!has_signal_direction())
      throw std::invalid_argument("x_star: only defined for rank-1 PSD problems");
    return column(ground_truth_factor, 0);
  }

  /// Gamma_sym = Y_sym - Y*.
  [[nodiscard]] DenseMatrix gamma_sym() const { return y_sym - y_star; }
};

/// Pair of d x d factors for the rectangular model.
struct RectFactorPair {
  DenseMatrix u;
  DenseMatrix v;
};

/// Assemble a problem from its random ingredients. Every derived field is
/// recomputed here, so a problem rebuilt from (factors, gamma) is bit-identical.
inline RecoveryProblem make_problem_from_parts(ProblemKind kind, DenseMatrix factor,
                                               DenseMatrix factor_v, DenseMatrix gamma,
                                               double sigma, std::uint64_t seed = 0) {
  const std::size_t d = factor.rows();
  NOISEREG_REQUIRE(d >= 1 && factor.cols() >= 1 && factor.cols() <= d,
                  "make_problem_from_parts: factor must be d x r with 1 <= r <= d, got " +
                      detail::shape_str(factor));
  NOISEREG_REQUIRE(gamma.rows() == d && gamma.cols() == d,
                  "make_problem_from_parts: gamma must be " + std::to_string(d) + "x" +
                      std::to_string(d) + ", got " + detail::shape_str(gamma));
  NOISEREG_REQUIRE(sigma >= 0.0, "make_problem_from_parts: sigma must be >= 0");
  RecoveryProblem p;
  p.kind = kind;
  p.d = d;
  p.rank = factor.cols();
  p.sigma = sigma;
  p.seed = seed;
  if (kind == ProblemKind::psd) {
    p.y_star = matmul_transpose(factor, factor);
  } else {
    NOISEREG_REQUIRE(factor_v.same_shape(factor),
                    "make_problem_from_parts: rectangular factors must have equal shapes");
    p.y_star = matmul_transpose(factor, factor_v);
  }
  p.ground_truth_factor = std::move(factor);
  p.ground_truth_factor_v = std::move(factor_v);
  p.gamma = std::move(gamma);
  p.y_observed = p.y_star + p.gamma;
  p.y_sym = symmetrize(p.y_observed);
  return p;
}

inline RecoveryProblem make_rank_one_problem(std::size_t d, std::span<const double> x_star,
                                             double sigma, Rng& rng) {
  NOISEREG_REQUIRE(d >= 2, "make_rank_one_problem: d must be >= 2");
  NOISEREG_REQUIRE(x_star.size() == d, "make_rank_one_problem: x_star has length " +
                                          std::to_string(x_star.size()) + ", expected " +
                                          std::to_string(d));
  NOISEREG_REQUIRE(sigma >= 0.0, "make_rank_one_problem: sigma must be >= 0");
  const std::uint64_t seed = rng.state().seed;
  DenseMatrix gamma = sample_gaussian_matrix(d, d, sigma, rng);
  return make_problem_from_parts(ProblemKind::psd, DenseMatrix::column_vector(x_star),
                                 DenseMatrix{}, std::move(gamma), sigma, seed);
}

/// PSD instance Y* = X* X*^T with X* (d x r) standard Gaussian.
inline RecoveryProblem make_rank_r_problem(std::size_t d, std::size_t r, double sigma, Rng& rng) {
  NOISEREG_REQUIRE(r >= 1 && r <= d, "make_rank_r_problem: need 1 <= r <= d, got r=" +
                                        std::to_string(r) + ", d=" + std::to_string(d));
  const std::uint64_t seed = rng.state().seed;
  DenseMatrix factor = sample_gaussian_matrix(d, r, 1.0, rng);
  DenseMatrix gamma = sample_gaussian_matrix(d, d, sigma, rng);
  return make_problem_from_parts(ProblemKind::psd, std::move(factor), DenseMatrix{},
                                 std::move(gamma), sigma, seed);
}

/// Rectangular instance Y* = U* V*^T with U*, V* (d x r) standard Gaussian.
inline RecoveryProblem make_rectangular_problem(std::size_t d, std::size_t r, double sigma,
                                                Rng& rng) {
  NOISEREG_REQUIRE(r >= 1 && r <= d, "make_rectangular_problem: need 1 <= r <= d, got r=" +
                                        std::to_string(r) + ", d=" + std::to_string(d));
  const std::uint64_t seed = rng.state().seed;
  DenseMatrix u = sample_gaussian_matrix(d, r, 1.0, rng);
  DenseMatrix v = sample_gaussian_matrix(d, r, 1.0, rng);
  DenseMatrix gamma = sample_gaussian_matrix(d, d, sigma, rng);
  return make_problem_from_parts(ProblemKind::rectangular, std::move(u), std::move(v),
                                 std::move(gamma), sigma, seed);
}

namespace detail {

inline void require_square_iterate(const DenseMatrix& x, const RecoveryProblem& p,
                                   const char* what) {
  NOISEREG_REQUIRE(x.rows() == p.d && x.cols() == p.d, std::string(what) + ": iterate must be " +
                                                  std::to_string(p.d) + "x" +
                                                  std::to_string(p.d) + ", got " + shape_str(x));
}

}  // namespace detail

/// F(X) = 1/4 ||X X^T - Y||_F^2.
inline double loss(const DenseMatrix& x, const RecoveryProblem& p) {
  detail::require_square_iterate(x, p, "loss");
  return 0.25 * frobenius_distance_sq(gram(x), p.y_observed);
}

/// grad F(X) = (X X^T - Y_sym) X.
inline DenseMatrix gradient(const DenseMatrix& x, const RecoveryProblem& p) {
  detail::require_square_iterate(x, p, "gradient");
  return matmul(gram(x) - p.y_sym, x);
}

/// E_W[grad F(X + W)] for W with independent UNIF(S(nu)) columns:
/// grad F(X) + (2d + 1)(nu^2 / d) X.
inline DenseMatrix smoothed_gradient_exact(const DenseMatrix& x, const RecoveryProblem& p,
                                           double nu) {
  NOISEREG_REQUIRE(nu >= 0.0, "smoothed_gradient_exact: nu must be >= 0");
  DenseMatrix g = gradient(x, p);
  const double dd = static_cast<double>(p.d);
  const double shrink = (2.0 * dd + 1.0) * nu * nu / dd;
  for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] += shrink * x.data()[k];
  return g;
}

/// 1/2 ||U V^T - Y||_F^2.
inline double rect_loss(const RectFactorPair& f, const RecoveryProblem& p) {
  NOISEREG_REQUIRE(p.kind == ProblemKind::rectangular, "rect_loss: problem is not rectangular");
  detail::require_square_iterate(f.u, p, "rect_loss");
  detail::require_square_iterate(f.v, p, "rect_loss");
  return 0.5 * frobenius_distance_sq(matmul_transpose(f.u, f.v), p.y_observed);
}

/// ((U V^T - Y) V, (U V^T - Y)^T U).
inline std::pair<DenseMatrix, DenseMatrix> rect_gradients(const RectFactorPair& f,
                                                          const RecoveryProblem& p) {
  NOISEREG_REQUIRE(p.kind == ProblemKind::rectangular,
                  "rect_gradients: problem is not rectangular");
  detail::require_square_iterate(f.u, p, "rect_gradients");
  detail::require_square_iterate(f.v, p, "rect_gradients");
  const DenseMatrix residual = matmul_transpose(f.u, f.v) - p.y_observed;
  return {matmul(residual, f.v), transpose_matmul(residual, f.u)};
}

// JSON round trip. Matrices are arrays of rows; doubles are written with
// shortest round-trip precision so reconstruction is exact.

inline nlohmann::json matrix_to_json(const DenseMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

inline DenseMatrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("matrix JSON must be an array of rows");
  const std::size_t rows = j.size();
  if (rows == 0) return {};
  const std::size_t cols = j.at(0).size();
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& r : j) {
    if (!r.is_array() || r.size() != cols)
      throw std::invalid_argument("matrix JSON rows must be arrays of equal length");
    for (const auto& v : r) data.push_back(v.get<double>());
  }
  return DenseMatrix(rows, cols, std::move(data));
}

inline nlohmann::json problem_to_json(const RecoveryProblem& p) {
  nlohmann::json j;
  j["kind"] = std::string(to_string(p.kind));
  j["d"] = p.d;
  j["r"] = p.rank;
  j["sigma"] = p.sigma;
  j["seed"] = p.seed;
  j["factor"] = matrix_to_json(p.ground_truth_factor);
  if (p.kind == ProblemKind::rectangular) j["factor_v"] = matrix_to_json(p.ground_truth_factor_v);
  j["gamma"] = matrix_to_json(p.gamma);
  return j;
}

inline RecoveryProblem problem_from_json(const nlohmann::json& j) {
  const ProblemKind kind = problem_kind_from_string(j.at("kind").get<std::string>());
  DenseMatrix factor = matrix_from_json(j.at("factor"));
  DenseMatrix factor_v = kind == ProblemKind::rectangular ? matrix_from_json(j.at("factor_v"))
                                                          : DenseMatrix{};
  RecoveryProblem p = make_problem_from_parts(kind, std::move(factor), std::move(factor_v),
                                              matrix_from_json(j.at("gamma")),
                                              j.at("sigma").get<double>(),
                                              j.value("seed", std::uint64_t{0}));
  if (p.d != j.at("d").get<std::size_t>() || p.rank != j.at("r").get<std::size_t>())
    throw std::invalid_argument("problem JSON: d/r fields disagree with payload shapes");
  return p;
}

/// FNV-1a over the serialized problem; used to check that paired trials saw
/// the same instance.
inline std::uint64_t problem_fingerprint(const RecoveryProblem& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : problem_to_json(p).dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace noisereg
