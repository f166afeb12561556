#include <cmath>
#include <stdexcept>

#include <gtest/gtest.h>

#include "noisereg/decomposition.hpp"
#include "noisereg/optimizer.hpp"
#include "test_util.hpp"

using namespace noisereg;
using testutil::random_matrix;

namespace {

Vector random_unit(std::size_t d, Rng& rng) {
  Vector u(d);
  for (double& v : u) v = rng.normal();
  const double n = norm2(u);
  for (double& v : u) v /= n;
  return u;
}

}  // namespace

TEST(Decompose, PureSignal) {
  const Vector u{0.6, 0.8, 0.0};
  const Vector v{1.0, -2.0, 3.0};
  const SubspaceDecomposition dec = decompose(outer(u, v), u);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(dec.r[j], v[j], 1e-15);
  EXPECT_LT(max_abs(dec.e), 1e-15);
}

TEST(Decompose, PureOrthogonal) {
  const Vector u{1.0, 0.0, 0.0};
  const DenseMatrix x{{0.0, 0.0, 0.0}, {1.0, 2.0, 3.0}, {-1.0, 0.5, 4.0}};
  const SubspaceDecomposition dec = decompose(x, u);
  EXPECT_EQ(dec.r, Vector(3, 0.0));
  EXPECT_EQ(dec.e, x);
}

TEST(Decompose, ReconstructionAndOrthogonalityProperty) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(derive_seed(1, {s}));
    const std::size_t d = 2 + s % 12;
    const Vector u = random_unit(d, rng);
    const DenseMatrix x = random_matrix(d, d, rng);
    const SubspaceDecomposition dec = decompose(x, u);
    EXPECT_LT(max_abs_diff(outer(u, dec.r) + dec.e, x), 1e-12);
    for (double v : transpose_matvec(dec.e, u)) EXPECT_LT(std::abs(v), 1e-12);
  }
}

TEST(Decompose, RejectsNonUnitDirection) {
  EXPECT_THROW(decompose(DenseMatrix(2, 2), Vector{1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(decompose(DenseMatrix(3, 3), Vector{1.0, 0.0}), std::invalid_argument);
}

TEST(ErrorDecomposition, ExactRecovery) {
  const Vector u{0.0, 1.0, 0.0};
  const DenseMatrix x = outer(u, u);
  const ErrorTerms t = error_decomposition(decompose(x, u), x, outer(u, u));
  EXPECT_EQ(t.signal, 0.0);
  EXPECT_EQ(t.cross, 0.0);
  EXPECT_EQ(t.orthogonal, 0.0);
  EXPECT_EQ(t.total, 0.0);
}

TEST(ErrorDecomposition, ZeroIterate) {
  const Vector u{0.0, 1.0, 0.0};
  const DenseMatrix x(3, 3);
  const ErrorTerms t = error_decomposition(decompose(x, u), x, outer(u, u));
  EXPECT_EQ(t.signal, 1.0);
  EXPECT_EQ(t.cross, 0.0);
  EXPECT_EQ(t.orthogonal, 0.0);
  EXPECT_EQ(t.total, 1.0);
}

TEST(ErrorDecomposition, IdentityProperty) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(derive_seed(2, {s}));
    const std::size_t d = 2 + s % 9;
    const Vector u = random_unit(d, rng);
    const DenseMatrix x = random_matrix(d, d, rng, 0.5);
    const ErrorTerms t = error_decomposition(decompose(x, u), x, outer(u, u));
    EXPECT_NEAR(t.signal + t.cross + t.orthogonal, t.total, 1e-10 * std::max(1.0, t.total));
  }
}

TEST(ErrorDecomposition, RejectsWrongTarget) {
  const Vector u{1.0, 0.0};
  const DenseMatrix x = DenseMatrix::identity(2);
  EXPECT_THROW(error_decomposition(decompose(x, u), x, DenseMatrix::identity(2)),
               std::invalid_argument);
  EXPECT_THROW(error_decomposition(decompose(x, u), DenseMatrix(3, 3), outer(u, u)),
               std::invalid_argument);
}

TEST(NormalizedFrame, ScalesMatchDefinitions) {
  Rng rng(3);
  const RecoveryProblem p = make_rank_one_problem(4, Vector(4, 1.0), 0.3, rng);
  const NormalizedFrame f = NormalizedFrame::of(p);
  EXPECT_DOUBLE_EQ(f.scale, 4.0);
  EXPECT_DOUBLE_EQ(f.sigma, 0.3 / 4.0);
  EXPECT_DOUBLE_EQ(f.nu(1.0), 0.5);
  EXPECT_DOUBLE_EQ(f.eta(0.1), 0.4);
  for (double v : f.u_star) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_LT(max_abs_diff(f.gamma_sym, p.gamma_sym() * 0.25), 1e-15);
}

TEST(NormalizedFrame, RejectsRankR) {
  Rng rng(4);
  EXPECT_THROW(NormalizedFrame::of(make_rank_r_problem(4, 2, 0.1, rng)), std::invalid_argument);
}

TEST(NormalizedFrame, StepCommutesWithScalingProperty) {
  // Mapping X, W, eta into the unit frame and stepping there equals stepping
  // in the raw frame and mapping afterwards.
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(derive_seed(5, {s}));
    const std::size_t d = 2 + s % 7;
    Vector xs(d);
    for (double& v : xs) v = 1.0 + rng.uniform01();
    const RecoveryProblem p = make_rank_one_problem(d, xs, 0.2, rng);
    const RecoveryProblem q = normalized_problem(p);
    const NormalizedFrame f = NormalizedFrame::of(p);
    const DenseMatrix x = random_matrix(d, d, rng);
    const DenseMatrix w = sample_sphere_columns(d, d, 0.3, rng);
    const double eta = 1e-3;
    const DenseMatrix raw = f.iterate(pgd_step(x, p, eta, w));
    const DenseMatrix unit = pgd_step(f.iterate(x), q, f.eta(eta), f.iterate(w));
    EXPECT_LT(max_abs_diff(raw, unit), 1e-12 * std::max(1.0, max_abs(raw)));
  }
}

TEST(NormalizedFrame, RecoveryErrorScalesBySquare) {
  Rng rng(6);
  const RecoveryProblem p = make_rank_one_problem(5, Vector(5, 1.0), 0.2, rng);
  const RecoveryProblem q = normalized_problem(p);
  const NormalizedFrame f = NormalizedFrame::of(p);
  const DenseMatrix x = random_matrix(5, 5, rng);
  const double raw = frobenius_distance_sq(gram(x), p.y_star);
  const double unit = frobenius_distance_sq(gram(f.iterate(x)), q.y_star);
  EXPECT_NEAR(raw, unit * f.scale * f.scale, 1e-10 * raw);
  EXPECT_LT(max_abs_diff(q.gamma_sym(), f.gamma_sym), 1e-15);
}
