#include <cmath>
#include <stdexcept>

#include <gtest/gtest.h>

#include "noisereg/diagnostics.hpp"
#include "test_util.hpp"

using namespace noisereg;
using testutil::random_matrix;

namespace {

RecoveryProblem rank_one(std::size_t d, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  return make_rank_one_problem(d, Vector(d, 1.0), sigma, rng);
}

RecoveryProblem unit_problem(std::size_t d, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  return make_rank_one_problem(d, Vector(d, 1.0 / std::sqrt(static_cast<double>(d))), sigma, rng);
}

RecoveryProblem with_gamma(const RecoveryProblem& p, DenseMatrix gamma) {
  return make_problem_from_parts(ProblemKind::psd, p.ground_truth_factor, DenseMatrix{}, std::move(gamma),
                                 p.sigma, p.seed);
}

// Every sample at X = x* e1^T, i.e. X X^T = Y* exactly.
Trajectory frozen_at_truth(const RecoveryProblem& p, std::uint64_t horizon) {
  DenseMatrix x(p.d, p.d);
  for (std::size_t i = 0; i < p.d; ++i) x(i, 0) = p.ground_truth_factor(i, 0);
  OptimizerConfig c;
  c.eta = 0.0;
  c.nu = 0.0;
  c.horizon_t = horizon;
  c.metric_stride = 10;
  c.init = {InitVariant::explicit_matrix, x, {}};
  return run(p, c);
}

}  // namespace

TEST(AssumptionNoise, NoiselessPassesNoiseBounds) {
  const AssumptionReport rep = check_assumption_noise(rank_one(5, 0.0, 1), 1.0, 1.0);
  EXPECT_TRUE(rep.all_passed());
  EXPECT_EQ(rep.at("gamma_sym_fro").measured, 0.0);
  EXPECT_EQ(rep.at("x_star_norm").measured, std::sqrt(5.0));
}

TEST(AssumptionNoise, AdversarialGammaFailsFrobenius) {
  const std::size_t d = 6;
  const double sigma = 0.01;
  const RecoveryProblem base = rank_one(d, sigma, 2);
  const RecoveryProblem p = with_gamma(base, DenseMatrix::identity(d) * (10.0 * d * sigma));
  const AssumptionReport rep = check_assumption_noise(p, 1.0, 10.0);
  EXPECT_FALSE(rep.at("gamma_sym_fro").passed);
  EXPECT_GT(rep.at("gamma_sym_fro").measured, rep.at("gamma_sym_fro").threshold);
  EXPECT_FALSE(rep.all_passed());
}

TEST(AssumptionNoise, ThresholdsAreInTheNormalizedFrame) {
  const RecoveryProblem p = rank_one(4, 0.2, 3);
  const AssumptionReport rep = check_assumption_noise(p, 0.0, 1.0);
  const double sigma_hat = 0.2 / 4.0;
  EXPECT_DOUBLE_EQ(rep.at("sigma_d").measured, sigma_hat * 4.0);
  EXPECT_DOUBLE_EQ(rep.at("gamma_sym_fro").threshold, 2.0 * 4.0 * sigma_hat);
  EXPECT_DOUBLE_EQ(rep.at("gamma_sym_spectral").threshold, 2.0 * sigma_hat);
  EXPECT_EQ(rep.to_json().size(), 5u);
}

TEST(AssumptionNoise, ConcentrationAtLooseConstant) {
  const PassRate pr = noise_concentration_sweep(30, std::sqrt(0.1), 10.0, 200, 4);
  EXPECT_EQ(pr.n, 200u);
  EXPECT_GE(pr.rate(), 0.95);
}

TEST(AssumptionNoise, ConcentrationAtThreeLemmaScale) {
  // max{||Gamma_sym u*||, ||Gamma_sym||_2} <= 3 sqrt(d) sigma over 500 draws.
  const PassRate pr = noise_concentration_sweep(30, std::sqrt(0.1), 3.0, 500, 5);
  EXPECT_GE(pr.rate(), 0.99);
}

TEST(AssumptionNoise, RejectsRankR) {
  Rng rng(6);
  EXPECT_THROW(check_assumption_noise(make_rank_r_problem(4, 2, 0.1, rng), 1.0, 1.0), std::invalid_argument);
}

TEST(AssumptionInit, ZeroIsTheSaddle) {
  const RecoveryProblem p = unit_problem(10, 0.001, 7);
  const AssumptionReport rep = check_assumption_init(DenseMatrix(10, 10), p, 1.0);
  EXPECT_TRUE(rep.at("x0_fro_sq").passed);
  EXPECT_FALSE(rep.at("x0_signal_sq").passed);
}

TEST(AssumptionInit, NearTruthPassesBoth) {
  const RecoveryProblem p = unit_problem(10, 1e-4, 8);
  const Vector u = p.x_star();
  const AssumptionReport rep = check_assumption_init(outer(u, u) * 0.9, p, 1.0);
  EXPECT_NEAR(rep.at("x0_fro_sq").measured, 0.81, 1e-12);
  EXPECT_NEAR(rep.at("x0_signal_sq").measured, 0.81, 1e-12);
  EXPECT_TRUE(rep.all_passed());
}

TEST(AssumptionInit, BallInitSmallNoiseRate) {
  // Small-noise regime: sigma^2 = 0.1 / 30^2 on a unit x*.
  // The rate is only reported; the acceptance threshold applies at C = 0.5.
  const PassRate strict = init_ball_sweep(30, std::sqrt(0.1) / 30.0, 1.0, 1000, 9);
  EXPECT_EQ(strict.n, 1000u);
  RecordProperty("rate_c1", std::to_string(strict.rate()));
  const PassRate pr = init_ball_sweep(30, std::sqrt(0.1) / 30.0, 0.5, 1000, 9);
  EXPECT_GT(pr.rate(), 0.5);
  EXPECT_GE(pr.rate(), strict.rate());
}

TEST(DissipativityProbe, ZeroOrthogonalPartForPdE) {
  const RecoveryProblem p = unit_problem(6, 0.01, 10);
  const DenseMatrix x = outer(p.x_star(), Vector{0.5, 0.1, 0.0, 0.2, 0.0, 0.3});
  const DissipativityEstimate est = dissipativity_probe(x, p, 0.2, DissipativityKind::pd_E, 200, {11, 0});
  EXPECT_NEAR(est.lhs_closed_form, 0.0, 1e-14);
  EXPECT_LE(est.rhs_bound, 0.0);
  EXPECT_TRUE(est.satisfied);
  EXPECT_EQ(est.mc_samples, 200u);
}

TEST(DissipativityProbe, NoiselessPdEClosedForm) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t d = 3 + s % 5;
    const RecoveryProblem p = unit_problem(d, 0.0, 12);
    Rng rng(derive_seed(13, {s}));
    const DenseMatrix x = random_matrix(d, d, rng, 0.5);
    const double nu = 0.3;
    const DissipativityEstimate est = dissipativity_probe(x, p, nu, DissipativityKind::pd_E, 10, {14, s});
    const double e2 = frobenius_norm_sq(decompose(x, p.x_star()).e);
    const double dd = static_cast<double>(d);
    EXPECT_GE(est.lhs_closed_form, (2.0 * dd + 1.0) * nu * nu / dd * e2 - 1e-12);
    EXPECT_NEAR(est.rhs_bound, (2.0 * dd + 1.0) * nu * nu / dd * e2, 1e-12);
  }
}

TEST(DissipativityProbe, MonteCarloAgreesWithClosedForm) {
  const RecoveryProblem p = rank_one(5, 0.1, 15);
  Rng rng(16);
  for (DissipativityKind k : {DissipativityKind::pd_E}) {
    for (int rep = 0; rep < 3; ++rep) {
      const DenseMatrix x = random_matrix(5, 5, rng, 0.6);
      const DissipativityEstimate est = dissipativity_probe(x, p, 0.5, k, 10'000, {17, std::uint64_t(rep)});
      EXPECT_LE(std::abs(est.lhs - est.lhs_closed_form), 4.0 * est.mc_std_err);
    }
  }
  // pd_r and pd_r2 on states inside their regions.
  const RecoveryProblem pn = unit_problem(5, 0.01, 18);
  const NormalizedFrame f = NormalizedFrame::of(pn);
  const double nu = 0.2;
  const DissipativityTerms base = dissipativity_terms(decompose(DenseMatrix(5, 5), f.u_star), f, nu);
  const DenseMatrix xr = sample_decomposed_state(f, base.a + 0.5, base.a + 0.5, 0.2, 0.2, rng);
  const auto er = dissipativity_probe(xr, pn, nu, DissipativityKind::pd_r, 10'000, {19, 0});
  EXPECT_LE(std::abs(er.lhs - er.lhs_closed_form), 4.0 * er.mc_std_err);
  EXPECT_TRUE(er.satisfied);
  const DenseMatrix xr2 = sample_decomposed_state(f, 0.5 * base.a, 0.5 * base.a, 0.0, 0.0, rng);
  const auto er2 = dissipativity_probe(xr2, pn, nu, DissipativityKind::pd_r2, 10'000, {20, 0});
  EXPECT_LE(std::abs(er2.lhs - er2.lhs_closed_form), 4.0 * er2.mc_std_err);
  EXPECT_TRUE(er2.satisfied);
}

TEST(DissipativityProbe, RegionErrorsNameTheInequality) {
  const RecoveryProblem pn = unit_problem(5, 0.01, 21);
  const NormalizedFrame f = NormalizedFrame::of(pn);
  const double nu = 0.2;
  const DissipativityTerms base = dissipativity_terms(decompose(DenseMatrix(5, 5), f.u_star), f, nu);
  Rng rng(22);
  const DenseMatrix small_r = sample_decomposed_state(f, 0.5 * base.a, 0.5 * base.a, 0.0, 0.0, rng);
  try {
    dissipativity_probe(small_r, pn, nu, DissipativityKind::pd_r, 10, {23, 0});
    FAIL() << "expected RegionError";
  } catch (const RegionError& e) {
    EXPECT_EQ(e.inequality(), "||r||^2 >= a");
  }
  const DenseMatrix big_e = sample_decomposed_state(f, 0.5 * base.a, 0.5 * base.a, 1.0, 1.0, rng);
  EXPECT_THROW(dissipativity_probe(big_e, pn, nu, DissipativityKind::pd_r2, 10, {24, 0}), RegionError);
  const DenseMatrix big_r = sample_decomposed_state(f, base.a + 0.3, base.a + 0.3, 0.0, 0.0, rng);
  EXPECT_THROW(dissipativity_probe(big_r, pn, nu, DissipativityKind::pd_r2, 10, {25, 0}), RegionError);
}

TEST(DissipativitySweep, PdRAtDimensionEight) {
  const RecoveryProblem pn = unit_problem(8, 0.01, 26);
  const double nu = std::sqrt(0.4 * std::sqrt(8.0 * 0.01 * 0.01));
  const DissipativitySweep sw = dissipativity_sweep(pn, nu, DissipativityKind::pd_r, 1000, 50, 27);
  EXPECT_EQ(sw.states, 1000u);
  EXPECT_EQ(sw.in_region, 1000u);
  EXPECT_EQ(sw.rate(), 1.0);
}

TEST(DissipativitySweep, RequiresNormalizedProblem) {
  EXPECT_THROW(dissipativity_sweep(rank_one(4, 0.1, 28), 0.1, DissipativityKind::pd_E, 1, 1, 29),
               std::invalid_argument);
}

TEST(TrajectoryLemmas, FrozenAtTruthPassesAll) {
  const RecoveryProblem p = rank_one(8, 0.1, 30);
  const Trajectory tr = frozen_at_truth(p, 100);
  const DiagnosticsReport rep = check_trajectory_lemmas(tr, p, {}, 0.5);
  ASSERT_EQ(rep.entries.size(), 5u);
  for (const auto& e : rep.entries) {
    EXPECT_TRUE(e.passed) << e.check_name;
    EXPECT_EQ(e.pass_rate, 1.0) << e.check_name;
  }
  EXPECT_NEAR(rep.at("lemma_bounded").measured, 1.0, 1e-14);
  EXPECT_NEAR(rep.at("lemma_e_band").measured, 0.0, 1e-14);
  EXPECT_NEAR(rep.at("lemma_r_band").measured, 0.0, 1e-14);
  EXPECT_EQ(rep.to_json().size(), 5u);
}

TEST(TrajectoryLemmas, MonotoneInConstantsProperty) {
  const RecoveryProblem p = rank_one(8, std::sqrt(0.1), 31);
  const Hyperparameters h = suggested_hyperparameters(p, 0.1);
  OptimizerConfig c;
  c.eta = h.eta;
  c.nu = h.nu;
  c.horizon_t = 20'000;
  c.metric_stride = 200;
  c.seed = 32;
  const Trajectory tr = run(p, c);
  for (double base : {0.01, 0.1, 0.5, 1.0, 2.0}) {
    const DiagnosticsReport small = check_trajectory_lemmas(tr, p, {base, base, base}, 0.5);
    const DiagnosticsReport large = check_trajectory_lemmas(tr, p, {2 * base, 2 * base, 2 * base}, 0.5);
    for (const auto& e : small.entries) {
      const ReportEntry& l = large.at(e.check_name);
      EXPECT_GE(l.pass_rate, e.pass_rate) << e.check_name;
      if (e.passed) EXPECT_TRUE(l.passed) << e.check_name;
    }
  }
}

TEST(TrajectoryLemmas, RejectsTrajectoriesWithoutSubspaceFields) {
  const RecoveryProblem p = rank_one(4, 0.1, 33);
  Trajectory tr = frozen_at_truth(p, 10);
  tr.samples[1].e_fro_sq.reset();
  EXPECT_THROW(check_trajectory_lemmas(tr, p, {}, 0.5), std::invalid_argument);
  EXPECT_THROW(check_trajectory_lemmas(frozen_at_truth(p, 10), p, {}, 1.5), std::invalid_argument);
}

TEST(TrajectoryLemmas, GdContrastMissesTheEBand) {
  // Plain GD from a large init keeps E_t well outside the sqrt(d sigma^2)
  // band, unlike P-GD.
  const std::size_t d = 16;
  const RecoveryProblem p = rank_one(d, std::sqrt(0.1), 34);
  const Hyperparameters h = suggested_hyperparameters(p, 0.1);
  OptimizerConfig c;
  c.eta = h.eta;
  c.nu = 0.0;
  c.horizon_t = 200'000;
  c.metric_stride = 2000;
  c.seed = 35;
  const Trajectory gd = run(p, c);
  EXPECT_FALSE(check_trajectory_lemmas(gd, p, {2.0, 5.0, 5.0}, 0.5).at("lemma_e_band").passed);
  c.nu = h.nu;
  const Trajectory pgd = run(p, c);
  const double e_gd = check_trajectory_lemmas(gd, p, {2.0, 5.0, 5.0}, 0.5).at("lemma_e_band").measured;
  const double e_pgd = check_trajectory_lemmas(pgd, p, {2.0, 5.0, 5.0}, 0.5).at("lemma_e_band").measured;
  EXPECT_LT(e_pgd, e_gd);
}

TEST(DriftProbe, ZeroStepSizeIsExact) {
  const RecoveryProblem p = rank_one(6, 0.2, 36);
  Rng rng(37);
  const DenseMatrix x = random_matrix(6, 6, rng);
  OptimizerConfig c;
  c.eta = 0.0;
  c.nu = 0.3;
  const DriftParams dp{0.01, 1.0, 0.0};
  const MartingaleProbe m = martingale_drift_probe(x, p, c, DriftFunction::e_fro_sq, dp, 100, {38, 0});
  // Every resample equals g_now; the mean only picks up summation rounding.
  EXPECT_NEAR(m.conditional_mean, m.g_now, 1e-12 * m.g_now);
  EXPECT_LT(m.max_deviation, 1e-12 * m.g_now);
  EXPECT_EQ(m.drift_bound, m.g_now);
  EXPECT_TRUE(m.satisfied);
}

TEST(DriftProbe, AdversarialBetaFails) {
  const std::size_t d = 8;
  const RecoveryProblem p = rank_one(d, std::sqrt(0.1), 39);
  const Hyperparameters h = suggested_hyperparameters(p, 0.1);
  Rng rng(40);
  const DenseMatrix x = random_matrix(d, d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  OptimizerConfig c;
  c.eta = h.eta;
  c.nu = h.nu;
  DriftParams dp = e_fro_drift_params(p, h.nu);
  const NormalizedFrame f = NormalizedFrame::of(p);
  // Contraction at a rate no single small step can deliver.
  dp.beta = 100.0 / f.eta(c.eta);
  dp.alpha0 = 0.0;
  const MartingaleProbe m = martingale_drift_probe(x, p, c, DriftFunction::e_fro_sq, dp, 200, {41, 0});
  EXPECT_FALSE(m.satisfied);
  EXPECT_THROW(martingale_drift_probe(x, p, c, DriftFunction::e_fro_sq, dp, 99, {41, 0}),
               std::invalid_argument);
}

TEST(DriftProbe, ParamsFollowTheShrinkRule) {
  const RecoveryProblem p = rank_one(8, 0.2, 42);
  const NormalizedFrame f = NormalizedFrame::of(p);
  const double nu = 0.5;
  const DriftParams dp = e_fro_drift_params(p, nu);
  const double nh = f.nu(nu);
  const double beta = 2.0 * (17.0 * nh * nh / 8.0 - spectral_norm(f.gamma_sym));
  EXPECT_NEAR(dp.beta, beta, 1e-10);
  EXPECT_NEAR(dp.alpha0, norm2_sq(matvec(f.gamma_sym, f.u_star)) / (2.0 * beta), 1e-10);
  EXPECT_EQ(dp.lambda, 0.0);
}

TEST(DriftProbe, DriftFunctionValues) {
  const Vector u{1.0, 0.0};
  const DenseMatrix x{{0.5, 0.5}, {1.0, 0.0}};
  // r = (0.5, 0.5), E has row 2 = (1, 0).
  EXPECT_NEAR(drift_function_value(DriftFunction::e_fro_sq, x, u), 1.0, 1e-15);
  EXPECT_NEAR(drift_function_value(DriftFunction::r_dist, x, u), 0.5, 1e-15);
  EXPECT_NEAR(drift_function_value(DriftFunction::er_norm_sq, x, u), 0.25, 1e-15);
}

TEST(ReportEntries, JsonShapeAndThresholds) {
  const ReportEntry e = to_entry("x", PassRate{10, 9}, 0.95, "note");
  EXPECT_FALSE(e.passed);
  EXPECT_DOUBLE_EQ(e.pass_rate, 0.9);
  const nlohmann::json j = to_json(e);
  for (const char* k : {"check_name", "measured", "bound", "pass_rate", "n", "notes"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_TRUE(to_entry("y", PassRate{10, 10}, 0.95, "").passed);
  DiagnosticsReport rep;
  rep.add(e);
  EXPECT_EQ(rep.find("missing"), nullptr);
  EXPECT_THROW((void)rep.at("missing"), std::out_of_range);
}
