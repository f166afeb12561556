#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "noisereg/decomposition.hpp"
#include "noisereg/matrix.hpp"
#include "noisereg/optimizer.hpp"
#include "noisereg/problem.hpp"
#include "noisereg/random.hpp"
#include "noisereg/stats.hpp"

namespace noisereg {

// ---------------------------------------------------------------------------
// Reports

struct ReportEntry {
  std::string check_name;
  double measured = 0.0;
  double bound = 0.0;
  double pass_rate = 0.0;
  std::size_t n = 0;
  std::string notes;
  bool passed = false;
};

inline nlohmann::json to_json(const ReportEntry& e) {
  return {{"check_name", e.check_name}, {"measured", e.measured}, {"bound", e.bound},
          {"pass_rate", e.pass_rate},   {"n", e.n},               {"notes", e.notes},
          {"passed", e.passed}};
}

struct DiagnosticsReport {
  std::vector<ReportEntry> entries;

  void add(ReportEntry e) { entries.push_back(std::move(e)); }

  [[nodiscard]] const ReportEntry* find(std::string_view name) const {
    for (const auto& e : entries)
      if (e.check_name == name) return &e;
    return nullptr;
  }

  [[nodiscard]] const ReportEntry& at(std::string_view name) const {
    if (const ReportEntry* e = find(name)) return *e;
    throw std::out_of_range("DiagnosticsReport: no entry '" + std::string(name) + "'");
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries) j.push_back(noisereg::to_json(e));
    return j;
  }
};

// ---------------------------------------------------------------------------
// Assumption checks

struct AssumptionCheck {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool upper = true;  // measured <= threshold when true, >= otherwise
  bool passed = false;
};

struct AssumptionReport {
  std::vector<AssumptionCheck> checks;

  [[nodiscard]] bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }

  [[nodiscard]] const AssumptionCheck& at(std::string_view name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    throw std::out_of_range("AssumptionReport: no check '" + std::string(name) + "'");
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : checks)
      j.push_back({{"name", c.name},
                   {"measured", c.measured},
                   {"threshold", c.threshold},
                   {"relation", c.upper ? "<=" : ">="},
                   {"passed", c.passed}});
    return j;
  }
};

namespace detail {

inline AssumptionCheck at_most(std::string name, double measured, double threshold) {
  return {std::move(name), measured, threshold, true, measured <= threshold};
}

inline AssumptionCheck at_least(std::string name, double measured, double threshold) {
  return {std::move(name), measured, threshold, false, measured >= threshold};
}

inline void require_rank_one(const RecoveryProblem& p, const char* what) {
  if (!p.has_signal_direction())
    throw std::invalid_argument(std::string(what) + ": requires a rank-1 PSD problem");
}

}  // namespace detail

/// Noise assumptions. ||x*|| is reported as given; everything else is measured
/// in the normalized frame (sigma -> sigma/||x*||^2, Gamma -> Gamma/||x*||^2).
inline AssumptionReport check_assumption_noise(const RecoveryProblem& p, double c0, double c1) {
  detail::require_rank_one(p, "check_assumption_noise");
  const NormalizedFrame f = NormalizedFrame::of(p);
  const double d = static_cast<double>(p.d);
  const double sigma = f.sigma;
  AssumptionReport rep;
  rep.checks.push_back(detail::at_least("x_star_norm", std::sqrt(f.scale), c0));
  rep.checks.push_back(detail::at_most("sigma_d", sigma * d, c1));
  rep.checks.push_back(detail::at_most("gamma_sym_fro", frobenius_norm(f.gamma_sym), 2.0 * d * sigma));
  const double spread = c1 * std::sqrt(d) * sigma;
  rep.checks.push_back(detail::at_most("gamma_sym_x_star", norm2(matvec(f.gamma_sym, f.u_star)), spread));
  rep.checks.push_back(detail::at_most("gamma_sym_spectral", spectral_norm(f.gamma_sym), spread));
  return rep;
}

/// Initialization assumptions in the normalized frame:
/// ||X0||_F^2 <= 1 - c1 sqrt(d sigma^2) and ||X0^T u*||^2 >= c2^2 d sigma^2.
/// c2 defaults to c1.
inline AssumptionReport check_assumption_init(const DenseMatrix& x0, const RecoveryProblem& p,
                                              double c1, std::optional<double> c2 = std::nullopt) {
  detail::require_rank_one(p, "check_assumption_init");
  detail::require_square_iterate(x0, p, "check_assumption_init");
  const NormalizedFrame f = NormalizedFrame::of(p);
  const double d = static_cast<double>(p.d);
  const double ds2 = d * f.sigma * f.sigma;
  const double c = c2.value_or(c1);
  const DenseMatrix xn = f.iterate(x0);
  AssumptionReport rep;
  rep.checks.push_back(detail::at_most("x0_fro_sq", frobenius_norm_sq(xn), 1.0 - c1 * std::sqrt(ds2)));
  rep.checks.push_back(detail::at_least("x0_signal_sq", norm2_sq(transpose_matvec(xn, f.u_star)), c * c * ds2));
  return rep;
}

// ---------------------------------------------------------------------------
// Dissipativity

enum class DissipativityKind { pd_E, pd_r, pd_r2 };

inline std::string_view to_string(DissipativityKind k) {
  switch (k) {
    case DissipativityKind::pd_E: return "pd_E";
    case DissipativityKind::pd_r: return "pd_r";
    case DissipativityKind::pd_r2: return "pd_r2";
  }
  return "?";
}

/// Thrown when a probe is asked about a state outside the region where the
/// inequality is claimed.
class RegionError : public std::invalid_argument {
 public:
  RegionError(std::string inequality, double lhs, double rhs)
      : std::invalid_argument("state outside region: " + inequality + " fails (" +
                              std::to_string(lhs) + " vs " + std::to_string(rhs) + ")"),
        inequality_(std::move(inequality)) {}
  [[nodiscard]] const std::string& inequality() const noexcept { return inequality_; }

 private:
  std::string inequality_;
};

struct DissipativityOptions {
  /// Constant c of the pd_r2 region and bound.
  double c = 1.0;
  /// The pd_r2 region bounds ||E||_F^2 by c^2 ||Gamma_sym u*||; when true it uses
  /// c^2 ||Gamma_sym u*||^2 instead, which is what the bound's derivation needs.
  bool squared_e_region = false;
};

struct DissipativityEstimate {
  DissipativityKind which = DissipativityKind::pd_E;
  double lhs = 0.0;              // Monte-Carlo mean
  double lhs_closed_form = 0.0;  // via the exact smoothed gradient
  double rhs_bound = 0.0;
  /// pd_E only: the variant with 1/4 ||Gamma_sym u*||^2 as the slack. Equals
  /// rhs_bound for the other kinds.
  double rhs_bound_alt = 0.0;
  double margin = 0.0;  // lhs - rhs_bound
  std::size_t mc_samples = 0;
  double mc_std_err = 0.0;
  bool satisfied = false;
  bool satisfied_alt = false;
};

/// Region and bound ingredients for one state, in the normalized frame.
struct DissipativityTerms {
  double r_sq = 0.0;
  double e_fro_sq = 0.0;
  double a = 0.0;            // 1 - (2d+1) nu^2 / d + u*^T Gamma_sym u*
  double shrink = 0.0;       // (2d+1) nu^2 / d
  double gamma_u_sq = 0.0;   // ||Gamma_sym u*||^2
  double gamma_spectral = 0.0;
};

inline DissipativityTerms dissipativity_terms(const SubspaceDecomposition& dec,
                                              const NormalizedFrame& f, double nu_hat) {
  const double d = static_cast<double>(dec.u_star.size());
  DissipativityTerms t;
  t.r_sq = norm2_sq(dec.r);
  t.e_fro_sq = frobenius_norm_sq(dec.e);
  t.shrink = (2.0 * d + 1.0) * nu_hat * nu_hat / d;
  const Vector gu = matvec(f.gamma_sym, f.u_star);
  t.gamma_u_sq = norm2_sq(gu);
  t.a = 1.0 - t.shrink + dot(f.u_star, gu);
  t.gamma_spectral = spectral_norm(f.gamma_sym);
  return t;
}

namespace detail {

inline void check_region(DissipativityKind which, const DissipativityTerms& t,
                         const DissipativityOptions& opt) {
  if (which == DissipativityKind::pd_r && t.r_sq < t.a)
    throw RegionError("||r||^2 >= a", t.r_sq, t.a);
  if (which == DissipativityKind::pd_r2) {
    const double gu = opt.squared_e_region ? t.gamma_u_sq : std::sqrt(t.gamma_u_sq);
    if (t.e_fro_sq > opt.c * opt.c * gu)
      throw RegionError(opt.squared_e_region ? "||E||_F^2 <= c^2 ||Gamma_sym u*||^2"
                                             : "||E||_F^2 <= c^2 ||Gamma_sym u*||",
                        t.e_fro_sq, opt.c * opt.c * gu);
    if (t.r_sq < t.gamma_u_sq) throw RegionError("||r||^2 >= ||Gamma_sym u*||^2", t.r_sq, t.gamma_u_sq);
    if (t.r_sq > t.a) throw RegionError("||r||^2 <= a", t.r_sq, t.a);
  }
}

/// The probed inner product for a given gradient-like field G.
inline double dissipativity_inner(DissipativityKind which, const SubspaceDecomposition& dec,
                                  const DenseMatrix& g) {
  if (which == DissipativityKind::pd_E) return inner_product(dec.e, g);
  // <r, G^T u*> = u*^T G r
  const double v = dot(dec.u_star, matvec(g, dec.r));
  return which == DissipativityKind::pd_r ? v : -v;
}

}  // namespace detail

/// Measures one dissipativity inequality at X (raw frame; nu raw). The inner
/// product is estimated by Monte-Carlo over W and also evaluated exactly through
/// the smoothed gradient. pd_E uses <E, grad>, pd_r uses <r, grad^T u*> and
/// pd_r2 its negative.
inline DissipativityEstimate dissipativity_probe(const DenseMatrix& x, const RecoveryProblem& p,
                                                 double nu, DissipativityKind which,
                                                 std::size_t resamples, RngState rng_state,
                                                 const DissipativityOptions& opt = {}) {
  detail::require_rank_one(p, "dissipativity_probe");
  detail::require_square_iterate(x, p, "dissipativity_probe");
  NOISEREG_REQUIRE(resamples >= 1, "dissipativity_probe: resamples must be >= 1");
  NOISEREG_REQUIRE(nu >= 0.0, "dissipativity_probe: nu must be >= 0");
  NOISEREG_REQUIRE(opt.c > 0.0, "dissipativity_probe: c must be > 0");
  const NormalizedFrame f = NormalizedFrame::of(p);
  const RecoveryProblem pn = normalized_problem(p);
  const DenseMatrix xn = f.iterate(x);
  const double nu_hat = f.nu(nu);
  const SubspaceDecomposition dec = decompose(xn, f.u_star);
  const DissipativityTerms t = dissipativity_terms(dec, f, nu_hat);
  detail::check_region(which, t, opt);

  DissipativityEstimate est;
  est.which = which;
  est.mc_samples = resamples;
  Rng rng = Rng::from_state(rng_state);
  std::vector<double> vals(resamples);
  DenseMatrix w(p.d, p.d);
  Vector scratch;
  for (std::size_t k = 0; k < resamples; ++k) {
    detail::fill_sphere_columns(w, nu_hat, rng, scratch);
    w += xn;
    vals[k] = detail::dissipativity_inner(which, dec, gradient(w, pn));
  }
  est.lhs = stats::mean(vals);
  est.mc_std_err = resamples > 1 ? stats::std_error(vals) : 0.0;
  est.lhs_closed_form =
      detail::dissipativity_inner(which, dec, smoothed_gradient_exact(xn, pn, nu_hat));

  switch (which) {
    case DissipativityKind::pd_E: {
      const double base = (t.shrink - t.gamma_spectral) * t.e_fro_sq;
      est.rhs_bound = base - 0.25 * t.gamma_spectral * t.gamma_spectral;
      est.rhs_bound_alt = base - 0.25 * t.gamma_u_sq;
      break;
    }
    case DissipativityKind::pd_r:
      est.rhs_bound = t.r_sq * (t.r_sq - t.a) - 0.25 * t.gamma_u_sq;
      est.rhs_bound_alt = est.rhs_bound;
      break;
    case DissipativityKind::pd_r2:
      est.rhs_bound = t.r_sq * (t.a - t.r_sq) - (opt.c * opt.c + opt.c) * t.gamma_u_sq;
      est.rhs_bound_alt = est.rhs_bound;
      break;
  }
  est.margin = est.lhs - est.rhs_bound;
  est.satisfied = est.lhs >= est.rhs_bound - 3.0 * est.mc_std_err;
  est.satisfied_alt = est.lhs >= est.rhs_bound_alt - 3.0 * est.mc_std_err;
  return est;
}

struct DissipativitySweep {
  DissipativityKind which = DissipativityKind::pd_E;
  std::size_t states = 0;
  std::size_t in_region = 0;
  std::size_t satisfied = 0;
  std::size_t satisfied_alt = 0;
  std::size_t closed_form_satisfied = 0;  // exact lhs >= rhs_bound, no MC tolerance
  double min_margin = 0.0;

  [[nodiscard]] double rate() const {
    return in_region ? static_cast<double>(satisfied) / static_cast<double>(in_region) : 0.0;
  }
  [[nodiscard]] double rate_alt() const {
    return in_region ? static_cast<double>(satisfied_alt) / static_cast<double>(in_region) : 0.0;
  }
};

/// Random state X = u* r^T + E (normalized frame) with ||r||^2 and ||E||_F^2
/// chosen uniformly in the given ranges and uniformly random directions.
inline DenseMatrix sample_decomposed_state(const NormalizedFrame& f, double r_sq_lo, double r_sq_hi,
                                           double e_sq_lo, double e_sq_hi, Rng& rng) {
  const std::size_t d = f.u_star.size();
  const double r_sq = r_sq_lo + (r_sq_hi - r_sq_lo) * rng.uniform01();
  const double e_sq = e_sq_lo + (e_sq_hi - e_sq_lo) * rng.uniform01();
  Vector r(d);
  for (double& v : r) v = rng.normal();
  const double rn = norm2(r);
  for (double& v : r) v *= std::sqrt(r_sq) / rn;
  DenseMatrix e = sample_gaussian_matrix(d, d, 1.0, rng);
  e = decompose(e, f.u_star).e;
  const double en = frobenius_norm(e);
  if (en > 0.0) e *= std::sqrt(e_sq) / en;
  DenseMatrix x = outer(f.u_star, r);
  x += e;
  return x;
}

/// Draws `states` states aimed at the region of `which` and probes each one.
/// States that turn out to lie outside the region are counted but not probed.
/// The problem should already be in the normalized frame.
inline DissipativitySweep dissipativity_sweep(const RecoveryProblem& p, double nu,
                                              DissipativityKind which, std::size_t states,
                                              std::size_t resamples, std::uint64_t seed,
                                              const DissipativityOptions& opt = {}) {
  detail::require_rank_one(p, "dissipativity_sweep");
  const NormalizedFrame f = NormalizedFrame::of(p);
  NOISEREG_REQUIRE(std::abs(f.scale - 1.0) < 1e-12,
                   "dissipativity_sweep: problem must be normalized (||x*|| = 1)");
  const DissipativityTerms base = dissipativity_terms(decompose(DenseMatrix(p.d, p.d), f.u_star), f, nu);
  DissipativitySweep sw;
  sw.which = which;
  sw.states = states;
  sw.min_margin = std::numeric_limits<double>::infinity();
  Rng rng(derive_seed(seed, {0}));
  for (std::size_t k = 0; k < states; ++k) {
    DenseMatrix x;
    switch (which) {
      case DissipativityKind::pd_E:
        x = sample_decomposed_state(f, 0.0, 2.0, 0.0, 2.0, rng);
        break;
      case DissipativityKind::pd_r:
        x = sample_decomposed_state(f, base.a, base.a + 1.5, 0.0, 1.0, rng);
        break;
      case DissipativityKind::pd_r2: {
        const double gu = opt.squared_e_region ? base.gamma_u_sq : std::sqrt(base.gamma_u_sq);
        x = sample_decomposed_state(f, base.gamma_u_sq, base.a, 0.0, opt.c * opt.c * gu, rng);
        break;
      }
    }
    try {
      const auto est = dissipativity_probe(x, p, nu, which, resamples,
                                           RngState{derive_seed(seed, {1, k}), 0}, opt);
      ++sw.in_region;
      if (est.satisfied) ++sw.satisfied;
      if (est.satisfied_alt) ++sw.satisfied_alt;
      if (est.lhs_closed_form >= est.rhs_bound) ++sw.closed_form_satisfied;
      sw.min_margin = std::min(sw.min_margin, est.margin);
    } catch (const RegionError&) {
    }
  }
  return sw;
}

// ---------------------------------------------------------------------------
// Trajectory lemma checks

struct LemmaConstants {
  double c1 = 5.0;
  double c2 = 5.0;
  double c3 = 5.0;
};

/// Checks the trajectory claims on the recorded samples (normalized frame):
///   bounded        ||X_t||_F^2 <= 4d                    all samples
///   saddle         ||r_t||^2 >= ||Gamma_sym u*||^2      all samples after t = 0
///   e_band         ||E_t||_F^2 <= c1 sqrt(d sigma^2)    after burn-in
///   r_band         | ||r_t||^2 - 1 | <= c2 sqrt(d sigma^2)  after burn-in
///   er_band        ||E_t r_t||^2 <= c3 d sigma^2        after burn-in
/// A check passes when every applicable sample satisfies it.
inline DiagnosticsReport check_trajectory_lemmas(const Trajectory& traj, const RecoveryProblem& p,
                                                 const LemmaConstants& k, double burn_in_fraction) {
  detail::require_rank_one(p, "check_trajectory_lemmas");
  NOISEREG_REQUIRE(burn_in_fraction >= 0.0 && burn_in_fraction <= 1.0,
                   "check_trajectory_lemmas: burn_in_fraction must lie in [0, 1]");
  NOISEREG_REQUIRE(!traj.samples.empty(), "check_trajectory_lemmas: empty trajectory");
  const NormalizedFrame f = NormalizedFrame::of(p);
  const double d = static_cast<double>(p.d);
  const double ds2 = d * f.sigma * f.sigma;
  const double gamma_u_sq = norm2_sq(matvec(f.gamma_sym, f.u_star));
  const double horizon = static_cast<double>(traj.samples.back().t);
  const double burn_t = burn_in_fraction * horizon;

  struct Acc {
    std::size_t n = 0, ok = 0;
    double extreme;
  };
  const double inf = std::numeric_limits<double>::infinity();
  Acc bounded{0, 0, -inf}, saddle{0, 0, inf}, e_band{0, 0, -inf}, r_band{0, 0, -inf},
      er_band{0, 0, -inf};
  const auto upper = [](Acc& a, double v, double b) {
    ++a.n;
    a.ok += v <= b ? 1 : 0;
    a.extreme = std::max(a.extreme, v);
  };

  for (const MetricSample& s : traj.samples) {
    if (!s.r_norm_sq || !s.e_fro_sq || !s.er_norm_sq)
      throw std::invalid_argument("check_trajectory_lemmas: samples lack subspace fields");
    upper(bounded, s.x_fro_sq, 4.0 * d);
    if (s.t > 0) {
      ++saddle.n;
      saddle.ok += *s.r_norm_sq >= gamma_u_sq ? 1 : 0;
      saddle.extreme = std::min(saddle.extreme, *s.r_norm_sq);
    }
    if (static_cast<double>(s.t) >= burn_t) {
      upper(e_band, *s.e_fro_sq, k.c1 * std::sqrt(ds2));
      upper(r_band, std::abs(*s.r_norm_sq - 1.0), k.c2 * std::sqrt(ds2));
      upper(er_band, *s.er_norm_sq, k.c3 * ds2);
    }
  }

  DiagnosticsReport rep;
  const auto emit = [&rep](std::string name, const Acc& a, double bound, std::string notes) {
    ReportEntry e;
    e.check_name = std::move(name);
    e.measured = a.n ? a.extreme : 0.0;
    e.bound = bound;
    e.n = a.n;
    e.pass_rate = a.n ? static_cast<double>(a.ok) / static_cast<double>(a.n) : 1.0;
    e.passed = a.ok == a.n;
    e.notes = std::move(notes);
    rep.add(std::move(e));
  };
  emit("lemma_bounded", bounded, 4.0 * d, "max ||X_t||_F^2 over all samples");
  emit("lemma_saddle", saddle, gamma_u_sq, "min ||r_t||^2 over samples with t > 0");
  emit("lemma_e_band", e_band, k.c1 * std::sqrt(ds2), "max ||E_t||_F^2 after burn-in");
  emit("lemma_r_band", r_band, k.c2 * std::sqrt(ds2), "max | ||r_t||^2 - 1 | after burn-in");
  emit("lemma_er_band", er_band, k.c3 * ds2, "max ||E_t r_t||^2 after burn-in");
  return rep;
}

// ---------------------------------------------------------------------------
// Drift probes

enum class DriftFunction { e_fro_sq, r_dist, er_norm_sq };

inline std::string_view to_string(DriftFunction g) {
  switch (g) {
    case DriftFunction::e_fro_sq: return "e_fro_sq";
    case DriftFunction::r_dist: return "r_dist";
    case DriftFunction::er_norm_sq: return "er_norm_sq";
  }
  return "?";
}

/// g evaluated at a normalized-frame iterate. r_dist is | ||r||^2 - 1 |.
inline double drift_function_value(DriftFunction g, const DenseMatrix& xn,
                                   std::span<const double> u_star) {
  const SubspaceDecomposition dec = decompose(xn, u_star);
  switch (g) {
    case DriftFunction::e_fro_sq: return frobenius_norm_sq(dec.e);
    case DriftFunction::r_dist: return std::abs(norm2_sq(dec.r) - 1.0);
    case DriftFunction::er_norm_sq: return norm2_sq(matvec(dec.e, dec.r));
  }
  return 0.0;
}

struct DriftParams {
  double alpha0 = 0.0;
  double beta = 0.0;
  double lambda = 0.0;
};

/// Constants for g = ||E||_F^2: beta = 2((2d+1) nu^2/d - ||Gamma_sym||_2),
/// alpha0 = ||Gamma_sym u*||^2 / (2 beta), lambda = 0; normalized frame.
inline DriftParams e_fro_drift_params(const RecoveryProblem& p, double nu) {
  detail::require_rank_one(p, "e_fro_drift_params");
  const NormalizedFrame f = NormalizedFrame::of(p);
  const double d = static_cast<double>(p.d);
  const double nu_hat = f.nu(nu);
  DriftParams dp;
  dp.beta = 2.0 * ((2.0 * d + 1.0) * nu_hat * nu_hat / d - spectral_norm(f.gamma_sym));
  dp.alpha0 = dp.beta != 0.0 ? norm2_sq(matvec(f.gamma_sym, f.u_star)) / (2.0 * dp.beta) : 0.0;
  return dp;
}

struct MartingaleProbe {
  DriftFunction g_name = DriftFunction::e_fro_sq;
  DriftParams params;
  std::uint64_t t = 0;
  double g_now = 0.0;
  double conditional_mean = 0.0;
  double std_err = 0.0;
  double drift_bound = 0.0;
  double max_deviation = 0.0;  // max |g(x_{t+1}) - conditional_mean|
  bool satisfied = false;
  std::size_t resamples = 0;
};

/// Monte-Carlo estimate of E[g(X_{t+1}) | X_t] for one P-GD step from X_t, compared
/// with (1 - eta beta)(g(X_t) - alpha0 - eta lambda) + alpha0 + eta lambda.
/// X_t, eta and nu are raw; everything is evaluated in the normalized frame.
inline MartingaleProbe martingale_drift_probe(const DenseMatrix& x_t, const RecoveryProblem& p,
                                              const OptimizerConfig& config, DriftFunction g,
                                              const DriftParams& params, std::size_t resamples,
                                              RngState rng_state, std::uint64_t t = 0) {
  detail::require_rank_one(p, "martingale_drift_probe");
  detail::require_square_iterate(x_t, p, "martingale_drift_probe");
  NOISEREG_REQUIRE(resamples >= 100, "martingale_drift_probe: resamples must be >= 100");
  const NormalizedFrame f = NormalizedFrame::of(p);
  const RecoveryProblem pn = normalized_problem(p);
  const DenseMatrix xn = f.iterate(x_t);
  const double eta = f.eta(config.eta);
  const double nu = f.nu(config.nu);

  MartingaleProbe probe;
  probe.g_name = g;
  probe.params = params;
  probe.t = t;
  probe.resamples = resamples;
  probe.g_now = drift_function_value(g, xn, f.u_star);
  Rng rng = Rng::from_state(rng_state);
  std::vector<double> vals(resamples);
  for (std::size_t k = 0; k < resamples; ++k)
    vals[k] = drift_function_value(g, pgd_step(xn, pn, eta, nu, rng, t), f.u_star);
  probe.conditional_mean = stats::mean(vals);
  probe.std_err = stats::std_error(vals);
  for (double v : vals)
    probe.max_deviation = std::max(probe.max_deviation, std::abs(v - probe.conditional_mean));
  const double shift = params.alpha0 + eta * params.lambda;
  probe.drift_bound = (1.0 - eta * params.beta) * (probe.g_now - shift) + shift;
  probe.satisfied = probe.conditional_mean <= probe.drift_bound + 3.0 * probe.std_err;
  return probe;
}

// ---------------------------------------------------------------------------
// Monte-Carlo sweeps over fresh draws

struct PassRate {
  std::size_t n = 0;
  std::size_t passed = 0;
  [[nodiscard]] double rate() const {
    return n ? static_cast<double>(passed) / static_cast<double>(n) : 0.0;
  }
};

/// Noise concentration: over `draws` Gaussian Gamma with entries N(0, sigma^2)
/// and x* = (1, ..., 1), the fraction with
/// max{||Gamma_sym u*||, ||Gamma_sym||_2} <= c1 sqrt(d) sigma.
inline PassRate noise_concentration_sweep(std::size_t d, double sigma, double c1,
                                          std::size_t draws, std::uint64_t seed) {
  NOISEREG_REQUIRE(d >= 2 && draws >= 1, "noise_concentration_sweep: need d >= 2, draws >= 1");
  const Vector ones(d, 1.0);
  PassRate pr;
  for (std::size_t k = 0; k < draws; ++k) {
    Rng rng(derive_seed(seed, {k}));
    const RecoveryProblem p = make_rank_one_problem(d, ones, sigma, rng);
    const AssumptionReport rep = check_assumption_noise(p, 0.0, c1);
    ++pr.n;
    if (rep.at("gamma_sym_x_star").passed && rep.at("gamma_sym_spectral").passed) ++pr.passed;
  }
  return pr;
}

/// Initialization: X0 = x0 x0^T with x0 uniform in the unit ball, checked
/// against a normalized problem (||x*|| = 1) with noise level sigma_hat.
inline PassRate init_ball_sweep(std::size_t d, double sigma_hat, double c1, std::size_t draws,
                                std::uint64_t seed, std::optional<double> c2 = std::nullopt) {
  NOISEREG_REQUIRE(d >= 2 && draws >= 1, "init_ball_sweep: need d >= 2, draws >= 1");
  Vector u(d, 1.0 / std::sqrt(static_cast<double>(d)));
  PassRate pr;
  for (std::size_t k = 0; k < draws; ++k) {
    Rng rng(derive_seed(seed, {k}));
    const RecoveryProblem p = make_rank_one_problem(d, u, sigma_hat, rng);
    InitSpec spec;
    spec.variant = InitVariant::rank_one_ball;
    const DenseMatrix x0 = init_iterate(spec, d, rng);
    ++pr.n;
    if (check_assumption_init(x0, p, c1, c2).all_passed()) ++pr.passed;
  }
  return pr;
}

inline ReportEntry to_entry(std::string name, const PassRate& pr, double required_rate,
                            std::string notes) {
  ReportEntry e;
  e.check_name = std::move(name);
  e.measured = pr.rate();
  e.bound = required_rate;
  e.pass_rate = pr.rate();
  e.n = pr.n;
  e.passed = pr.rate() >= required_rate;
  e.notes = std::move(notes);
  return e;
}

}  // namespace noisereg
