#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "noisereg/decomposition.hpp"
#include "noisereg/matrix.hpp"
#include "noisereg/problem.hpp"
#include "noisereg/random.hpp"

namespace noisereg {

enum class InitVariant { gd_small, gd_large, rank_one_ball, explicit_matrix };

inline std::string_view to_string(InitVariant v) {
  switch (v) {
    case InitVariant::gd_small: return "gd_small";
    case InitVariant::gd_large: return "gd_large";
    case InitVariant::rank_one_ball: return "rank_one_ball";
    case InitVariant::explicit_matrix: return "explicit";
  }
  return "?";
}

struct InitSpec {
  InitVariant variant = InitVariant::gd_large;
  std::optional<DenseMatrix> explicit_matrix;    // X0, or U0 for rectangular runs
  std::optional<DenseMatrix> explicit_matrix_v;  // V0 for rectangular runs
};

struct OptimizerConfig {
  double eta = 1e-3;
  double nu = 0.0;  // 0 disables perturbation: plain GD
  std::uint64_t horizon_t = 1;
  std::uint64_t metric_stride = 1;
  /// Extra log-spaced sample times in [1, horizon_t]; 0 disables them.
  std::size_t log_sample_points = 0;
  InitSpec init;
  std::uint64_t seed = 0;
  double confidence_delta = 0.1;

  void validate() const {
    // eta == 0 is allowed so that frozen trajectories can be produced on purpose.
    NOISEREG_REQUIRE(eta >= 0.0 && std::isfinite(eta), "OptimizerConfig: eta must be >= 0");
    NOISEREG_REQUIRE(nu >= 0.0 && std::isfinite(nu), "OptimizerConfig: nu must be >= 0");
    NOISEREG_REQUIRE(horizon_t >= 1, "OptimizerConfig: horizon_t must be >= 1");
    NOISEREG_REQUIRE(metric_stride >= 1, "OptimizerConfig: metric_stride must be >= 1");
    NOISEREG_REQUIRE(confidence_delta > 0.0 && confidence_delta < 1.0,
                    "OptimizerConfig: confidence_delta must lie in (0, 1)");
  }
};

/// Metrics at one iteration. Subspace fields (r, E, E r) and x_fro_sq are in
/// the normalized frame for rank-1 problems; the subspace fields are absent
/// for other problems and x_fro_sq is then the raw squared norm of the factors.
struct MetricSample {
  std::uint64_t t = 0;
  double loss = 0.0;
  double recovery_error = 0.0;
  double normalized_mse = 0.0;
  std::optional<double> r_norm_sq;
  std::optional<double> e_fro_sq;
  std::optional<double> er_norm_sq;
  double x_fro_sq = 0.0;
};

struct Trajectory {
  std::vector<MetricSample> samples;
  DenseMatrix final_state;                 // X_T (PSD runs) or U_T (rectangular)
  std::optional<DenseMatrix> final_state_v;  // V_T for rectangular runs
  OptimizerConfig config_echo;
  /// Early-stopping oracle: the iterate with the smallest recovery error over
  /// every step, not only the recorded ones.
  MetricSample min_error_sample;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::uint64_t iteration, std::optional<MetricSample> last_finite)
      : std::runtime_error("iterate became non-finite at iteration " + std::to_string(iteration)),
        iteration_(iteration),
        last_finite_(std::move(last_finite)) {}

  [[nodiscard]] std::uint64_t iteration() const noexcept { return iteration_; }
  [[nodiscard]] const std::optional<MetricSample>& last_finite_sample() const noexcept {
    return last_finite_;
  }

 private:
  std::uint64_t iteration_;
  std::optional<MetricSample> last_finite_;
};

// ---------------------------------------------------------------------------
// Initialization

inline DenseMatrix init_iterate(const InitSpec& spec, std::size_t d, Rng& rng) {
  NOISEREG_REQUIRE(d >= 1, "init_iterate: dimension must be positive");
  const double dd = static_cast<double>(d);
  switch (spec.variant) {
    case InitVariant::gd_small: return sample_orthogonal(d, rng) * (1.0 / dd);
    case InitVariant::gd_large: return sample_gaussian_matrix(d, d, 1.0, rng) * (1.0 / std::sqrt(dd));
    case InitVariant::rank_one_ball: {
      const Vector x0 = sample_unit_ball(d, rng);
      return outer(x0, x0);
    }
    case InitVariant::explicit_matrix:
      NOISEREG_REQUIRE(spec.explicit_matrix.has_value(),
                      "init_iterate: explicit variant requires a matrix");
      NOISEREG_REQUIRE(spec.explicit_matrix->rows() == d && spec.explicit_matrix->cols() == d,
                      "init_iterate: explicit matrix must be " + std::to_string(d) + "x" +
                          std::to_string(d) + ", got " +
                          detail::shape_str(*spec.explicit_matrix));
      return *spec.explicit_matrix;
  }
  throw std::invalid_argument("init_iterate: unknown variant");
}

inline RectFactorPair init_rect_iterate(const InitSpec& spec, std::size_t d, Rng& rng) {
  NOISEREG_REQUIRE(d >= 1, "init_rect_iterate: dimension must be positive");
  switch (spec.variant) {
    case InitVariant::gd_small:
    case InitVariant::gd_large: {
      DenseMatrix u = init_iterate(spec, d, rng);
      DenseMatrix v = init_iterate(spec, d, rng);
      return {std::move(u), std::move(v)};
    }
    case InitVariant::explicit_matrix: {
      NOISEREG_REQUIRE(spec.explicit_matrix && spec.explicit_matrix_v,
                      "init_rect_iterate: explicit variant requires both U0 and V0");
      const auto ok = [d](const DenseMatrix& m) { return m.rows() == d && m.cols() == d; };
      NOISEREG_REQUIRE(ok(*spec.explicit_matrix) && ok(*spec.explicit_matrix_v),
                      "init_rect_iterate: explicit factors must be " + std::to_string(d) + "x" +
                          std::to_string(d));
      return {*spec.explicit_matrix, *spec.explicit_matrix_v};
    }
    case InitVariant::rank_one_ball:
      throw std::invalid_argument("init_rect_iterate: rank_one_ball is PSD-only");
  }
  throw std::invalid_argument("init_rect_iterate: unknown variant");
}

// ---------------------------------------------------------------------------
// Metrics

inline MetricSample compute_metrics(std::uint64_t t, const DenseMatrix& x,
                                    const RecoveryProblem& p,
                                    const NormalizedFrame* frame = nullptr) {
  const DenseMatrix xxt = gram(x);
  MetricSample s;
  s.t = t;
  s.loss = 0.25 * frobenius_distance_sq(xxt, p.y_observed);
  s.recovery_error = frobenius_distance_sq(xxt, p.y_star);
  s.normalized_mse = s.recovery_error / static_cast<double>(p.d * p.d);
  if (frame != nullptr) {
    const DenseMatrix xn = frame->iterate(x);
    const SubspaceDecomposition dec = decompose(xn, frame->u_star);
    s.r_norm_sq = norm2_sq(dec.r);
    s.e_fro_sq = frobenius_norm_sq(dec.e);
    s.er_norm_sq = norm2_sq(matvec(dec.e, dec.r));
    s.x_fro_sq = frobenius_norm_sq(xn);
  } else {
    s.x_fro_sq = frobenius_norm_sq(x);
  }
  return s;
}

inline MetricSample compute_rect_metrics(std::uint64_t t, const RectFactorPair& f,
                                         const RecoveryProblem& p) {
  const DenseMatrix uvt = matmul_transpose(f.u, f.v);
  MetricSample s;
  s.t = t;
  s.loss = 0.5 * frobenius_distance_sq(uvt, p.y_observed);
  s.recovery_error = frobenius_distance_sq(uvt, p.y_star);
  s.normalized_mse = s.recovery_error / static_cast<double>(p.d * p.d);
  s.x_fro_sq = frobenius_norm_sq(f.u) + frobenius_norm_sq(f.v);
  return s;
}

/// Sorted, de-duplicated sample times: 0, multiples of the stride, optional
/// log-spaced points, and the horizon.
inline std::vector<std::uint64_t> sample_schedule(const OptimizerConfig& c) {
  std::vector<std::uint64_t> times{0, c.horizon_t};
  for (std::uint64_t t = c.metric_stride; t < c.horizon_t; t += c.metric_stride) times.push_back(t);
  if (c.log_sample_points > 1) {
    const double top = std::log(static_cast<double>(c.horizon_t));
    for (std::size_t k = 0; k < c.log_sample_points; ++k) {
      const double frac = static_cast<double>(k) / static_cast<double>(c.log_sample_points - 1);
      times.push_back(static_cast<std::uint64_t>(std::llround(std::exp(frac * top))));
    }
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  return times;
}

// ---------------------------------------------------------------------------
// Single steps

namespace detail {

/// Preallocated buffers for the hot loop.
struct StepWorkspace {
  DenseMatrix perturbed;
  DenseMatrix gram_perturbed;
  DenseMatrix gram_iterate;
  DenseMatrix grad;
  Vector col_scratch;

  explicit StepWorkspace(std::size_t d)
      : perturbed(d, d), gram_perturbed(d, d), gram_iterate(d, d), grad(d, d) {}
};

/// grad = (tilde tilde^T - Y_sym) tilde, with gram_perturbed holding tilde tilde^T
/// on entry and the residual on exit.
inline void residual_times(DenseMatrix& gram_perturbed, const DenseMatrix& y_sym,
                           const DenseMatrix& tilde, DenseMatrix& grad) {
  auto g = gram_perturbed.data();
  const auto y = y_sym.data();
  for (std::size_t k = 0; k < g.size(); ++k) g[k] -= y[k];
  matmul_into(gram_perturbed, tilde, grad);
}

inline void axpy_inplace(DenseMatrix& x, double alpha, const DenseMatrix& g) {
  auto xs = x.data();
  const auto gs = g.data();
  for (std::size_t k = 0; k < xs.size(); ++k) xs[k] += alpha * gs[k];
}

}  // namespace detail

/// One P-GD update with an explicit perturbation W:
/// X - eta ((X+W)(X+W)^T - Y_sym)(X+W).
inline DenseMatrix pgd_step(const DenseMatrix& x, const RecoveryProblem& p, double eta,
                            const DenseMatrix& w, std::uint64_t iteration = 0) {
  detail::require_square_iterate(x, p, "pgd_step");
  NOISEREG_REQUIRE(w.same_shape(x), "pgd_step: perturbation shape mismatch");
  const DenseMatrix tilde = x + w;
  DenseMatrix next = x;
  detail::axpy_inplace(next, -eta, matmul(gram(tilde) - p.y_sym, tilde));
  if (!next.all_finite()) throw DivergenceError(iteration, std::nullopt);
  return next;
}

/// One P-GD update with W drawn from independent UNIF(S(nu)) columns.
/// nu == 0 gives the plain GD step and draws nothing from the generator.
inline DenseMatrix pgd_step(const DenseMatrix& x, const RecoveryProblem& p, double eta, double nu,
                            Rng& rng, std::uint64_t iteration = 0) {
  detail::require_square_iterate(x, p, "pgd_step");
  NOISEREG_REQUIRE(nu >= 0.0, "pgd_step: nu must be >= 0");
  if (nu == 0.0) return pgd_step(x, p, eta, DenseMatrix(p.d, p.d), iteration);
  return pgd_step(x, p, eta, sample_sphere_columns(p.d, p.d, nu, rng), iteration);
}

// ---------------------------------------------------------------------------
// Full runs

struct NoObserver {
  template <class State>
  void operator()(std::uint64_t, const State&) const noexcept {}
};

/// Runs GD / P-GD on a PSD problem. `observer(t, X_t)` is invoked at every
/// recorded sample time.
template <class Observer = NoObserver>
Trajectory run(const RecoveryProblem& p, const OptimizerConfig& config,
               Observer&& observer = Observer{}) {
  config.validate();
  NOISEREG_REQUIRE(p.kind == ProblemKind::psd, "run: problem must be PSD");
  const std::size_t d = p.d;
  std::optional<NormalizedFrame> frame;
  if (p.has_signal_direction()) frame = NormalizedFrame::of(p);
  const NormalizedFrame* fp = frame ? &*frame : nullptr;

  Rng rng(config.seed);
  DenseMatrix x = init_iterate(config.init, d, rng);
  const std::vector<std::uint64_t> schedule = sample_schedule(config);

  Trajectory traj;
  traj.config_echo = config;
  traj.samples.reserve(schedule.size());
  traj.samples.push_back(compute_metrics(0, x, p, fp));
  if (!std::isfinite(traj.samples.back().recovery_error)) throw DivergenceError(0, std::nullopt);
  observer(std::uint64_t{0}, static_cast<const DenseMatrix&>(x));

  detail::StepWorkspace ws(d);
  const bool perturb = config.nu > 0.0;
  double best_error = traj.samples.front().recovery_error;
  std::uint64_t best_t = 0;
  DenseMatrix best_x = x;
  std::size_t next_sample = 1;

  for (std::uint64_t t = 0; t < config.horizon_t; ++t) {
    // Error of X_t, reusing the Gram matrix when the gradient is taken at X_t.
    const DenseMatrix* tilde = &x;
    double error;
    if (perturb) {
      detail::fill_sphere_columns(ws.perturbed, config.nu, rng, ws.col_scratch);
      detail::axpy_inplace(ws.perturbed, 1.0, x);
      tilde = &ws.perturbed;
      gram_into(x, ws.gram_iterate);
      error = frobenius_distance_sq(ws.gram_iterate, p.y_star);
      gram_into(ws.perturbed, ws.gram_perturbed);
    } else {
      gram_into(x, ws.gram_perturbed);
      error = frobenius_distance_sq(ws.gram_perturbed, p.y_star);
    }
    if (!std::isfinite(error)) throw DivergenceError(t, traj.samples.back());
    if (error < best_error) {
      best_error = error;
      best_t = t;
      best_x = x;
    }
    detail::residual_times(ws.gram_perturbed, p.y_sym, *tilde, ws.grad);
    detail::axpy_inplace(x, -config.eta, ws.grad);

    const std::uint64_t now = t + 1;
    if (next_sample < schedule.size() && schedule[next_sample] == now) {
      MetricSample s = compute_metrics(now, x, p, fp);
      if (!std::isfinite(s.recovery_error) || !x.all_finite())
        throw DivergenceError(now, traj.samples.back());
      if (s.recovery_error < best_error) {
        best_error = s.recovery_error;
        best_t = now;
        best_x = x;
      }
      traj.samples.push_back(std::move(s));
      observer(now, static_cast<const DenseMatrix&>(x));
      ++next_sample;
    }
  }
  traj.min_error_sample = compute_metrics(best_t, best_x, p, fp);
  traj.final_state = std::move(x);
  return traj;
}

/// P-GD on the rectangular model: U and V are perturbed independently (W_t
/// then Z_t from the same stream) and updated simultaneously.
template <class Observer = NoObserver>
Trajectory run_rectangular(const RecoveryProblem& p, const OptimizerConfig& config,
                           Observer&& observer = Observer{}) {
  config.validate();
  NOISEREG_REQUIRE(p.kind == ProblemKind::rectangular, "run_rectangular: problem must be rectangular");
  const std::size_t d = p.d;
  Rng rng(config.seed);
  RectFactorPair f = init_rect_iterate(config.init, d, rng);
  const std::vector<std::uint64_t> schedule = sample_schedule(config);

  Trajectory traj;
  traj.config_echo = config;
  traj.samples.reserve(schedule.size());
  traj.samples.push_back(compute_rect_metrics(0, f, p));
  observer(std::uint64_t{0}, static_cast<const RectFactorPair&>(f));

  const bool perturb = config.nu > 0.0;
  DenseMatrix w(d, d), z(d, d), residual(d, d), gu(d, d), uvt(d, d);
  Vector scratch;
  double best_error = traj.samples.front().recovery_error;
  std::uint64_t best_t = 0;
  RectFactorPair best = f;
  std::size_t next_sample = 1;

  for (std::uint64_t t = 0; t < config.horizon_t; ++t) {
    const DenseMatrix* ut = &f.u;
    const DenseMatrix* vt = &f.v;
    if (perturb) {
      detail::fill_sphere_columns(w, config.nu, rng, scratch);
      detail::fill_sphere_columns(z, config.nu, rng, scratch);
      detail::axpy_inplace(w, 1.0, f.u);
      detail::axpy_inplace(z, 1.0, f.v);
      ut = &w;
      vt = &z;
    }
    residual = matmul_transpose(*ut, *vt);
    if (perturb) uvt = matmul_transpose(f.u, f.v);
    const double error = frobenius_distance_sq(perturb ? uvt : residual, p.y_star);
    if (!std::isfinite(error)) throw DivergenceError(t, traj.samples.back());
    if (error < best_error) {
      best_error = error;
      best_t = t;
      best = f;
    }
    residual -= p.y_observed;
    matmul_into(residual, *vt, gu);
    const DenseMatrix gv = transpose_matmul(residual, *ut);
    detail::axpy_inplace(f.u, -config.eta, gu);
    detail::axpy_inplace(f.v, -config.eta, gv);

    const std::uint64_t now = t + 1;
    if (next_sample < schedule.size() && schedule[next_sample] == now) {
      MetricSample s = compute_rect_metrics(now, f, p);
      if (!std::isfinite(s.recovery_error)) throw DivergenceError(now, traj.samples.back());
      if (s.recovery_error < best_error) {
        best_error = s.recovery_error;
        best_t = now;
        best = f;
      }
      traj.samples.push_back(std::move(s));
      observer(now, static_cast<const RectFactorPair&>(f));
      ++next_sample;
    }
  }
  traj.min_error_sample = compute_rect_metrics(best_t, best, p);
  traj.final_state = std::move(f.u);
  traj.final_state_v = std::move(f.v);
  return traj;
}

// ---------------------------------------------------------------------------
// Hyperparameters

struct Hyperparameters {
  double eta = 0.0;
  double nu = 0.0;
};

/// nu^2 = k_nu sqrt(d sigma^2), eta = k_eta sigma^2 / d^2. The confidence level
/// is validated but the rule itself does not depend on it.
inline Hyperparameters suggested_hyperparameters(const RecoveryProblem& p, double confidence_delta,
                                                 double k_nu = 0.4, double k_eta = 0.25) {
  NOISEREG_REQUIRE(p.sigma > 0.0, "suggested_hyperparameters: sigma must be > 0");
  NOISEREG_REQUIRE(confidence_delta > 0.0 && confidence_delta < 1.0,
                  "suggested_hyperparameters: confidence_delta must lie in (0, 1)");
  NOISEREG_REQUIRE(k_nu >= 0.0 && k_eta > 0.0,
                  "suggested_hyperparameters: coefficients must be nonnegative (k_eta > 0)");
  const double d = static_cast<double>(p.d);
  const double s2 = p.sigma * p.sigma;
  return {k_eta * s2 / (d * d), std::sqrt(k_nu * std::sqrt(d * s2))};
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kTrajectoryCsvHeader =
    "t,loss,recovery_error,normalized_mse,r_norm_sq,e_fro_sq,er_norm_sq,x_fro_sq";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string{};
  };
  os << kTrajectoryCsvHeader << '\n';
  for (const MetricSample& s : traj.samples) {
    os << s.t << ',' << format_double(s.loss) << ',' << format_double(s.recovery_error) << ','
       << format_double(s.normalized_mse) << ',' << opt(s.r_norm_sq) << ',' << opt(s.e_fro_sq)
       << ',' << opt(s.er_norm_sq) << ',' << format_double(s.x_fro_sq) << '\n';
  }
}

inline std::vector<MetricSample> read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kTrajectoryCsvHeader)
    throw std::invalid_argument("trajectory CSV: missing or unexpected header");
  std::vector<MetricSample> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() == 7 && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) throw std::invalid_argument("trajectory CSV: bad row '" + line + "'");
    const auto opt = [](const std::string& c) -> std::optional<double> {
      if (c.empty()) return std::nullopt;
      return std::stod(c);
    };
    MetricSample s;
    s.t = std::stoull(cells[0]);
    s.loss = std::stod(cells[1]);
    s.recovery_error = std::stod(cells[2]);
    s.normalized_mse = std::stod(cells[3]);
    s.r_norm_sq = opt(cells[4]);
    s.e_fro_sq = opt(cells[5]);
    s.er_norm_sq = opt(cells[6]);
    s.x_fro_sq = std::stod(cells[7]);
    out.push_back(s);
  }
  return out;
}

}  // namespace noisereg
