// Command-line front end: simulate, scaling, verify, plot-data.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "noisereg/noisereg.hpp"

namespace {

using namespace noisereg;

enum Exit { kOk = 0, kInvalidConfig = 1, kAllDiverged = 2, kIo = 3 };

struct Flags {
  std::string config;
  std::string experiment;
  std::string d;
  std::optional<double> sigma_sq;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> horizon;
  std::optional<std::uint64_t> seed;
  std::string algos;
  bool paper_scale = false;
  std::string out;
  std::optional<double> eta;
  std::optional<double> nu_sq;
  std::optional<double> eta_scale;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--d", f.d, "dimension, or a comma-separated list for scaling");
  app->add_option("--sigma-sq", f.sigma_sq, "noise variance");
  app->add_option("--trials", f.trials, "number of seeded trials");
  app->add_option("--horizon", f.horizon, "iterations per run");
  app->add_option("--seed", f.seed, "base seed (overrides NOISEREG_SEED)");
  app->add_option("--algos", f.algos, "comma-separated subset of pgd,gd_small,gd_large");
  app->add_flag("--paper-scale", f.paper_scale, "d = 30, T = 1e8");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--eta", f.eta, "absolute step size");
  app->add_option("--nu-sq", f.nu_sq, "absolute perturbation radius squared");
  app->add_option("--eta-scale", f.eta_scale, "multiplier on the step size");
  app->add_option("--threads", f.threads, "worker threads (0 = all cores)");
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw ConfigError("--d: '" + tok + "' is not a positive integer");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--d: no values given");
  return out;
}

ExperimentConfig build_config(const Flags& f, std::optional<ExperimentKind> forced) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(f.config);
  if (forced) c.experiment = *forced;
  else if (!f.experiment.empty()) c.experiment = experiment_kind_from_string(f.experiment);
  if (c.experiment == ExperimentKind::scaling_study || c.experiment == ExperimentKind::verify) {
    if (!forced) throw ConfigError("simulate runs rank1_psd, rank3_psd or rectangular");
  }
  if (f.paper_scale) c.apply_paper_scale();
  apply_seed_env(c);
  if (!f.d.empty()) {
    const auto ds = parse_sizes(f.d);
    if (c.experiment == ExperimentKind::scaling_study) c.d_list = ds;
    else if (ds.size() == 1) c.d = ds.front();
    else throw ConfigError("--d takes a single value outside the scaling study");
  }
  if (f.sigma_sq) c.sigma_sq = *f.sigma_sq;
  if (f.trials) c.trials = *f.trials;
  if (f.horizon) c.horizon_t = *f.horizon;
  if (f.seed) c.seed = *f.seed;
  if (!f.algos.empty()) c.algorithms = parse_algorithms(f.algos);
  if (!f.out.empty()) c.output_dir = f.out;
  if (f.eta) c.eta = *f.eta;
  if (f.nu_sq) c.nu_sq = *f.nu_sq;
  if (f.eta_scale) c.eta_scale = *f.eta_scale;
  if (f.threads) c.threads = *f.threads;
  c.validate();
  return c;
}

void print_aggregate(const AggregateResult& agg) {
  std::printf("%-10s %9s %9s %14s %14s %14s\n", "algo", "completed", "diverged", "median_final",
              "mean_final", "median_min");
  for (const auto& g : agg.algos) {
    std::printf("%-10s %9zu %9zu %14.6g %14.6g %14.6g\n", std::string(to_string(g.algo)).c_str(),
                g.completed, g.diverged, g.final_stats.median, g.final_stats.mean,
                g.min_stats.median);
  }
  for (const auto& g : agg.algos)
    if (g.diverged > 0)
      std::fprintf(stderr, "warning: %zu %s trial(s) diverged and were excluded\n", g.diverged,
                   std::string(to_string(g.algo)).c_str());
}

int simulate(const Flags& f) {
  const ExperimentConfig c = build_config(f, std::nullopt);
  const auto agg = run_experiment(c);
  print_aggregate(agg);
  std::printf("outputs written to %s\n", c.output_dir.c_str());
  return agg.all_diverged() ? kAllDiverged : kOk;
}

int scaling(const Flags& f) {
  const ExperimentConfig c = build_config(f, ExperimentKind::scaling_study);
  const auto res = run_scaling_study(c);
  std::printf("%-6s %-10s %14s %14s\n", "d", "algo", "median_mse", "iqr");
  bool any = false;
  for (const auto& r : res.rows) {
    any = any || r.completed > 0;
    std::printf("%-6zu %-10s %14.6g %14.6g\n", r.d, std::string(to_string(r.algo)).c_str(),
                r.median_mse, r.iqr);
  }
  for (const auto& [a, s] : res.slopes) {
    if (s) std::printf("slope %-10s %.4f\n", std::string(to_string(a)).c_str(), *s);
    else std::printf("slope %-10s n/a\n", std::string(to_string(a)).c_str());
  }
  return any ? kOk : kAllDiverged;
}

int verify(const Flags& f) {
  const ExperimentConfig c = build_config(f, ExperimentKind::verify);
  const auto rep = run_verify(c);
  std::printf("%-28s %10s %12s %12s %6s  %s\n", "check", "pass_rate", "measured", "bound", "n", "verdict");
  for (const auto& e : rep.entries)
    std::printf("%-28s %10.4f %12.6g %12.6g %6zu  %s\n", e.check_name.c_str(), e.pass_rate,
                e.measured, e.bound, e.n, e.passed ? "pass" : "FAIL");
  std::printf("report written to %s/verify_report.json\n", c.output_dir.c_str());
  return kOk;
}

int plot_data(const Flags& f) {
  if (f.out.empty()) throw ConfigError("plot-data needs --out <dir of a finished simulate run>");
  const auto agg = load_aggregate(f.out);
  const fs::path dir = fs::path(f.out) / "plot";
  emit_plot_data(agg, dir);
  std::printf("plot data written to %s\n", dir.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perturbed gradient descent for noisy over-parameterized matrix recovery"};
  app.require_subcommand(1);
  Flags flags;
  auto* sim = app.add_subcommand("simulate", "run repeated paired trials of one experiment");
  add_common(sim, flags);
  sim->add_option("--experiment", flags.experiment, "rank1_psd, rank3_psd or rectangular");
  auto* scl = app.add_subcommand("scaling", "median normalized MSE against d");
  add_common(scl, flags);
  auto* ver = app.add_subcommand("verify", "diagnostics report");
  add_common(ver, flags);
  auto* plt = app.add_subcommand("plot-data", "learning-curve and box-plot tables from a finished run");
  plt->add_option("--out", flags.out, "directory of a finished simulate run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalidConfig;
  }

  const auto start = std::chrono::steady_clock::now();
  int code = kOk;
  try {
    if (*sim) code = simulate(flags);
    else if (*scl) code = scaling(flags);
    else if (*ver) code = verify(flags);
    else if (*plt) code = plot_data(flags);
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return kInvalidConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::fprintf(stderr, "elapsed %.1f s\n", secs);
  if (code == kAllDiverged) std::fprintf(stderr, "all trials diverged\n");
  return code;
}
