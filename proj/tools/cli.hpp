#pragma once

// Command-line front end. `run` returns the process exit code:
// 0 success, 1 usage, 2 data or configuration error, 3 estimation error.

#include "robpanel/io.hpp"
#include "robpanel/m_estimator.hpp"
#include "robpanel/simulation.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace robpanel::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kEstimationError = 3 };

namespace detail {

inline std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

inline void open_or_throw(std::ofstream& f, const std::filesystem::path& p) {
  f.open(p);
  if (!f) throw DataError("cannot write '" + p.string() + "'");
}

struct FitArgs {
  std::string input;
  std::string estimator;
  std::string c = "auto";
  std::uint64_t seed = 0;
  std::size_t subsamples = 500;
  std::string out;
  std::string weights;
};

struct SimulateArgs {
  std::string config;
  std::string out_dir;
  std::optional<std::size_t> threads;
};

struct HoldoutArgs {
  std::string input;
  std::size_t n_test = 3;
  std::size_t replications = 100;
  std::uint64_t seed = 0;
  std::string out;
};

inline int do_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  const auto kind = parse_estimator(a.estimator);
  FitOptions opt;
  opt.seed = a.seed;
  opt.n_subsamples = a.subsamples;
  if (a.c != "auto") {
    const auto c = io::parse_double(a.c);
    if (!c || !(*c > 0.0)) {
      err << "error: --c must be a positive number or 'auto', got '" << a.c << "'\n";
      return kUsage;
    }
    opt.fixed_c = *c;
  }
  const PanelData panel = io::read_panel_csv(std::filesystem::path(a.input));
  const CenteredPanel centered = within_transform(panel);
  FitResult fit = fit_estimator(centered, *kind, opt);
  if (*kind != EstimatorKind::LS) {
    try {
      fit.std_errors = sandwich_se(centered, fit).std_errors();
    } catch (const UnstableCurvature& e) {
      err << "warning: standard errors unavailable: " << one_line(e.what()) << '\n';
    }
  }
  const auto report = io::fit_report_json(fit).dump(2) + "\n";
  if (a.out.empty()) {
    out << report;
  } else {
    std::ofstream f;
    open_or_throw(f, a.out);
    f << report;
  }
  std::string weights = a.weights;
  if (weights.empty() && !a.out.empty())
    weights = std::filesystem::path(a.out).replace_extension(".weights.csv").string();
  if (!weights.empty()) {
    std::ofstream f;
    open_or_throw(f, weights);
    io::write_weights_csv(f, panel, fit);
  }
  return kOk;
}

inline int do_simulate(const SimulateArgs& a, std::ostream& out) {
  ExperimentConfig cfg = io::read_config(a.config);
  if (a.threads) cfg.threads = *a.threads;
  const std::filesystem::path dir(a.out_dir.empty() ? cfg.out_dir : a.out_dir);
  if (dir.empty()) throw ConfigError("no output directory: pass --out-dir or set config key 'out_dir'");
  std::filesystem::create_directories(dir);

  const DgpConfig base = cfg.dgp();
  const McOptions mc = cfg.mc_options();
  io::json summary;
  summary["config"] = io::config_json(cfg);
  summary["degraded"] = io::json::array();

  auto note = [&](const std::string& cell, const SimulationReport& r) {
    for (const auto& e : r.estimators)
      if (!e.failed_replications.empty())
        summary["degraded"].push_back({{"cell", cell},
                                       {"estimator", std::string(to_string(e.estimator))},
                                       {"failures", e.failed_replications.size()},
                                       {"first_error", e.first_failure},
                                       {"over_5_percent", r.degraded}});
  };

  std::vector<ContaminationCell> cells;
  if (cfg.contamination) {
    const auto& s = *cfg.contamination;
    cells = contamination_study(s.panels, s.schemes, s.counts, s.block, base, cfg.estimators, cfg.replications,
                                s.n_test, derive_seed(cfg.seed, 0, 101), mc);
    for (const auto& c : cells)
      note("N=" + std::to_string(c.n_units) + " T=" + std::to_string(c.n_periods) + " " +
               std::string(to_string(c.kind)) + " m=" + std::to_string(c.m),
           c.report);
  }
  std::vector<CurvePoint> curves;
  if (cfg.consistency) {
    const auto& s = *cfg.consistency;
    curves = consistency_study(s.n_values, s.fixed_t, s.t_values, s.fixed_n, cfg.estimators, s.replications,
                               derive_seed(cfg.seed, 0, 102), mc, base);
    for (const auto& p : curves)
      note("consistency N=" + std::to_string(p.n_units) + " T=" + std::to_string(p.n_periods), p.report);
  }
  std::vector<ErrorDistCell> dists;
  if (cfg.error_dists) {
    const auto& s = *cfg.error_dists;
    dists = error_dist_study(s.pairs, cfg.estimators, s.replications, derive_seed(cfg.seed, 0, 103), mc, base);
    for (const auto& c : dists)
      note(std::string(to_string(c.dist)) + " N=" + std::to_string(c.n_units) + " T=" + std::to_string(c.n_periods),
           c.report);
  }

  std::ofstream f;
  open_or_throw(f, dir / "mse_table.csv");
  io::write_study_table(f, cells, false);
  f.close();
  open_or_throw(f, dir / "rmse_table.csv");
  io::write_study_table(f, cells, true);
  f.close();
  open_or_throw(f, dir / "se_samples.csv");
  io::write_se_samples(f, dists);
  f.close();
  open_or_throw(f, dir / "consistency_curves.csv");
  io::write_consistency_curves(f, curves);
  f.close();
  open_or_throw(f, dir / "summary.json");
  f << summary.dump(2) << '\n';
  f.close();
  out << "wrote mse_table.csv, rmse_table.csv, se_samples.csv, consistency_curves.csv, summary.json to "
      << dir.string() << '\n';
  return kOk;
}

inline int do_holdout(const HoldoutArgs& a, std::ostream& out) {
  const PanelData panel = io::read_panel_csv(std::filesystem::path(a.input));
  const std::vector<EstimatorKind> est{EstimatorKind::LS, EstimatorKind::Huber, EstimatorKind::Tukey,
                                       EstimatorKind::ESL};
  const auto rep = holdout_study(panel, est, a.n_test, a.replications, a.seed);
  out << "estimator,rmse,failures\n";
  for (const auto& e : rep.estimators)
    out << to_string(e.estimator) << ',' << (e.rmse ? io::format_double(*e.rmse) : "") << ','
        << e.failed_replications.size() << '\n';
  if (!a.out.empty()) {
    std::ofstream f;
    open_or_throw(f, a.out);
    f << "estimator,replication,rmse\n";
    for (const auto& e : rep.estimators) {
      std::size_t sample = 0;
      std::size_t fail = 0;
      for (std::size_t s = 0; s < rep.replications; ++s) {
        if (fail < e.failed_replications.size() && e.failed_replications[fail] == s) {
          ++fail;
          continue;
        }
        f << to_string(e.estimator) << ',' << s << ',' << io::format_double(e.rmse_samples[sample++]) << '\n';
      }
    }
  }
  return kOk;
}

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust M-estimation for fixed-effects panel data", "robpanel"};
  app.require_subcommand(1);

  detail::FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit one estimator to a panel CSV");
  fit->add_option("--input", fa.input, "CSV with columns unit,time,y,x1..xK")->required();
  fit->add_option("--estimator", fa.estimator, "ls | huber | tukey | esl")
      ->required()
      ->check(CLI::IsMember({"ls", "huber", "tukey", "esl"}));
  fit->add_option("--c", fa.c, "Tuning constant, or 'auto' for data-driven selection")->capture_default_str();
  fit->add_option("--seed", fa.seed, "Seed for the elemental-subset start")->capture_default_str();
  fit->add_option("--subsamples", fa.subsamples, "Elemental subsets drawn for the start")->capture_default_str();
  fit->add_option("--out", fa.out, "JSON report path (default: stdout)");
  fit->add_option("--weights", fa.weights, "Weights CSV path (default: next to --out)");

  detail::SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run the Monte Carlo studies of a JSON config");
  sim->add_option("--config", sa.config, "Experiment config (JSON)")->required();
  sim->add_option("--out-dir", sa.out_dir, "Directory for the CSV tables");
  sim->add_option("--threads", sa.threads, "Worker threads (0: all cores)");

  detail::HoldoutArgs ha;
  auto* hold = app.add_subcommand("holdout", "Repeated unit-holdout prediction RMSE on a panel CSV");
  hold->add_option("--input", ha.input, "CSV with columns unit,time,y,x1..xK")->required();
  hold->add_option("--n-test", ha.n_test, "Held-out units per split")->capture_default_str();
  hold->add_option("--replications", ha.replications, "Random splits")->capture_default_str();
  hold->add_option("--seed", ha.seed)->capture_default_str();
  hold->add_option("--out", ha.out, "Per-split RMSE CSV");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << detail::one_line(e.what()) << '\n';
    const auto* sub = !app.get_subcommands().empty() ? app.get_subcommands().front() : nullptr;
    err << (sub ? sub->help() : app.help());
    return kUsage;
  }

  try {
    if (fit->parsed()) return detail::do_fit(fa, out, err);
    if (sim->parsed()) return detail::do_simulate(sa, out);
    if (hold->parsed()) return detail::do_holdout(ha, out);
  } catch (const DataError& e) {
    err << "error: " << detail::one_line(e.what()) << '\n';
    return kDataError;
  } catch (const Error& e) {
    err << "error: " << detail::one_line(e.what()) << '\n';
    return kEstimationError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << detail::one_line(e.what()) << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << detail::one_line(e.what()) << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace robpanel::cli
