// risksets command-line front end.
//
// Verbs:
//   gen        write a synthetic benchmark graph (edges.tsv, features.csv)
//   detect     train the GCN detector (or import scores) and write scores.csv
//   calibrate  dual-threshold calibration + Test metrics from a score table
//   pipeline   detect -> optional SSGNC -> calibrate -> metrics + CP baselines
//   guarantee  Monte Carlo re-split check of the risk bounds
//   sweep      pipeline across a one-dimensional config sweep
//   report     collect metrics_*.csv into a method comparison table
//
// Exit codes: 0 success, 1 numeric/statistical failure, 2 usage or config error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "risksets/experiment.hpp"

namespace {

using namespace risksets;

struct CliOverrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> workers;
};

void add_common_flags(CLI::App* cmd, CliOverrides& o) {
  cmd->add_option("--config", o.config_path, "key=value config file");
  cmd->add_option("--seed", o.seed, "master RNG seed (overrides split.seed)");
  cmd->add_option("--out", o.out, "output directory (overrides out.dir)");
  cmd->add_option("--trials", o.trials, "Monte Carlo trial count (overrides mc.trials)");
  cmd->add_option("--workers", o.workers, "worker thread count (overrides mc.workers)");
}

ExperimentConfig make_config(const CliOverrides& o) {
  ExperimentConfig cfg =
      o.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (o.trials) cfg.trials = *o.trials;
  if (o.workers) cfg.workers = *o.workers;
  return cfg;
}

void print_metrics(const char* tag, const MetricsReport& m) {
  std::printf("%-16s cov=%.4f ine=%.4f amb=%.4f single=%.4f", tag, m.coverage,
              m.inefficiency, m.ambiguity, m.singleton_rate);
  if (m.set_fnr) std::printf(" fnr=%.4f", *m.set_fnr);
  if (m.set_fpr) std::printf(" fpr=%.4f", *m.set_fpr);
  std::printf("  (n=%zu)\n", m.n);
}

void print_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  std::ostringstream ss;
  ss << f.rdbuf();
  std::fputs(ss.str().c_str(), stdout);
}

std::array<std::size_t, 3> split_counts(const ScoreTable& t) {
  std::array<std::size_t, 3> c{};
  for (const auto& r : t.rows) ++c[static_cast<std::size_t>(r.split)];
  return c;
}

int dispatch(const std::string& verb, const ExperimentConfig& cfg) {
  if (verb == "gen") {
    const Graph g = run_gen(cfg);
    std::printf("gen: %zu nodes, %zu edges, %zu features -> %s/{edges.tsv,features.csv}\n",
                g.num_nodes(), g.num_arcs() / 2, g.feature_dim(), cfg.out_dir.c_str());
  } else if (verb == "detect") {
    const ScoreTable t = run_detect(cfg);
    const auto c = split_counts(t);
    std::printf("detect: %zu nodes scored (train %zu, calib %zu, test %zu) -> %s/scores.csv\n",
                t.size(), c[0], c[1], c[2], cfg.out_dir.c_str());
  } else if (verb == "calibrate") {
    const MetricsReport m = run_calibrate(cfg);
    print_metrics("calibrate(test)", m);
    std::printf("wrote calibration_report.csv, metrics_dtcrc.csv, reliability_*.csv to %s\n",
                cfg.out_dir.c_str());
  } else if (verb == "pipeline") {
    const PipelineResult r = run_pipeline(cfg);
    const auto c = split_counts(r.final_table());
    std::printf("pipeline: %zu nodes (train %zu, calib %zu, test %zu), scorer=%s\n",
                r.final_table().size(), c[0], c[1], c[2],
                r.ssgnc ? "ssgnc" : "detector");
    std::printf("thresholds: lambda_normal=%.6f lambda_ano=%.6f (n_calib %zu/%zu)\n",
                r.thresholds.lambda_normal, r.thresholds.lambda_ano, r.thresholds.n_normal,
                r.thresholds.n_ano);
    print_metrics("dtcrc(test)", r.test_metrics);
    if (r.raw_test_metrics) print_metrics("dtcrc_raw(test)", *r.raw_test_metrics);
    for (const auto& [name, m] : r.cp_metrics)
      print_metrics(("cp_" + name + "(test)").c_str(), m);
    std::printf("artifacts in %s\n", cfg.out_dir.c_str());
  } else if (verb == "guarantee") {
    const GuaranteeResult g = run_guarantee(cfg);
    std::printf("guarantee: %zu trials, %zu infeasible\n", g.trials.size(), g.infeasible);
    print_file(cfg.out_dir / "guarantee_summary.csv");
  } else if (verb == "sweep") {
    const auto cells = run_sweep(cfg);
    std::size_t failed = 0;
    for (const auto& c : cells) failed += c.status != "ok";
    std::printf("sweep: axis=%s, %zu cells, %zu failed\n", cfg.sweep_axis.c_str(),
                cells.size(), failed);
    print_file(cfg.out_dir / "sweep.csv");
  } else if (verb == "report") {
    std::fputs(run_report(cfg.out_dir).c_str(), stdout);
  } else {
    throw ConfigError("unknown verb '" + verb + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prediction sets with dual-threshold risk control for graph anomaly detection"};
  app.require_subcommand(1);
  CliOverrides o;
  for (const char* verb : {"gen", "detect", "calibrate", "pipeline", "guarantee", "sweep",
                           "report"}) {
    CLI::App* cmd = app.add_subcommand(verb);
    add_common_flags(cmd, o);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0; any usage error exits 2
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    return dispatch(verb, make_config(o));
  } catch (const ConfigError& e) {
    std::cerr << verb << ": config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << verb << ": io error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << verb << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << verb << ": unexpected error: " << e.what() << '\n';
    return 1;
  }
}
