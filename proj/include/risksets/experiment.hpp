#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "risksets/config.hpp"
#include "risksets/detector.hpp"
#include "risksets/graph_io.hpp"
#include "risksets/metrics.hpp"
#include "risksets/ssgnc.hpp"

namespace risksets {

// ---------------------------------------------------------------------------
// Shared plumbing

/// Runs fn(0..n-1) across up to `workers` threads. Work items must be
/// independent; the first escaped exception is rethrown after the join, so
/// item-level failures that should be tolerated must be caught inside fn.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  const std::size_t n_threads = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct Dataset {
  Graph graph;
  NodeSplit split;
};

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.source == DataSource::scores)
    throw ConfigError("this command needs a graph; data.source=scores provides none");
  Dataset d;
  if (cfg.source == DataSource::synthetic) {
    d.graph = generate_synthetic(cfg.synth, cfg.seed);
  } else {
    d.graph = load_graph_files(cfg.edges_path, cfg.features_path);
  }
  d.split = split_nodes(d.graph, cfg.split_ratios, cfg.seed);
  return d;
}

/// SSGNC input features: raw node features, optionally with the detector's
/// two probabilities appended as extra columns.
inline Matrix build_ssgnc_input(const Graph& g, const ScoreTable& det, bool use_probs) {
  if (!use_probs) return g.features();
  if (det.size() != g.num_nodes())
    throw ConfigError("score table does not cover the graph's node set");
  const std::size_t d = g.feature_dim();
  Matrix x(g.num_nodes(), d + 2);
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    if (det.rows[i].node_id != i)
      throw ConfigError("score table node ids do not match the graph");
    for (std::size_t j = 0; j < d; ++j) x(i, j) = g.features()(i, j);
    x(i, d) = det.rows[i].p_normal;
    x(i, d + 1) = det.rows[i].p_anomaly;
  }
  return x;
}

inline MetricsReport test_metrics_of(const ScoreTable& t,
                                     std::span<const PredictionSet> sets) {
  std::vector<int> labels;
  std::vector<std::size_t> test_rows;
  labels.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    labels.push_back(t.rows[i].label);
    if (t.rows[i].split == Split::test) test_rows.push_back(i);
  }
  return evaluate_sets(sets, labels, test_rows);
}

inline MetricsReport cp_test_metrics(const ScoreTable& t, const CpPrediction& p) {
  std::vector<int> labels;
  labels.reserve(p.test_rows.size());
  for (std::size_t idx : p.test_rows) labels.push_back(t.rows[idx].label);
  return evaluate_sets(p.sets, labels);
}

// ---------------------------------------------------------------------------
// gen / detect / calibrate

/// Writes the synthetic graph as `edges.tsv` + `features.csv` in out_dir.
inline Graph run_gen(const ExperimentConfig& cfg) {
  if (cfg.source != DataSource::synthetic)
    throw ConfigError("gen requires data.source=synthetic");
  cfg.validate();
  Graph g = generate_synthetic(cfg.synth, cfg.seed);
  write_edge_list(g, cfg.out_dir / "edges.tsv");
  write_feature_csv(g, cfg.out_dir / "features.csv");
  return g;
}

/// Trains the built-in detector (or imports external scores) and writes
/// `scores.csv`.
inline ScoreTable run_detect(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.source == DataSource::scores) {
    ScoreTable t = import_scores(cfg.scores_path);
    export_scores(t, cfg.out_dir / "scores.csv");
    return t;
  }
  Dataset data = load_dataset(cfg);
  auto det = train_detector(data.graph, data.split, cfg.detector, cfg.seed);
  export_scores(det.table, cfg.out_dir / "scores.csv");
  return std::move(det.table);
}

/// DTCRC calibration + Test metrics from an existing score table
/// (data.scores if configured, else out_dir/scores.csv).
inline MetricsReport run_calibrate(const ExperimentConfig& cfg) {
  const auto path =
      cfg.scores_path.empty() ? cfg.out_dir / "scores.csv" : cfg.scores_path;
  const ScoreTable t = import_scores(path);
  const DualThresholds thr = calibrate_dual(t, cfg.risk);
  const auto sets = predict_sets(t, thr);
  const MetricsReport m = test_metrics_of(t, sets);
  write_calibration_report(t, thr, cfg.out_dir / "calibration_report.csv");
  write_metrics_csv(m, cfg.out_dir / "metrics_dtcrc.csv");
  write_reliability_csv(reliability_diagram(t, 0, 10), cfg.out_dir / "reliability_normal.csv");
  write_reliability_csv(reliability_diagram(t, 1, 10),
                        cfg.out_dir / "reliability_anomalous.csv");
  return m;
}

// ---------------------------------------------------------------------------
// pipeline

struct PipelineResult {
  std::optional<Dataset> dataset;  // absent for imported scores
  ScoreTable detector_table;
  std::optional<SsgncTrainResult> ssgnc;
  DualThresholds thresholds;          // final path
  std::vector<PredictionSet> sets;    // final path, all rows
  MetricsReport test_metrics;         // final path, Test split
  std::optional<MetricsReport> raw_test_metrics;  // detector path when SSGNC ran
  std::map<std::string, MetricsReport> cp_metrics;  // keyed tps/aps/raps

  const ScoreTable& final_table() const {
    return ssgnc ? ssgnc->table : detector_table;
  }
};

/// detect (train or import) -> optional SSGNC -> DTCRC calibrate -> predict
/// on Test -> metrics, plus the three CP baselines on the same final table.
/// Pure computation; file emission lives in run_pipeline.
inline PipelineResult run_pipeline_core(const ExperimentConfig& cfg) {
  cfg.validate();
  PipelineResult out;

  if (cfg.source == DataSource::scores) {
    out.detector_table = import_scores(cfg.scores_path);
  } else {
    out.dataset = load_dataset(cfg);
    auto det =
        train_detector(out.dataset->graph, out.dataset->split, cfg.detector, cfg.seed);
    out.detector_table = std::move(det.table);
    if (cfg.ssgnc_enabled) {
      const Matrix x = build_ssgnc_input(out.dataset->graph, out.detector_table,
                                         cfg.ssgnc.use_detector_probs);
      auto params = SsgncParams::init(cfg.ssgnc, x.cols, cfg.seed);
      out.ssgnc = train_ssgnc(out.dataset->graph, x, out.dataset->graph.labels(),
                              out.dataset->split, std::move(params), cfg.loss,
                              cfg.ssgnc.epochs, cfg.seed);
      const DualThresholds raw_thr = calibrate_dual(out.detector_table, cfg.risk);
      out.raw_test_metrics =
          test_metrics_of(out.detector_table, predict_sets(out.detector_table, raw_thr));
    }
  }

  const ScoreTable& final_t = out.final_table();
  out.thresholds = calibrate_dual(final_t, cfg.risk);
  out.sets = predict_sets(final_t, out.thresholds);
  out.test_metrics = test_metrics_of(final_t, out.sets);

  for (CpMethod m : {CpMethod::tps, CpMethod::aps, CpMethod::raps}) {
    CpSettings cp = cfg.cp;
    cp.method = m;
    cp.seed = cfg.seed;
    out.cp_metrics.emplace(cp_method_name(m),
                           cp_test_metrics(final_t, cp_calibrate_and_predict(final_t, cp)));
  }
  return out;
}

/// run_pipeline_core plus artifact emission into out_dir.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  PipelineResult r = run_pipeline_core(cfg);
  const auto& dir = cfg.out_dir;
  export_scores(r.detector_table, dir / "scores.csv");
  if (r.ssgnc) {
    export_scores(r.ssgnc->table, dir / "scores_ssgnc.csv");
    write_training_log(r.ssgnc->log, dir / "training_log.csv");
    save_ssgnc_checkpoint(r.ssgnc->params, dir / "ssgnc_checkpoint.csv");
    write_metrics_csv(*r.raw_test_metrics, dir / "metrics_dtcrc_raw.csv");
  }
  const ScoreTable& final_t = r.final_table();
  write_calibration_report(final_t, r.thresholds, dir / "calibration_report.csv");
  write_metrics_csv(r.test_metrics, dir / "metrics_dtcrc.csv");
  for (const auto& [name, m] : r.cp_metrics)
    write_metrics_csv(m, dir / ("metrics_cp_" + name + ".csv"));
  write_reliability_csv(reliability_diagram(final_t, 0, 10), dir / "reliability_normal.csv");
  write_reliability_csv(reliability_diagram(final_t, 1, 10),
                        dir / "reliability_anomalous.csv");
  if (r.dataset)
    write_entropy_csv(neighborhood_inefficiency_entropy(r.dataset->graph, r.sets),
                      dir / "entropy.csv");
  return r;
}

// ---------------------------------------------------------------------------
// guarantee (Monte Carlo re-splits)

struct TrialRow {
  std::size_t trial = 0;
  bool feasible = false;
  std::string error;
  double lambda_normal = 0.0;
  double lambda_ano = 0.0;
  double fnr = 0.0;
  double fpr = 0.0;
  double cov = 0.0;
  double ine = 0.0;
  double amb = 0.0;
  double single = 0.0;
  std::size_t n_calib_normal = 0;
  std::size_t n_calib_ano = 0;
  std::size_t n_test_normal = 0;
  std::size_t n_test_ano = 0;
  std::array<double, 3> cp_cov{};  // tps, aps, raps
  std::array<double, 3> cp_ine{};
};

struct GuaranteeResult {
  std::vector<TrialRow> trials;
  std::size_t infeasible = 0;
};

namespace detail {

struct PooledRow {
  double p_normal;
  double p_anomaly;
  int label;
  std::uint32_t node_id;
};

inline TrialRow run_guarantee_trial(std::span<const PooledRow> pool, std::size_t n_calib,
                                    const ExperimentConfig& cfg, std::size_t trial) {
  TrialRow row;
  row.trial = trial;
  Rng rng = Rng(cfg.seed).derive(0x7472696cULL, trial);
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<double> calib_normal;
  std::vector<double> calib_ano;
  for (std::size_t i = 0; i < n_calib; ++i) {
    const auto& r = pool[order[i]];
    (r.label == 0 ? calib_normal : calib_ano).push_back(r.p_anomaly);
  }
  row.n_calib_normal = calib_normal.size();
  row.n_calib_ano = calib_ano.size();
  row.n_test_normal = 0;
  row.n_test_ano = 0;

  try {
    if (calib_normal.empty() || calib_ano.empty())
      throw InsufficientCalibration("re-split calibration lost a class");
    DualThresholds thr;
    thr.spec = cfg.risk;
    thr.n_normal = calib_normal.size();
    thr.n_ano = calib_ano.size();
    thr.lambda_normal = calibrate_threshold(calib_normal, NodeClass::normal,
                                            cfg.risk.alpha_fpr, cfg.risk.B, cfg.risk.delta);
    thr.lambda_ano = calibrate_threshold(calib_ano, NodeClass::anomalous,
                                         cfg.risk.alpha_fnr, cfg.risk.B, cfg.risk.delta);
    row.lambda_normal = thr.lambda_normal;
    row.lambda_ano = thr.lambda_ano;

    std::vector<PredictionSet> sets;
    std::vector<int> labels;
    sets.reserve(pool.size() - n_calib);
    for (std::size_t i = n_calib; i < pool.size(); ++i) {
      const auto& r = pool[order[i]];
      sets.push_back(predict_set(r.p_anomaly, thr));
      labels.push_back(r.label);
      ++(r.label == 0 ? row.n_test_normal : row.n_test_ano);
    }
    const MetricsReport m = evaluate_sets(sets, labels);
    row.fnr = m.set_fnr.value_or(0.0);
    row.fpr = m.set_fpr.value_or(0.0);
    row.cov = m.coverage;
    row.ine = m.inefficiency;
    row.amb = m.ambiguity;
    row.single = m.singleton_rate;
    row.feasible = true;
  } catch (const InsufficientCalibration& e) {
    row.error = e.what();
    return row;
  }

  // CP baselines on the same re-split (quantile calibration cannot go
  // infeasible; the degenerate all-{0,1} case is legal output).
  Rng trial_rng = Rng(cfg.seed).derive(0x63707472ULL, trial);
  for (std::size_t mi = 0; mi < 3; ++mi) {
    const CpMethod method = mi == 0 ? CpMethod::tps : mi == 1 ? CpMethod::aps : CpMethod::raps;
    const CpSettings& cp = cfg.cp;
    const auto score_of = [&](const PooledRow& r, int label, Rng& row_rng) {
      const double base = cp_score(method, r.p_normal, r.p_anomaly, label, cp.raps_k_reg,
                                   cp.raps_lambda_reg);
      if (method == CpMethod::tps || !cp.aps_randomized) return base;
      // Randomized variant: replace the full true-class mass by a uniform slice.
      const double p_true = label == 0 ? r.p_normal : r.p_anomaly;
      return base - (1.0 - row_rng.uniform()) * p_true;
    };
    std::vector<double> cal;
    cal.reserve(n_calib);
    for (std::size_t i = 0; i < n_calib; ++i) {
      const auto& r = pool[order[i]];
      Rng row_rng = trial_rng.derive(r.node_id, 1);
      cal.push_back(score_of(r, r.label, row_rng));
    }
    const std::size_t n = cal.size();
    const double rank_real = (static_cast<double>(n) + 1.0) * (1.0 - cp.alpha);
    const auto k = static_cast<std::size_t>(std::ceil(rank_real - 1e-9));
    double q_hat;
    if (k > n) {
      q_hat = std::numeric_limits<double>::infinity();
    } else {
      std::sort(cal.begin(), cal.end());
      q_hat = cal[k - 1];
    }
    std::size_t covered = 0;
    std::size_t total_size = 0;
    const std::size_t n_test = pool.size() - n_calib;
    for (std::size_t i = n_calib; i < pool.size(); ++i) {
      const auto& r = pool[order[i]];
      Rng row_rng = trial_rng.derive(r.node_id, 2);
      const bool has0 = score_of(r, 0, row_rng) <= q_hat;
      const bool has1 = score_of(r, 1, row_rng) <= q_hat;
      covered += (r.label == 0 ? has0 : has1);
      total_size += static_cast<std::size_t>(has0) + static_cast<std::size_t>(has1);
    }
    row.cp_cov[mi] = static_cast<double>(covered) / static_cast<double>(n_test);
    row.cp_ine[mi] = static_cast<double>(total_size) / static_cast<double>(n_test);
  }
  return row;
}

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double sd_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace detail

/// Monte Carlo guarantee check: holds Train (and hence all scores) fixed,
/// re-splits the pooled Calib u Test rows uniformly `trials` times,
/// recalibrates on each re-split and evaluates the fresh Test part. Writes
/// `guarantee_trials.csv` and `guarantee_summary.csv`.
inline GuaranteeResult run_guarantee(const ExperimentConfig& cfg) {
  if (cfg.trials < 100)
    throw ConfigError("guarantee: mc.trials must be >= 100, got " +
                      std::to_string(cfg.trials) +
                      " (means over few trials say nothing about the bound)");

  const ScoreTable table = [&] {
    if (cfg.source == DataSource::scores) return import_scores(cfg.scores_path);
    PipelineResult p = run_pipeline_core(cfg);
    return p.ssgnc ? std::move(p.ssgnc->table) : std::move(p.detector_table);
  }();

  std::vector<detail::PooledRow> pool;
  std::size_t n_calib = 0;
  for (const auto& r : table.rows) {
    if (r.split == Split::train) continue;
    n_calib += (r.split == Split::calib);
    pool.push_back({r.p_normal, r.p_anomaly, r.label, r.node_id});
  }
  if (n_calib == 0 || n_calib == pool.size())
    throw ConfigError("guarantee: need non-empty Calib and Test splits to pool");

  GuaranteeResult out;
  out.trials.resize(cfg.trials);
  parallel_for(cfg.trials, cfg.workers, [&](std::size_t t) {
    out.trials[t] = detail::run_guarantee_trial(pool, n_calib, cfg, t);
  });
  for (const auto& r : out.trials) out.infeasible += !r.feasible;

  // Trials CSV (already in trial order; aggregation below is order-free).
  {
    auto f = open_output(cfg.out_dir / "guarantee_trials.csv");
    f << "trial,feasible,lambda_normal,lambda_ano,fnr,fpr,cov,ine,amb,single,"
         "n_calib_normal,n_calib_ano,n_test_normal,n_test_ano,"
         "tps_cov,tps_ine,aps_cov,aps_ine,raps_cov,raps_ine\n";
    for (const auto& r : out.trials) {
      f << r.trial << ',' << (r.feasible ? 1 : 0) << ',' << fmt_double(r.lambda_normal)
        << ',' << fmt_double(r.lambda_ano) << ',' << fmt_double(r.fnr) << ','
        << fmt_double(r.fpr) << ',' << fmt_double(r.cov) << ',' << fmt_double(r.ine) << ','
        << fmt_double(r.amb) << ',' << fmt_double(r.single) << ',' << r.n_calib_normal
        << ',' << r.n_calib_ano << ',' << r.n_test_normal << ',' << r.n_test_ano;
      for (std::size_t mi = 0; mi < 3; ++mi)
        f << ',' << fmt_double(r.cp_cov[mi]) << ',' << fmt_double(r.cp_ine[mi]);
      f << '\n';
    }
  }

  const double infeasible_frac =
      static_cast<double>(out.infeasible) / static_cast<double>(cfg.trials);
  if (infeasible_frac > 0.01) {
    std::string examples;
    std::size_t shown = 0;
    for (const auto& r : out.trials)
      if (!r.feasible && shown < 3) {
        examples += "\n  trial " + std::to_string(r.trial) + ": " + r.error;
        ++shown;
      }
    throw NumericError("guarantee: " + std::to_string(out.infeasible) + "/" +
                       std::to_string(cfg.trials) +
                       " trials had infeasible calibration (> 1%); the pooled splits are "
                       "too small for the requested risk targets." +
                       examples);
  }

  // Summary CSV: one row per tracked quantity with a 3-sigma verdict.
  std::vector<double> fnr, fpr, cov, ine, amb, single, ncn, nca;
  std::array<std::vector<double>, 3> cpc, cpi;
  for (const auto& r : out.trials) {
    if (!r.feasible) continue;
    fnr.push_back(r.fnr);
    fpr.push_back(r.fpr);
    cov.push_back(r.cov);
    ine.push_back(r.ine);
    amb.push_back(r.amb);
    single.push_back(r.single);
    ncn.push_back(static_cast<double>(r.n_calib_normal));
    nca.push_back(static_cast<double>(r.n_calib_ano));
    for (std::size_t mi = 0; mi < 3; ++mi) {
      cpc[mi].push_back(r.cp_cov[mi]);
      cpi[mi].push_back(r.cp_ine[mi]);
    }
  }
  if (fnr.empty()) throw NumericError("guarantee: no feasible trials");

  auto f = open_output(cfg.out_dir / "guarantee_summary.csv");
  f << "quantity,mean,sd,stderr,trials,target,comparison,pass\n";
  const double nt = static_cast<double>(fnr.size());
  const auto emit = [&](const std::string& name, const std::vector<double>& xs, double target,
                        const char* cmp) {
    const double m = detail::mean_of(xs);
    const double sd = detail::sd_of(xs, m);
    const double se = sd / std::sqrt(nt);
    std::string pass = "na";
    if (std::string(cmp) == "<=") pass = m <= target + 3.0 * se ? "pass" : "fail";
    if (std::string(cmp) == ">=") pass = m >= target - 3.0 * se ? "pass" : "fail";
    f << name << ',' << fmt_double(m) << ',' << fmt_double(sd) << ',' << fmt_double(se)
      << ',' << xs.size() << ',' << (std::isnan(target) ? "nan" : fmt_double(target)) << ','
      << cmp << ',' << pass << '\n';
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double mean_nca = detail::mean_of(nca);
  const double mean_ncn = detail::mean_of(ncn);
  emit("set_fnr", fnr, cfg.risk.alpha_fnr, "<=");
  emit("set_fnr_lower", fnr,
       cfg.risk.alpha_fnr - (cfg.risk.B - cfg.risk.alpha_fnr) / mean_nca, ">=");
  emit("set_fpr", fpr, cfg.risk.alpha_fpr, "<=");
  emit("set_fpr_lower", fpr,
       cfg.risk.alpha_fpr - (cfg.risk.B - cfg.risk.alpha_fpr) / mean_ncn, ">=");
  emit("coverage", cov, nan, "");
  emit("inefficiency", ine, nan, "");
  emit("ambiguity", amb, nan, "");
  emit("singleton", single, nan, "");
  emit("n_calib_normal", ncn, nan, "");
  emit("n_calib_ano", nca, nan, "");
  const char* names[3] = {"tps", "aps", "raps"};
  for (std::size_t mi = 0; mi < 3; ++mi) {
    emit(std::string(names[mi]) + "_coverage", cpc[mi], 1.0 - cfg.cp.alpha, ">=");
    emit(std::string(names[mi]) + "_inefficiency", cpi[mi], nan, "");
  }
  return out;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepCell {
  double value = 0.0;
  std::string status;  // "ok" or an error description
  MetricsReport metrics;
  double lambda_normal = 0.0;
  double lambda_ano = 0.0;
};

/// One full pipeline per axis value; per-cell failures are recorded in the
/// status column and the sweep continues. Writes `sweep.csv`.
inline std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg) {
  if (cfg.sweep_values.empty()) throw ConfigError("sweep: sweep.values is empty");
  if (cfg.sweep_axis != "prototypes" && cfg.sweep_axis != "alpha")
    throw ConfigError("sweep: axis must be 'prototypes' or 'alpha', got '" + cfg.sweep_axis +
                      "'");
  for (double v : cfg.sweep_values) {
    if (cfg.sweep_axis == "prototypes" &&
        (v < 1.0 || v != std::floor(v) || v > 1e6))
      throw ConfigError("sweep: prototype counts must be positive integers");
    if (cfg.sweep_axis == "alpha" && (v <= 0.0 || v >= 1.0))
      throw ConfigError("sweep: alpha values must lie in (0,1)");
  }

  std::vector<SweepCell> cells(cfg.sweep_values.size());
  parallel_for(cells.size(), cfg.workers, [&](std::size_t i) {
    SweepCell& cell = cells[i];
    cell.value = cfg.sweep_values[i];
    try {
      ExperimentConfig c = cfg;
      if (cfg.sweep_axis == "prototypes") {
        c.ssgnc.K = static_cast<std::size_t>(cell.value);
      } else {
        c.risk.alpha_fnr = cell.value;
        c.risk.alpha_fpr = cell.value;
        c.loss.risk = c.risk;
        c.cp.alpha = cell.value;
      }
      PipelineResult r = run_pipeline_core(c);
      cell.metrics = r.test_metrics;
      cell.lambda_normal = r.thresholds.lambda_normal;
      cell.lambda_ano = r.thresholds.lambda_ano;
      cell.status = "ok";
    } catch (const Error& e) {
      std::string msg = e.what();
      for (auto& ch : msg)
        if (ch == ',' || ch == '\n') ch = ';';
      cell.status = msg;
    }
  });

  auto f = open_output(cfg.out_dir / "sweep.csv");
  f << "axis,value,status,fnr,fpr,cov,ine,amb,single,lambda_normal,lambda_ano\n";
  for (const auto& cell : cells) {
    f << cfg.sweep_axis << ',' << fmt_double(cell.value) << ',' << cell.status;
    if (cell.status == "ok") {
      f << ',' << fmt_double(cell.metrics.set_fnr.value_or(NAN)) << ','
        << fmt_double(cell.metrics.set_fpr.value_or(NAN)) << ','
        << fmt_double(cell.metrics.coverage) << ',' << fmt_double(cell.metrics.inefficiency)
        << ',' << fmt_double(cell.metrics.ambiguity) << ','
        << fmt_double(cell.metrics.singleton_rate) << ',' << fmt_double(cell.lambda_normal)
        << ',' << fmt_double(cell.lambda_ano);
    } else {
      f << ",nan,nan,nan,nan,nan,nan,nan,nan";
    }
    f << '\n';
  }
  return cells;
}

// ---------------------------------------------------------------------------
// report

/// Concatenates every metrics_*.csv in out_dir into a method-keyed
/// comparison table (report.csv) and returns it as a printable string.
inline std::string run_report(const std::filesystem::path& out_dir) {
  std::vector<std::pair<std::string, std::string>> rows;  // method -> csv row
  if (!std::filesystem::is_directory(out_dir))
    throw IoError("report: output directory '" + out_dir.string() + "' does not exist");
  for (const auto& entry : std::filesystem::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) != 0 || entry.path().extension() != ".csv") continue;
    const std::string method = name.substr(8, name.size() - 8 - 4);
    auto in = open_input(entry.path());
    std::string header, row;
    if (!std::getline(in, header) || !std::getline(in, row))
      throw ConfigError("report: '" + name + "' is not a metrics CSV");
    if (!row.empty() && row.back() == '\r') row.pop_back();
    rows.emplace_back(method, row);
  }
  if (rows.empty())
    throw ConfigError("report: no metrics_*.csv files in '" + out_dir.string() + "'");
  std::sort(rows.begin(), rows.end());

  auto f = open_output(out_dir / "report.csv");
  std::string text = "method,Cov,Ine,Amb,Single,FNR,FPR\n";
  for (const auto& [method, row] : rows) text += method + "," + row + "\n";
  f << text;
  return text;
}

}  // namespace risksets
