#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "risksets/common.hpp"
#include "risksets/csv.hpp"
#include "risksets/detector.hpp"
#include "risksets/dtcrc.hpp"
#include "risksets/graph.hpp"
#include "risksets/ssgnc.hpp"

namespace risksets {

/// Flat key-value configuration: one `section.key = value` per line, `#`
/// comments, blank lines ignored. Keys are tracked on read so that typos
/// (keys nobody consumed) can be rejected after loading.
class KvConfig {
 public:
  static KvConfig parse_string(const std::string& text, const std::string& origin = "<string>") {
    KvConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": expected 'section.key = value', got '" + t + "'");
      const std::string key = trim(t.substr(0, eq));
      const std::string val = trim(t.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (!cfg.values_.emplace(key, val).second)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                          "'");
    }
    return cfg;
  }

  static KvConfig parse_file(const std::filesystem::path& path) {
    auto in = open_input(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_dbl(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    return parse_double(it->second, "config key '" + key + "'");
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    const long long v = parse_int(it->second, "config key '" + key + "'");
    if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
  }

  /// Fails on keys present in the file that nothing consumed — cheap typo
  /// detection for a schema-less format.
  void reject_unknown() const {
    for (const auto& [key, value] : values_)
      if (consumed_.count(key) == 0)
        throw ConfigError(origin_ + ": unknown config key '" + key + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  std::string origin_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

enum class DataSource { synthetic, files, scores };

inline DataSource data_source_from_name(const std::string& s) {
  if (s == "synthetic") return DataSource::synthetic;
  if (s == "files") return DataSource::files;
  if (s == "scores") return DataSource::scores;
  throw ConfigError("data.source must be one of synthetic|files|scores, got '" + s + "'");
}

/// Everything an experiment run needs, assembled from a KvConfig with typed
/// defaults. CLI flags (--seed, --out, --trials, --workers) override fields
/// after load.
struct ExperimentConfig {
  DataSource source = DataSource::synthetic;
  SynthConfig synth;
  std::filesystem::path edges_path;
  std::filesystem::path features_path;
  std::filesystem::path scores_path;

  std::array<double, 3> split_ratios{0.30, 0.55, 0.15};
  std::uint64_t seed = 0;

  RiskSpec risk;
  CpSettings cp;
  DetectorConfig detector;
  bool ssgnc_enabled = true;
  SsgncConfig ssgnc;
  HybridLossSpec loss;

  std::size_t trials = 500;
  std::size_t workers = 1;
  std::filesystem::path out_dir = "out";

  std::string sweep_axis = "prototypes";
  std::vector<double> sweep_values;

  static ExperimentConfig from_kv(const KvConfig& kv) {
    ExperimentConfig c;
    c.source = data_source_from_name(kv.get_str("data.source", "synthetic"));
    c.synth.n = kv.get_size("data.n", c.synth.n);
    c.synth.d = kv.get_size("data.dim", c.synth.d);
    c.synth.anomaly_rate = kv.get_dbl("data.anomaly_rate", c.synth.anomaly_rate);
    c.synth.intra_p = kv.get_dbl("data.intra_p", c.synth.intra_p);
    c.synth.inter_p = kv.get_dbl("data.inter_p", c.synth.inter_p);
    c.synth.feature_shift = kv.get_dbl("data.feature_shift", c.synth.feature_shift);
    c.synth.heterophily = kv.get_dbl("data.heterophily", c.synth.heterophily);
    c.edges_path = kv.get_str("data.edges", "");
    c.features_path = kv.get_str("data.features", "");
    c.scores_path = kv.get_str("data.scores", "");

    c.split_ratios[0] = kv.get_dbl("split.train", c.split_ratios[0]);
    c.split_ratios[1] = kv.get_dbl("split.calib", c.split_ratios[1]);
    c.split_ratios[2] = kv.get_dbl("split.test", c.split_ratios[2]);
    c.seed = kv.get_u64("split.seed", c.seed);

    c.risk.alpha_fnr = kv.get_dbl("risk.alpha_fnr", c.risk.alpha_fnr);
    c.risk.alpha_fpr = kv.get_dbl("risk.alpha_fpr", c.risk.alpha_fpr);
    c.risk.B = kv.get_dbl("risk.B", c.risk.B);
    c.risk.delta = kv.get_dbl("risk.delta", c.risk.delta);

    c.cp.alpha = kv.get_dbl("cp.alpha", c.cp.alpha);
    c.cp.raps_k_reg = kv.get_dbl("cp.raps_k_reg", c.cp.raps_k_reg);
    c.cp.raps_lambda_reg = kv.get_dbl("cp.raps_lambda_reg", c.cp.raps_lambda_reg);
    c.cp.aps_randomized = kv.get_bool("cp.aps_randomized", c.cp.aps_randomized);

    c.detector.hidden = kv.get_size("detector.hidden", c.detector.hidden);
    c.detector.lr = kv.get_dbl("detector.lr", c.detector.lr);
    c.detector.epochs = kv.get_size("detector.epochs", c.detector.epochs);

    c.ssgnc_enabled = kv.get_bool("ssgnc.enabled", c.ssgnc_enabled);
    c.ssgnc.K = kv.get_size("ssgnc.prototypes", c.ssgnc.K);
    c.ssgnc.M = kv.get_size("ssgnc.cheb_order", c.ssgnc.M);
    c.ssgnc.L = kv.get_size("ssgnc.layers", c.ssgnc.L);
    c.ssgnc.T_route = kv.get_size("ssgnc.route_iters", c.ssgnc.T_route);
    c.ssgnc.beta = kv.get_dbl("ssgnc.beta", c.ssgnc.beta);
    c.ssgnc.epsilon = kv.get_dbl("ssgnc.epsilon", c.ssgnc.epsilon);
    c.ssgnc.hidden = kv.get_size("ssgnc.hidden", c.ssgnc.hidden);
    c.ssgnc.dropout = kv.get_dbl("ssgnc.dropout", c.ssgnc.dropout);
    c.ssgnc.rescale_spectrum = kv.get_bool("ssgnc.rescale_spectrum", c.ssgnc.rescale_spectrum);
    c.ssgnc.use_detector_probs =
        kv.get_bool("ssgnc.use_detector_probs", c.ssgnc.use_detector_probs);
    c.ssgnc.lr = kv.get_dbl("ssgnc.lr", c.ssgnc.lr);
    c.ssgnc.epochs = kv.get_size("ssgnc.epochs", c.ssgnc.epochs);
    c.ssgnc.internal_calib_frac =
        kv.get_dbl("ssgnc.internal_calib_frac", c.ssgnc.internal_calib_frac);

    c.loss.gamma = kv.get_dbl("loss.gamma", c.loss.gamma);
    c.loss.tau = kv.get_dbl("loss.tau", c.loss.tau);
    c.loss.refresh_every = kv.get_size("loss.refresh_every", c.loss.refresh_every);
    c.loss.auto_class_weights = kv.get_bool("loss.auto_class_weights", c.loss.auto_class_weights);
    c.loss.class_weights[0] = kv.get_dbl("loss.weight_normal", c.loss.class_weights[0]);
    c.loss.class_weights[1] = kv.get_dbl("loss.weight_anomalous", c.loss.class_weights[1]);
    c.loss.risk = c.risk;

    c.trials = kv.get_size("mc.trials", c.trials);
    c.workers = kv.get_size("mc.workers", c.workers);
    c.out_dir = kv.get_str("out.dir", c.out_dir.string());

    c.sweep_axis = kv.get_str("sweep.axis", c.sweep_axis);
    const std::string values = kv.get_str("sweep.values", "");
    if (!values.empty())
      for (const auto& tok : split_csv_line(values))
        c.sweep_values.push_back(parse_double(tok, "sweep.values"));

    kv.reject_unknown();
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    return from_kv(KvConfig::parse_file(path));
  }

  void validate() const {
    switch (source) {
      case DataSource::synthetic:
        synth.validate();
        break;
      case DataSource::files:
        if (edges_path.empty() || features_path.empty())
          throw ConfigError("data.source=files needs data.edges and data.features");
        for (const auto& p : {edges_path, features_path})
          if (!std::filesystem::exists(p))
            throw ConfigError("configured file does not exist: '" + p.string() + "'");
        break;
      case DataSource::scores:
        if (scores_path.empty()) throw ConfigError("data.source=scores needs data.scores");
        if (!std::filesystem::exists(scores_path))
          throw ConfigError("configured file does not exist: '" + scores_path.string() + "'");
        break;
    }
    double sum = 0.0;
    for (double r : split_ratios) {
      if (r <= 0.0) throw ConfigError("split ratios must be positive");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    risk.validate();
    cp.validate();
    detector.validate();
    if (ssgnc_enabled) {
      ssgnc.validate();
      loss.validate();
    }
    if (workers == 0) throw ConfigError("mc.workers must be >= 1");
    if (out_dir.empty()) throw ConfigError("out.dir must not be empty");
  }
};

}  // namespace risksets
