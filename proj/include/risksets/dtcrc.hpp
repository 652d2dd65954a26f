#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "risksets/common.hpp"
#include "risksets/csv.hpp"
#include "risksets/scores.hpp"

namespace risksets {

enum class NodeClass { normal = 0, anomalous = 1 };

inline const char* node_class_name(NodeClass c) {
  return c == NodeClass::normal ? "normal" : "anomalous";
}

/// Risk targets for the two class-conditional guarantees. B is the loss
/// upper bound (1 for the indicator losses used here); delta realizes the
/// infimum of the threshold search as breakpoint + delta.
struct RiskSpec {
  double alpha_fnr = 0.1;
  double alpha_fpr = 0.1;
  double B = 1.0;
  double delta = 1e-9;

  void validate() const {
    if (!(alpha_fnr > 0.0 && alpha_fnr < B))
      throw ConfigError("risk: need 0 < alpha_fnr < B");
    if (!(alpha_fpr > 0.0 && alpha_fpr < B))
      throw ConfigError("risk: need 0 < alpha_fpr < B");
    if (!(delta > 0.0)) throw ConfigError("risk: delta must be positive");
  }
};

/// Prediction set over {0, 1}, encoded as a 2-bit membership mask
/// (bit 0 = "0 in C", bit 1 = "1 in C").
class PredictionSet {
 public:
  PredictionSet() = default;
  explicit PredictionSet(std::uint8_t mask) : mask_(mask & 0x3) {}

  static PredictionSet make(bool has_normal, bool has_anomalous) {
    return PredictionSet(static_cast<std::uint8_t>((has_normal ? 1 : 0) |
                                                   (has_anomalous ? 2 : 0)));
  }

  bool contains(int label) const { return (mask_ >> label) & 1; }
  int size() const { return (mask_ & 1) + ((mask_ >> 1) & 1); }
  bool is_empty() const { return mask_ == 0; }
  bool is_singleton() const { return size() == 1; }
  bool is_ambiguous() const { return mask_ == 3; }
  std::uint8_t mask() const { return mask_; }

  bool operator==(const PredictionSet&) const = default;

  std::string str() const {
    switch (mask_) {
      case 0: return "{}";
      case 1: return "{0}";
      case 2: return "{1}";
      default: return "{0,1}";
    }
  }

 private:
  std::uint8_t mask_ = 0;
};

/// The calibrated threshold pair together with the calibration counts and the
/// risk spec that produced it.
struct DualThresholds {
  double lambda_normal = 0.0;
  double lambda_ano = 0.0;
  std::size_t n_normal = 0;
  std::size_t n_ano = 0;
  RiskSpec spec;
};

/// Empirical class-conditional risk of the set-valued predictor at threshold
/// lambda. Normal class: FPR loss, fraction of scores with f1 >= lambda
/// (0 dropped from the set). Anomalous class: FNR loss, fraction with
/// f1 < 1 - lambda (1 dropped from the set). Non-increasing in lambda.
inline double empirical_risk(std::span<const double> anomaly_probs, NodeClass cls,
                             double lambda) {
  if (anomaly_probs.empty()) throw NumericError("empirical_risk: empty score vector");
  std::size_t miss = 0;
  if (cls == NodeClass::normal) {
    for (double s : anomaly_probs) miss += (s >= lambda);
  } else {
    const double cut = 1.0 - lambda;
    for (double s : anomaly_probs) miss += (s < cut);
  }
  return static_cast<double>(miss) / static_cast<double>(anomaly_probs.size());
}

/// Smallest threshold whose empirical risk satisfies the conformal bound
/// R(lambda) <= alpha - (B-alpha)/n. The risk is a step function with
/// breakpoints exactly at the calibration scores (normal class) or at
/// 1 - score (anomalous class), so scanning the candidate set
/// {0} u {breakpoint + delta} u {1} is exact. Throws InsufficientCalibration
/// when the bound is negative at this n, i.e. no threshold can certify the
/// guarantee.
inline double calibrate_threshold(std::span<const double> anomaly_probs, NodeClass cls,
                                  double alpha, double B = 1.0, double delta = 1e-9) {
  if (anomaly_probs.empty()) throw NumericError("calibrate_threshold: empty score vector");
  const double n = static_cast<double>(anomaly_probs.size());
  const double target = alpha - (B - alpha) / n;
  if (target < 0.0)
    throw InsufficientCalibration(
        std::string("calibration for class '") + node_class_name(cls) + "' infeasible: alpha - (B-alpha)/n = " +
        fmt_double(target) + " < 0 at n = " + std::to_string(anomaly_probs.size()));

  std::vector<double> candidates;
  candidates.reserve(anomaly_probs.size() + 2);
  candidates.push_back(0.0);
  for (double s : anomaly_probs) {
    const double bp = (cls == NodeClass::normal ? s : 1.0 - s) + delta;
    if (bp <= 1.0) candidates.push_back(bp);
  }
  candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  for (double lambda : candidates)
    if (empirical_risk(anomaly_probs, cls, lambda) <= target) return lambda;
  // Only reachable when scores sit exactly on the closed boundary (e.g. a
  // normal score of 1.0): even the most inclusive threshold keeps the risk
  // above the bound.
  throw InsufficientCalibration(std::string("calibration for class '") + node_class_name(cls) +
                                "' infeasible: risk exceeds the bound at every threshold in [0,1]");
}

/// Membership rules of the intersected set:
/// 0 stays in the set iff f1 < lambda_normal, 1 enters iff f1 >= 1 - lambda_ano.
inline PredictionSet predict_set(double p_anomaly, const DualThresholds& t) {
  return PredictionSet::make(p_anomaly < t.lambda_normal,
                             p_anomaly >= 1.0 - t.lambda_ano);
}

/// Calibrates both thresholds from the Calib split: lambda_normal on calib
/// normal nodes at alpha_fpr, lambda_ano on calib anomalous nodes at
/// alpha_fnr.
inline DualThresholds calibrate_dual(const ScoreTable& t, const RiskSpec& spec) {
  spec.validate();
  const auto normals = t.anomaly_probs(Split::calib, 0);
  const auto anomalies = t.anomaly_probs(Split::calib, 1);
  if (normals.empty())
    throw InsufficientCalibration("calibration split contains no normal nodes");
  if (anomalies.empty())
    throw InsufficientCalibration("calibration split contains no anomalous nodes");
  DualThresholds out;
  out.spec = spec;
  out.n_normal = normals.size();
  out.n_ano = anomalies.size();
  out.lambda_normal =
      calibrate_threshold(normals, NodeClass::normal, spec.alpha_fpr, spec.B, spec.delta);
  out.lambda_ano =
      calibrate_threshold(anomalies, NodeClass::anomalous, spec.alpha_fnr, spec.B, spec.delta);
  return out;
}

/// Prediction sets for every row of the table (typically evaluated on Test).
inline std::vector<PredictionSet> predict_sets(const ScoreTable& t,
                                               const DualThresholds& thr) {
  std::vector<PredictionSet> out;
  out.reserve(t.size());
  for (const auto& r : t.rows) out.push_back(predict_set(r.p_anomaly, thr));
  return out;
}

/// Calibration report CSV: `class,alpha,n_calib,lambda_hat,empirical_risk_at_lambda`.
inline void write_calibration_report(const ScoreTable& t, const DualThresholds& thr,
                                     const std::filesystem::path& path) {
  const auto normals = t.anomaly_probs(Split::calib, 0);
  const auto anomalies = t.anomaly_probs(Split::calib, 1);
  auto out = open_output(path);
  out << "class,alpha,n_calib,lambda_hat,empirical_risk_at_lambda\n";
  out << "normal," << fmt_double(thr.spec.alpha_fpr) << ',' << normals.size() << ','
      << fmt_double(thr.lambda_normal) << ','
      << fmt_double(empirical_risk(normals, NodeClass::normal, thr.lambda_normal)) << '\n';
  out << "anomalous," << fmt_double(thr.spec.alpha_fnr) << ',' << anomalies.size() << ','
      << fmt_double(thr.lambda_ano) << ','
      << fmt_double(empirical_risk(anomalies, NodeClass::anomalous, thr.lambda_ano)) << '\n';
}

// ---------------------------------------------------------------------------
// Split-conformal baselines (TPS / APS / RAPS)

enum class CpMethod { tps, aps, raps };

inline const char* cp_method_name(CpMethod m) {
  switch (m) {
    case CpMethod::tps: return "tps";
    case CpMethod::aps: return "aps";
    default: return "raps";
  }
}

inline CpMethod cp_method_from_name(const std::string& s) {
  if (s == "tps") return CpMethod::tps;
  if (s == "aps") return CpMethod::aps;
  if (s == "raps") return CpMethod::raps;
  throw ConfigError("unknown conformal method '" + s + "'");
}

struct CpSettings {
  CpMethod method = CpMethod::tps;
  double alpha = 0.1;
  double raps_k_reg = 1.0;
  double raps_lambda_reg = 0.01;
  bool aps_randomized = false;  // deterministic variant by default
  std::uint64_t seed = 0;       // used only when aps_randomized

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("cp: alpha must lie in (0,1)");
    if (raps_k_reg < 0.0) throw ConfigError("cp: raps_k_reg must be >= 0");
    if (raps_lambda_reg < 0.0) throw ConfigError("cp: raps_lambda_reg must be >= 0");
  }
};

namespace detail {

/// Class order by descending probability; ties favor class 0.
inline std::array<int, 2> rank_order(double p0, double p1) {
  return p1 > p0 ? std::array<int, 2>{1, 0} : std::array<int, 2>{0, 1};
}

}  // namespace detail

/// Non-randomized nonconformity score of `label` under the given method.
/// TPS: 1 - p_true. APS: descending cumulative probability through the true
/// class. RAPS: APS plus lambda_reg * max(0, rank_true - k_reg).
inline double cp_score(CpMethod method, double p_normal, double p_anomaly, int label,
                       double raps_k_reg = 1.0, double raps_lambda_reg = 0.01) {
  const double p_true = label == 0 ? p_normal : p_anomaly;
  if (method == CpMethod::tps) return 1.0 - p_true;
  const auto order = detail::rank_order(p_normal, p_anomaly);
  const int rank = (order[0] == label) ? 1 : 2;
  const double cumulative = (rank == 1) ? p_true : p_normal + p_anomaly;
  if (method == CpMethod::aps) return cumulative;
  return cumulative + raps_lambda_reg * std::max(0.0, static_cast<double>(rank) - raps_k_reg);
}

struct CpPrediction {
  double q_hat = 0.0;
  /// ceil((n+1)(1-alpha)) exceeded n: q_hat is +inf and every set is {0,1}.
  bool degenerate = false;
  std::vector<std::size_t> test_rows;  // indices into the source table
  std::vector<PredictionSet> sets;     // aligned with test_rows
};

/// Split-conformal calibration and prediction: q_hat is the
/// ceil((n+1)(1-alpha))-th smallest calibration score; a test node's set
/// collects the labels whose hypothetical score is <= q_hat.
inline CpPrediction cp_calibrate_and_predict(const ScoreTable& t, const CpSettings& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("cp: alpha must lie in (0,1)");

  Rng rng(cfg.seed);
  const auto score_of = [&](const ScoreRow& r, int label, Rng& row_rng) {
    if (cfg.method != CpMethod::tps && cfg.aps_randomized) {
      // Randomized APS/RAPS: replace the true-class mass by a uniform slice.
      const double p_true = label == 0 ? r.p_normal : r.p_anomaly;
      const auto order = detail::rank_order(r.p_normal, r.p_anomaly);
      const int rank = (order[0] == label) ? 1 : 2;
      const double before = (rank == 1) ? 0.0 : (order[0] == 0 ? r.p_normal : r.p_anomaly);
      double s = before + row_rng.uniform() * p_true;
      if (cfg.method == CpMethod::raps)
        s += cfg.raps_lambda_reg * std::max(0.0, static_cast<double>(rank) - cfg.raps_k_reg);
      return s;
    }
    return cp_score(cfg.method, r.p_normal, r.p_anomaly, label, cfg.raps_k_reg,
                    cfg.raps_lambda_reg);
  };

  std::vector<double> calib_scores;
  for (const auto& r : t.rows)
    if (r.split == Split::calib) {
      Rng row_rng = rng.derive(r.node_id, 1);
      calib_scores.push_back(score_of(r, r.label, row_rng));
    }
  if (calib_scores.empty()) throw InsufficientCalibration("cp: calibration split is empty");

  CpPrediction out;
  const std::size_t n = calib_scores.size();
  const double rank_real = (static_cast<double>(n) + 1.0) * (1.0 - cfg.alpha);
  const auto k = static_cast<std::size_t>(std::ceil(rank_real - 1e-9));
  if (k > n) {
    out.degenerate = true;
    out.q_hat = std::numeric_limits<double>::infinity();
  } else {
    std::sort(calib_scores.begin(), calib_scores.end());
    out.q_hat = calib_scores[k - 1];
  }

  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    if (r.split != Split::test) continue;
    Rng row_rng = rng.derive(r.node_id, 2);
    const bool has0 = score_of(r, 0, row_rng) <= out.q_hat;
    const bool has1 = score_of(r, 1, row_rng) <= out.q_hat;
    out.test_rows.push_back(i);
    out.sets.push_back(PredictionSet::make(has0, has1));
  }
  return out;
}

}  // namespace risksets
