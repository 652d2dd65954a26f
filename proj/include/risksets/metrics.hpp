#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "risksets/csv.hpp"
#include "risksets/dtcrc.hpp"
#include "risksets/graph.hpp"
#include "risksets/scores.hpp"

namespace risksets {

/// Set-valued evaluation summary. set_fnr/set_fpr stay unset (not zero) when
/// the filter holds no node of the corresponding class; a silent zero would
/// fake guarantee satisfaction.
struct MetricsReport {
  double coverage = 0.0;        // mean I(y in C)
  double inefficiency = 0.0;    // mean |C|
  double ambiguity = 0.0;       // mean I(C = {0,1})
  double singleton_rate = 0.0;  // mean I(|C| = 1)
  double empty_rate = 0.0;      // mean I(C = {})
  std::optional<double> set_fnr;  // mean over y=1 of I(1 not in C)
  std::optional<double> set_fpr;  // mean over y=0 of I(0 not in C)

  std::size_t n = 0;
  std::size_t n_normal = 0;
  std::size_t n_anomalous = 0;
  std::size_t n_empty = 0;
  std::size_t n_singleton = 0;
  std::size_t n_ambiguous = 0;
  std::size_t n_covered = 0;
};

/// Evaluates prediction sets against labels over the filtered nodes
/// (all nodes when `filter` is empty is not assumed; pass the full index
/// range explicitly via the two-argument overload).
inline MetricsReport evaluate_sets(std::span<const PredictionSet> sets,
                                   std::span<const int> labels,
                                   std::span<const std::size_t> filter) {
  if (sets.size() != labels.size())
    throw NumericError("evaluate_sets: sets and labels must be aligned");
  MetricsReport r;
  std::size_t fn = 0;
  std::size_t fp = 0;
  for (std::size_t i : filter) {
    if (i >= sets.size()) throw NumericError("evaluate_sets: filter index out of range");
    const PredictionSet c = sets[i];
    const int y = labels[i];
    ++r.n;
    r.n_empty += c.is_empty();
    r.n_singleton += c.is_singleton();
    r.n_ambiguous += c.is_ambiguous();
    r.n_covered += c.contains(y);
    if (y == 1) {
      ++r.n_anomalous;
      fn += !c.contains(1);
    } else {
      ++r.n_normal;
      fp += !c.contains(0);
    }
  }
  if (r.n == 0) throw NumericError("evaluate_sets: filter selects no nodes");
  const double n = static_cast<double>(r.n);
  r.coverage = static_cast<double>(r.n_covered) / n;
  r.ambiguity = static_cast<double>(r.n_ambiguous) / n;
  r.singleton_rate = static_cast<double>(r.n_singleton) / n;
  r.empty_rate = static_cast<double>(r.n_empty) / n;
  r.inefficiency = (2.0 * static_cast<double>(r.n_ambiguous) +
                    static_cast<double>(r.n_singleton)) / n;
  if (r.n_anomalous > 0)
    r.set_fnr = static_cast<double>(fn) / static_cast<double>(r.n_anomalous);
  if (r.n_normal > 0)
    r.set_fpr = static_cast<double>(fp) / static_cast<double>(r.n_normal);
  return r;
}

inline MetricsReport evaluate_sets(std::span<const PredictionSet> sets,
                                   std::span<const int> labels) {
  std::vector<std::size_t> all(sets.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return evaluate_sets(sets, labels, all);
}

/// Shannon entropy (natural log) of the empirical set-size distribution
/// {0,1,2} over each node's closed neighborhood N(v) u {v}. Pass
/// closed = false for the open-neighborhood variant (isolated nodes then
/// have an empty distribution and entropy 0).
inline std::vector<double> neighborhood_inefficiency_entropy(
    const Graph& g, std::span<const PredictionSet> sets, bool closed = true) {
  if (sets.size() != g.num_nodes())
    throw NumericError("entropy: sets must be aligned with the graph");
  std::vector<double> out(g.num_nodes(), 0.0);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    double counts[3] = {0.0, 0.0, 0.0};
    double total = 0.0;
    if (closed) {
      counts[sets[v].size()] += 1.0;
      total += 1.0;
    }
    for (std::uint32_t u : g.neighbors(v)) {
      counts[sets[u].size()] += 1.0;
      total += 1.0;
    }
    double h = 0.0;
    for (double c : counts)
      if (c > 0.0) {
        const double p = c / total;
        h -= p * std::log(p);
      }
    out[v] = h;
  }
  return out;
}

struct ReliabilityBin {
  double conf_mean = std::numeric_limits<double>::quiet_NaN();
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;
};

/// Class-wise reliability table: every row is bucketed by its predicted
/// probability of `cls` into n_bins equal-width bins over [0,1]; per bin the
/// mean confidence and the empirical frequency of `cls` are reported. Empty
/// bins are emitted with count 0 and NaN statistics.
inline std::vector<ReliabilityBin> reliability_diagram(const ScoreTable& t, int cls,
                                                       std::size_t n_bins) {
  if (n_bins < 2) throw ConfigError("reliability_diagram: need n_bins >= 2");
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<double> hit_sum(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (const auto& r : t.rows) {
    const double p = cls == 0 ? r.p_normal : r.p_anomaly;
    auto b = static_cast<std::size_t>(p * static_cast<double>(n_bins));
    if (b >= n_bins) b = n_bins - 1;  // p == 1.0 lands in the last bin
    conf_sum[b] += p;
    hit_sum[b] += (r.label == cls);
    ++count[b];
  }
  std::vector<ReliabilityBin> out(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    out[b].count = count[b];
    if (count[b] > 0) {
      out[b].conf_mean = conf_sum[b] / static_cast<double>(count[b]);
      out[b].accuracy = hit_sum[b] / static_cast<double>(count[b]);
    }
  }
  return out;
}

/// Metrics CSV in Table-style column order. Undefined error rates are
/// written as nan.
inline void write_metrics_csv(const MetricsReport& r, const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "Cov,Ine,Amb,Single,FNR,FPR\n";
  const auto opt = [](const std::optional<double>& v) {
    return v ? fmt_double(*v) : std::string("nan");
  };
  out << fmt_double(r.coverage) << ',' << fmt_double(r.inefficiency) << ','
      << fmt_double(r.ambiguity) << ',' << fmt_double(r.singleton_rate) << ','
      << opt(r.set_fnr) << ',' << opt(r.set_fpr) << '\n';
}

inline void write_reliability_csv(std::span<const ReliabilityBin> bins,
                                  const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "bin,conf_mean,accuracy,count\n";
  for (std::size_t b = 0; b < bins.size(); ++b)
    out << b << ',' << fmt_double(bins[b].conf_mean) << ',' << fmt_double(bins[b].accuracy)
        << ',' << bins[b].count << '\n';
}

inline void write_entropy_csv(std::span<const double> entropy,
                              const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "node_id,entropy\n";
  for (std::size_t i = 0; i < entropy.size(); ++i)
    out << i << ',' << fmt_double(entropy[i]) << '\n';
}

}  // namespace risksets
