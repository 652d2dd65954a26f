#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_set>
#include <vector>

#include "risksets/csv.hpp"
#include "risksets/graph.hpp"

namespace risksets {

/// One node's detector output: a two-class probability vector plus label and
/// split assignment.
struct ScoreRow {
  std::uint32_t node_id = 0;
  double p_normal = 0.0;
  double p_anomaly = 0.0;
  int label = 0;
  Split split = Split::train;
};

/// Per-node probabilities for a whole graph; the interchange unit between
/// detectors and calibrators. Rows are kept sorted by node_id.
struct ScoreTable {
  std::vector<ScoreRow> rows;

  std::size_t size() const { return rows.size(); }

  /// Anomaly probabilities of the rows with the given split and label.
  std::vector<double> anomaly_probs(Split split, int label) const {
    std::vector<double> out;
    for (const auto& r : rows)
      if (r.split == split && r.label == label) out.push_back(r.p_anomaly);
    return out;
  }

  std::vector<std::size_t> row_indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i].split == split) out.push_back(i);
    return out;
  }

  std::size_t count(Split split, int label) const {
    std::size_t c = 0;
    for (const auto& r : rows) c += (r.split == split && r.label == label);
    return c;
  }

  void validate() const {
    std::unordered_set<std::uint32_t> seen;
    for (const auto& r : rows) {
      if (!seen.insert(r.node_id).second)
        throw ConfigError("score table: duplicate node_id " + std::to_string(r.node_id));
      if (r.p_normal < 0.0 || r.p_normal > 1.0 || r.p_anomaly < 0.0 || r.p_anomaly > 1.0)
        throw ConfigError("score table: probability outside [0,1] at node " +
                          std::to_string(r.node_id));
      if (std::abs(r.p_normal + r.p_anomaly - 1.0) > 1e-9)
        throw ConfigError("score table: probabilities of node " + std::to_string(r.node_id) +
                          " do not sum to 1");
      if (r.label != 0 && r.label != 1)
        throw ConfigError("score table: label must be 0 or 1");
    }
  }
};

inline const std::string kScoreCsvHeader = "node_id,p_normal,p_anomaly,label,split";

/// Writes the score CSV (UTF-8, LF, exact column order). Values use 17
/// significant digits so a re-import reproduces the doubles bit-exactly.
inline void export_scores(const ScoreTable& t, const std::filesystem::path& path) {
  auto out = open_output(path);
  out << kScoreCsvHeader << '\n';
  for (const auto& r : t.rows) {
    out << r.node_id << ',' << fmt_double(r.p_normal) << ',' << fmt_double(r.p_anomaly)
        << ',' << r.label << ',' << split_name(r.split) << '\n';
  }
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

/// Reads and validates a score CSV. Probability pairs off by at most 1e-6
/// from summing to 1 are renormalized; larger deviations are rejected.
/// Pairs already normalized to machine precision are kept untouched so that
/// export/import round-trips bit-exactly.
inline ScoreTable import_scores(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kScoreCsvHeader)
    throw ConfigError(path.string() + ": header must be `" + kScoreCsvHeader + "`");

  ScoreTable t;
  std::unordered_set<std::uint32_t> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 5 fields");
    ScoreRow r;
    const long long id = parse_int(f[0], "node_id");
    if (id < 0) throw ConfigError(path.string() + ": negative node_id");
    r.node_id = static_cast<std::uint32_t>(id);
    if (!seen.insert(r.node_id).second)
      throw ConfigError(path.string() + ": duplicate node_id " + std::to_string(r.node_id));
    r.p_normal = parse_double(f[1], "p_normal");
    r.p_anomaly = parse_double(f[2], "p_anomaly");
    if (r.p_normal < 0.0 || r.p_normal > 1.0 || r.p_anomaly < 0.0 || r.p_anomaly > 1.0)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": probability outside [0,1]");
    const double sum = r.p_normal + r.p_anomaly;
    if (std::abs(sum - 1.0) > 1e-6)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": probabilities sum to " + fmt_double(sum));
    if (std::abs(sum - 1.0) > 1e-12) {
      r.p_normal /= sum;
      r.p_anomaly /= sum;
    }
    const long long y = parse_int(f[3], "label");
    if (y != 0 && y != 1)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1");
    r.label = static_cast<int>(y);
    r.split = split_from_name(f[4]);
    t.rows.push_back(r);
  }
  std::sort(t.rows.begin(), t.rows.end(),
            [](const ScoreRow& a, const ScoreRow& b) { return a.node_id < b.node_id; });
  return t;
}

}  // namespace risksets
