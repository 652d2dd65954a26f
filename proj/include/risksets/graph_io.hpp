#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "risksets/csv.hpp"
#include "risksets/graph.hpp"

namespace risksets {

/// Edge list file: one `i<TAB>j` pair per line, 0-based ids. Blank lines and
/// `#` comments are skipped.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> read_edge_list(
    const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_line(line, '\t');
    if (fields.size() != 2)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected `i<TAB>j`");
    const long long i = parse_int(fields[0], "edge endpoint");
    const long long j = parse_int(fields[1], "edge endpoint");
    if (i < 0 || j < 0)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": negative node id");
    edges.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
  }
  return edges;
}

inline void write_edge_list(const Graph& g, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (std::size_t i = 0; i < g.num_nodes(); ++i)
    for (std::uint32_t j : g.neighbors(i))
      if (i < j) out << i << '\t' << j << '\n';
}

struct FeatureTable {
  Matrix features;
  std::vector<int> labels;
};

/// Feature/label CSV: header `node_id,label,f0,f1,...`; row order defines
/// node order and node_id must match it.
inline FeatureTable read_feature_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "node_id" || header[1] != "label")
    throw ConfigError(path.string() + ": header must be `node_id,label,f0,...`");
  const std::size_t d = header.size() - 2;

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != d + 2)
      throw ConfigError(path.string() + ": row " + std::to_string(row) +
                        " has " + std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(d + 2));
    if (parse_int(fields[0], "node_id") != static_cast<long long>(row))
      throw ConfigError(path.string() + ": node_id out of order at row " +
                        std::to_string(row));
    const long long y = parse_int(fields[1], "label");
    if (y != 0 && y != 1)
      throw ConfigError(path.string() + ": label must be 0 or 1 at row " +
                        std::to_string(row));
    labels.push_back(static_cast<int>(y));
    for (std::size_t j = 0; j < d; ++j)
      values.push_back(parse_double(fields[j + 2], "feature"));
    ++row;
  }
  FeatureTable t;
  t.features = Matrix(row, d);
  t.features.a = std::move(values);
  t.labels = std::move(labels);
  return t;
}

inline void write_feature_csv(const Graph& g, const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "node_id,label";
  for (std::size_t j = 0; j < g.feature_dim(); ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    out << i << ',' << g.labels()[i];
    for (std::size_t j = 0; j < g.feature_dim(); ++j)
      out << ',' << fmt_double(g.features()(i, j));
    out << '\n';
  }
}

inline Graph load_graph_files(const std::filesystem::path& edge_path,
                              const std::filesystem::path& feature_path) {
  auto edges = read_edge_list(edge_path);
  auto table = read_feature_csv(feature_path);
  const std::size_t n = table.features.rows;
  return Graph::build(edges, n, std::move(table.features), std::move(table.labels));
}

}  // namespace risksets
