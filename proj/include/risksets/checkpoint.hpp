#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "risksets/csv.hpp"
#include "risksets/matrix.hpp"

namespace risksets {

/// Flat parameter checkpoint: one CSV row per matrix entry,
/// `name,row,col,value`, entries in (name, row, col) order. Scalars ride
/// along as 1x1 matrices, so a single format covers weights and metadata.
inline void write_checkpoint_csv(
    const std::vector<std::pair<std::string, const Matrix*>>& entries,
    const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "name,row,col,value\n";
  for (const auto& [name, m] : entries)
    for (std::size_t i = 0; i < m->rows; ++i)
      for (std::size_t j = 0; j < m->cols; ++j)
        out << name << ',' << i << ',' << j << ',' << fmt_double((*m)(i, j)) << '\n';
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

/// Reads a checkpoint back into name -> dense matrix. Shapes are inferred
/// from the maximum indices; missing interior entries are rejected.
inline std::map<std::string, Matrix> read_checkpoint_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty checkpoint");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "name,row,col,value")
    throw ConfigError(path.string() + ": bad checkpoint header '" + line + "'");

  struct Block {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::pair<std::pair<std::size_t, std::size_t>, double>> cells;
  };
  std::map<std::string, Block> blocks;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 4 fields, got " + std::to_string(f.size()));
    const long long i = parse_int(f[1], "checkpoint row");
    const long long j = parse_int(f[2], "checkpoint col");
    if (i < 0 || j < 0)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": negative index");
    auto& b = blocks[f[0]];
    b.rows = std::max(b.rows, static_cast<std::size_t>(i) + 1);
    b.cols = std::max(b.cols, static_cast<std::size_t>(j) + 1);
    b.cells.push_back({{static_cast<std::size_t>(i), static_cast<std::size_t>(j)},
                       parse_double(f[3], "checkpoint value")});
  }

  std::map<std::string, Matrix> out;
  for (auto& [name, b] : blocks) {
    if (b.cells.size() != b.rows * b.cols)
      throw ConfigError(path.string() + ": checkpoint block '" + name +
                        "' has missing or duplicate entries");
    Matrix m(b.rows, b.cols);
    for (const auto& [ij, v] : b.cells) m(ij.first, ij.second) = v;
    out.emplace(name, std::move(m));
  }
  return out;
}

}  // namespace risksets
