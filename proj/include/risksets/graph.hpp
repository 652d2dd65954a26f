#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "risksets/common.hpp"
#include "risksets/matrix.hpp"
#include "risksets/rng.hpp"

namespace risksets {

/// Immutable sparse undirected graph with node features and binary anomaly
/// labels. Adjacency is stored as symmetric CSR: no self-loops, column
/// indices sorted and unique within each row.
class Graph {
 public:
  /// Builds the graph from an edge list. Duplicate edges and self-loops are
  /// dropped; every surviving edge is stored in both directions.
  static Graph build(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                     std::size_t n, Matrix features, std::vector<int> labels) {
    if (features.rows != n)
      throw ConfigError("graph: feature matrix has " + std::to_string(features.rows) +
                        " rows, expected " + std::to_string(n));
    if (labels.size() != n)
      throw ConfigError("graph: label vector has " + std::to_string(labels.size()) +
                        " entries, expected " + std::to_string(n));
    for (int y : labels)
      if (y != 0 && y != 1) throw ConfigError("graph: labels must be 0 or 1");

    std::vector<std::vector<std::uint32_t>> adj(n);
    for (const auto& [i, j] : edges) {
      if (i >= n || j >= n)
        throw ConfigError("graph: edge (" + std::to_string(i) + "," + std::to_string(j) +
                          ") out of range for n=" + std::to_string(n));
      if (i == j) continue;
      adj[i].push_back(j);
      adj[j].push_back(i);
    }
    Graph g;
    g.n_ = n;
    g.row_ptr_.resize(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& nb = adj[i];
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
      g.row_ptr_[i + 1] = g.row_ptr_[i] + nb.size();
    }
    g.col_idx_.reserve(g.row_ptr_[n]);
    for (auto& nb : adj) g.col_idx_.insert(g.col_idx_.end(), nb.begin(), nb.end());
    g.features_ = std::move(features);
    g.labels_ = std::move(labels);
    return g;
  }

  std::size_t num_nodes() const { return n_; }
  std::size_t feature_dim() const { return features_.cols; }
  /// Number of stored directed arcs (= 2x undirected edges).
  std::size_t num_arcs() const { return col_idx_.size(); }

  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {col_idx_.data() + row_ptr_[i], col_idx_.data() + row_ptr_[i + 1]};
  }
  std::size_t degree(std::size_t i) const { return row_ptr_[i + 1] - row_ptr_[i]; }

  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }

  std::size_t count_label(int y) const {
    std::size_t c = 0;
    for (int v : labels_) c += (v == y);
    return c;
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::uint32_t> col_idx_;
  Matrix features_;
  std::vector<int> labels_;
};

/// Symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}. Rows of isolated
/// nodes reduce to identity rows, which keeps the spectrum inside [0, 2].
inline Csr normalized_laplacian(const Graph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<double> dinv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = g.degree(i);
    if (d > 0) dinv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(d));
  }
  Csr l;
  l.n_rows = l.n_cols = n;
  l.row_ptr.resize(n + 1, 0);
  l.col_idx.reserve(g.num_arcs() + n);
  l.val.reserve(g.num_arcs() + n);
  for (std::size_t i = 0; i < n; ++i) {
    auto nb = g.neighbors(i);
    std::size_t p = 0;
    // Merge the diagonal entry into the sorted neighbor run.
    while (p < nb.size() && nb[p] < i) {
      l.col_idx.push_back(nb[p]);
      l.val.push_back(-dinv_sqrt[i] * dinv_sqrt[nb[p]]);
      ++p;
    }
    l.col_idx.push_back(i);
    l.val.push_back(1.0);
    while (p < nb.size()) {
      l.col_idx.push_back(nb[p]);
      l.val.push_back(-dinv_sqrt[i] * dinv_sqrt[nb[p]]);
      ++p;
    }
    l.row_ptr[i + 1] = l.col_idx.size();
  }
  return l;
}

/// L_tilde - I, i.e. -D^{-1/2} A D^{-1/2}, spectrum inside [-1, 1]. Used by
/// the spectral layers when rescale_spectrum is on.
inline Csr shifted_laplacian(const Graph& g) {
  Csr l = normalized_laplacian(g);
  for (std::size_t i = 0; i < l.n_rows; ++i)
    for (std::size_t p = l.row_ptr[i]; p < l.row_ptr[i + 1]; ++p)
      if (l.col_idx[p] == i) l.val[p] -= 1.0;
  return l;
}

/// GCN propagation matrix D~^{-1/2} (A + I) D~^{-1/2} with self-loops.
inline Csr gcn_propagation(const Graph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<double> dinv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i)
    dinv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i) + 1));
  Csr m;
  m.n_rows = m.n_cols = n;
  m.row_ptr.resize(n + 1, 0);
  m.col_idx.reserve(g.num_arcs() + n);
  m.val.reserve(g.num_arcs() + n);
  for (std::size_t i = 0; i < n; ++i) {
    auto nb = g.neighbors(i);
    std::size_t p = 0;
    while (p < nb.size() && nb[p] < i) {
      m.col_idx.push_back(nb[p]);
      m.val.push_back(dinv_sqrt[i] * dinv_sqrt[nb[p]]);
      ++p;
    }
    m.col_idx.push_back(i);
    m.val.push_back(dinv_sqrt[i] * dinv_sqrt[i]);
    while (p < nb.size()) {
      m.col_idx.push_back(nb[p]);
      m.val.push_back(dinv_sqrt[i] * dinv_sqrt[nb[p]]);
      ++p;
    }
    m.row_ptr[i + 1] = m.col_idx.size();
  }
  return m;
}

enum class Split : std::uint8_t { train = 0, calib = 1, test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "Train";
    case Split::calib: return "Calib";
    default: return "Test";
  }
}

inline Split split_from_name(const std::string& s) {
  if (s == "Train") return Split::train;
  if (s == "Calib") return Split::calib;
  if (s == "Test") return Split::test;
  throw ConfigError("unknown split name '" + s + "'");
}

/// Assignment of every node to exactly one of Train/Calib/Test.
struct NodeSplit {
  std::vector<Split> assignment;
  std::uint64_t seed = 0;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == s) out.push_back(i);
    return out;
  }
};

namespace detail {

/// Largest-remainder apportionment of m items over the given ratios.
/// Deterministic: remainder ties are broken by slot order.
inline std::array<std::size_t, 3> apportion(std::size_t m, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double want = ratios[s] * static_cast<double>(m);
    counts[s] = static_cast<std::size_t>(want);
    frac[s] = want - static_cast<double>(counts[s]);
    assigned += counts[s];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; assigned < m; ++r, ++assigned) ++counts[order[r % 3]];
  return counts;
}

}  // namespace detail

/// Per-class stratified random split. The same seed always yields the same
/// assignment. Throws if any split would receive zero nodes of some class;
/// the class-conditional calibration downstream needs both classes present
/// everywhere.
inline NodeSplit split_nodes(const Graph& g, const std::array<double, 3>& ratios,
                             std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (r <= 0.0) throw ConfigError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  NodeSplit out;
  out.seed = seed;
  out.assignment.assign(g.num_nodes(), Split::train);
  Rng rng(seed);
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < g.num_nodes(); ++i)
      if (g.labels()[i] == cls) idx.push_back(i);
    const auto counts = detail::apportion(idx.size(), ratios);
    for (int s = 0; s < 3; ++s)
      if (counts[s] == 0)
        throw ConfigError(std::string("split '") + split_name(static_cast<Split>(s)) +
                          "' would receive zero nodes of class " + std::to_string(cls));
    rng.shuffle(idx);
    std::size_t at = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < counts[s]; ++k)
        out.assignment[idx[at++]] = static_cast<Split>(s);
  }
  return out;
}

/// Parameters of the planted-anomaly generator: a two-block model where
/// anomalous nodes carry a mean-shifted feature distribution and wire
/// preferentially to normal nodes (heterophily).
struct SynthConfig {
  std::size_t n = 2000;
  std::size_t d = 8;
  double anomaly_rate = 0.1;
  double intra_p = 0.01;       // normal-normal edge probability
  double inter_p = 0.015;      // anomaly-normal base edge probability
  double feature_shift = 2.0;  // mean shift of anomalous features
  double heterophily = 0.9;    // scales anomaly-normal up, anomaly-anomaly down

  void validate() const {
    if (anomaly_rate <= 0.0 || anomaly_rate >= 1.0)
      throw ConfigError("synth: anomaly_rate must lie in (0,1)");
    if (anomaly_rate * static_cast<double>(n) < 10.0)
      throw ConfigError("synth: need anomaly_rate*n >= 10 to calibrate");
    for (double p : {intra_p, inter_p, heterophily})
      if (p < 0.0 || p > 1.0) throw ConfigError("synth: probabilities must lie in [0,1]");
    if (feature_shift < 0.0) throw ConfigError("synth: feature_shift must be >= 0");
    if (d == 0) throw ConfigError("synth: feature dim must be positive");
  }
};

/// Generates a planted-anomaly graph. Normal features are standard Gaussian;
/// anomalous features are shifted by feature_shift along a random unit
/// direction. Edge probabilities: intra_p within the normal block,
/// inter_p * heterophily between blocks, intra_p * (1 - heterophily) within
/// the anomalous block. Byte-identical output for identical (cfg, seed).
inline Graph generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);

  const std::size_t n_ano = static_cast<std::size_t>(
      std::llround(cfg.anomaly_rate * static_cast<double>(cfg.n)));
  std::vector<std::size_t> perm(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<int> labels(cfg.n, 0);
  for (std::size_t k = 0; k < n_ano; ++k) labels[perm[k]] = 1;

  // Random unit shift direction, shared by all anomalies.
  std::vector<double> dir(cfg.d);
  double norm = 0.0;
  for (auto& v : dir) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : dir) v /= norm;

  Matrix x(cfg.n, cfg.d);
  for (std::size_t i = 0; i < cfg.n; ++i)
    for (std::size_t j = 0; j < cfg.d; ++j) {
      x(i, j) = rng.normal();
      if (labels[i] == 1) x(i, j) += cfg.feature_shift * dir[j];
    }

  const double p_nn = cfg.intra_p;
  const double p_an = cfg.inter_p * cfg.heterophily;
  const double p_aa = cfg.intra_p * (1.0 - cfg.heterophily);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::size_t i = 0; i < cfg.n; ++i)
    for (std::size_t j = i + 1; j < cfg.n; ++j) {
      const double p = (labels[i] != labels[j]) ? p_an : (labels[i] == 0 ? p_nn : p_aa);
      if (rng.bernoulli(p))
        edges.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    }
  return Graph::build(edges, cfg.n, std::move(x), std::move(labels));
}

}  // namespace risksets
