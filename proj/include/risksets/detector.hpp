#pragma once

#include <cstdint>
#include <vector>

#include "risksets/autodiff.hpp"
#include "risksets/graph.hpp"
#include "risksets/matrix.hpp"
#include "risksets/rng.hpp"
#include "risksets/scores.hpp"

namespace risksets {

/// Two-layer GCN anomaly detector. Deliberately plain: it exists to produce
/// imperfect but informative probabilities for the calibration stages, not to
/// chase benchmark numbers.
struct DetectorConfig {
  std::size_t hidden = 16;
  double lr = 0.01;
  std::size_t epochs = 200;

  void validate() const {
    if (hidden == 0) throw ConfigError("detector: hidden must be positive");
    if (lr <= 0.0) throw ConfigError("detector: lr must be positive");
    if (epochs == 0) throw ConfigError("detector: epochs must be positive");
  }
};

struct DetectorResult {
  ScoreTable table;
  std::vector<Matrix> params;  // W1, b1, W2, b2
  std::vector<double> loss_curve;
};

namespace detail {

/// probs = softmax(P * relu(P X W1 + b1) W2 + b2), all nodes at once.
inline Tape::NodeId detector_graph(Tape& t, const Csr& prop, Tape::NodeId x,
                                   std::span<const Tape::NodeId> w) {
  auto h1 = t.relu(t.add_rowvec(t.matmul(t.spmm(prop, x), w[0]), w[1]));
  auto logits = t.add_rowvec(t.matmul(t.spmm(prop, h1), w[2]), w[3]);
  return t.softmax_rows(logits);
}

}  // namespace detail

/// Forward pass with fixed parameters; used after training and by tests that
/// compare runs parameter-for-parameter.
inline Matrix detector_forward(const Graph& g, const std::vector<Matrix>& params) {
  const Csr prop = gcn_propagation(g);
  Tape t;
  auto x = t.input(g.features(), false);
  std::vector<Tape::NodeId> w;
  for (const auto& p : params) w.push_back(t.input(p, false));
  return t.value(detail::detector_graph(t, prop, x, w));
}

/// Trains the detector on the Train split only and scores every node.
/// Class weights are n_train / (2 * n_train_class), computed on Train alone,
/// so the fit never reads a Calib or Test label.
inline DetectorResult train_detector(const Graph& g, const NodeSplit& split,
                                     const DetectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto train_rows = split.indices(Split::train);
  std::size_t n_pos = 0;
  for (std::size_t i : train_rows) n_pos += static_cast<std::size_t>(g.labels()[i]);
  const std::size_t n_neg = train_rows.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw InsufficientCalibration("detector: Train split must contain both classes");
  const double w0 = static_cast<double>(train_rows.size()) / (2.0 * static_cast<double>(n_neg));
  const double w1 = static_cast<double>(train_rows.size()) / (2.0 * static_cast<double>(n_pos));

  Rng rng = Rng(seed).derive(0x64657463, 0);  // detector stream
  const std::size_t d = g.feature_dim();
  std::vector<Matrix> params;
  params.push_back(glorot(d, cfg.hidden, rng));
  params.emplace_back(1, cfg.hidden);
  params.push_back(glorot(cfg.hidden, 2, rng));
  params.emplace_back(1, 2);

  const Csr prop = gcn_propagation(g);
  AdamState opt;
  opt.init(params);
  AdamConfig adam;
  adam.lr = cfg.lr;

  DetectorResult out;
  out.loss_curve.reserve(cfg.epochs);
  Tape t;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto x = t.input(g.features(), false);
    std::vector<Tape::NodeId> w;
    for (const auto& p : params) w.push_back(t.input(p, true));
    auto probs = detail::detector_graph(t, prop, x, w);
    auto loss = t.wce(probs, g.labels(), train_rows, w0, w1);
    out.loss_curve.push_back(t.value(loss).a[0]);
    auto grads = t.backward(loss);  // also resets the tape
    std::vector<Matrix> gs;
    for (std::size_t k = 0; k < params.size(); ++k) gs.push_back(std::move(grads[w[k]]));
    adam_step(params, gs, opt, adam);
  }

  const Matrix probs = detector_forward(g, params);
  out.table.rows.reserve(g.num_nodes());
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    ScoreRow r;
    r.node_id = i;
    r.p_normal = probs(i, 0);
    r.p_anomaly = probs(i, 1);
    r.label = g.labels()[i];
    r.split = split.assignment[i];
    out.table.rows.push_back(r);
  }
  out.table.validate();
  out.params = std::move(params);
  return out;
}

}  // namespace risksets
