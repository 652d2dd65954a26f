#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "risksets/autodiff.hpp"
#include "risksets/checkpoint.hpp"
#include "risksets/dtcrc.hpp"
#include "risksets/graph.hpp"
#include "risksets/matrix.hpp"
#include "risksets/metrics.hpp"
#include "risksets/rng.hpp"
#include "risksets/scores.hpp"

namespace risksets {

/// Architecture and training knobs of the subgraph-aware spectral calibrator.
/// K prototypes define soft subgraphs via dynamic routing; each subgraph gets
/// its own order-M Chebyshev filter bank; L such layers are concatenated into
/// the output head.
struct SsgncConfig {
  std::size_t K = 5;        // prototype count
  std::size_t M = 2;        // Chebyshev order
  std::size_t L = 2;        // layers
  std::size_t T_route = 3;  // routing refinement iterations
  double beta = 0.9;        // prototype momentum
  double epsilon = 1e-8;    // routing denominator guard
  std::size_t hidden = 16;
  double dropout = 0.1;
  /// Run the Chebyshev recursion on L_tilde - I (spectrum in [-1,1]) instead
  /// of L_tilde itself; off by default, where T_m values may exceed 1.
  bool rescale_spectrum = false;
  /// Concatenate the base detector's two probabilities to the input features.
  bool use_detector_probs = true;
  double lr = 0.01;
  std::size_t epochs = 60;
  /// Fraction of Train carved off as the internal calibration fold that the
  /// size-loss thresholds are refreshed on.
  double internal_calib_frac = 0.25;

  void validate() const {
    if (K == 0) throw ConfigError("ssgnc: K must be >= 1");
    if (M == 0) throw ConfigError("ssgnc: M must be >= 1");
    if (L == 0) throw ConfigError("ssgnc: L must be >= 1");
    if (beta < 0.0 || beta >= 1.0) throw ConfigError("ssgnc: beta must lie in [0,1)");
    if (epsilon <= 0.0) throw ConfigError("ssgnc: epsilon must be positive");
    if (hidden == 0) throw ConfigError("ssgnc: hidden must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ssgnc: dropout must lie in [0,1)");
    if (lr <= 0.0) throw ConfigError("ssgnc: lr must be positive");
    if (epochs == 0) throw ConfigError("ssgnc: epochs must be positive");
    if (internal_calib_frac <= 0.0 || internal_calib_frac >= 1.0)
      throw ConfigError("ssgnc: internal_calib_frac must lie in (0,1)");
  }
};

/// Loss = WCE(probs, labels; class_weights) over the training rows
/// + gamma * mean smooth set size, where the smooth size at anomaly score f1
/// is sigmoid((lambda_normal - f1)/tau) + sigmoid((f1 - (1 - lambda_ano))/tau).
/// The thresholds enter as constants, recalibrated on the internal fold every
/// refresh_every epochs at the targets in `risk`.
struct HybridLossSpec {
  double gamma = 1.0;
  double tau = 0.1;
  std::array<double, 2> class_weights{1.0, 1.0};
  /// Replace class_weights with inverse class frequencies of the training
  /// fold (n / (2 * n_class)) at the start of training.
  bool auto_class_weights = true;
  std::size_t refresh_every = 10;
  RiskSpec risk;

  void validate() const {
    if (gamma < 0.0) throw ConfigError("hybrid loss: gamma must be >= 0");
    if (tau <= 0.0) throw ConfigError("hybrid loss: tau must be positive");
    if (refresh_every == 0) throw ConfigError("hybrid loss: refresh_every must be >= 1");
    if (class_weights[0] <= 0.0 || class_weights[1] <= 0.0)
      throw ConfigError("hybrid loss: class weights must be positive");
    risk.validate();
  }
};

/// Trainable state. The prototypes live outside the Adam parameter list:
/// they evolve by the momentum rule beta*C + (1-beta)*C_T after each step,
/// not by gradient descent (gradients still flow through them into H).
struct SsgncParams {
  SsgncConfig cfg;
  std::size_t d_in = 0;
  Matrix c;               // K x hidden prototypes
  std::vector<Matrix> w;  // Adam-trained weights, fixed layout (see slots below)

  // Layout of w: mlp_in (w1 d_in x h, b1 1 x h, w2 h x h, b2 1 x h), then the
  // filter matrices theta[l][k][m] (h x h, layer-major), then mlp_out
  // (w1 L*h x h, b1 1 x h, w2 h x 2, b2 1 x 2).
  std::size_t theta_slot(std::size_t l, std::size_t k, std::size_t m) const {
    return 4 + (l * cfg.K + k) * (cfg.M + 1) + m;
  }
  std::size_t out_slot() const { return 4 + cfg.L * cfg.K * (cfg.M + 1); }
  std::size_t num_slots() const { return out_slot() + 4; }

  static SsgncParams init(const SsgncConfig& cfg, std::size_t d_in, std::uint64_t seed) {
    cfg.validate();
    if (d_in == 0) throw ConfigError("ssgnc: input dimension must be positive");
    SsgncParams p;
    p.cfg = cfg;
    p.d_in = d_in;
    Rng rng = Rng(seed).derive(0x7373676eULL, 0);  // ssgnc parameter stream
    const std::size_t h = cfg.hidden;
    // Prototypes must start distinct: identical rows route uniformly and the
    // momentum update then keeps them identical forever.
    p.c = Matrix(cfg.K, h);
    const double cs = 1.0 / std::sqrt(static_cast<double>(h));
    for (auto& v : p.c.a) v = cs * rng.normal();
    p.w.push_back(glorot(d_in, h, rng));
    p.w.emplace_back(1, h);
    p.w.push_back(glorot(h, h, rng));
    p.w.emplace_back(1, h);
    for (std::size_t l = 0; l < cfg.L; ++l)
      for (std::size_t k = 0; k < cfg.K; ++k)
        for (std::size_t m = 0; m <= cfg.M; ++m) p.w.push_back(glorot(h, h, rng));
    p.w.push_back(glorot(cfg.L * h, h, rng));
    p.w.emplace_back(1, h);
    p.w.push_back(glorot(h, 2, rng));
    p.w.emplace_back(1, 2);
    return p;
  }

  void validate() const {
    cfg.validate();
    if (d_in == 0) throw ConfigError("ssgnc: input dimension must be positive");
    const std::size_t h = cfg.hidden;
    if (c.rows != cfg.K || c.cols != h) throw ConfigError("ssgnc: prototype shape mismatch");
    if (w.size() != num_slots()) throw ConfigError("ssgnc: weight list has wrong length");
    const auto expect = [&](std::size_t slot, std::size_t r, std::size_t cc) {
      if (w[slot].rows != r || w[slot].cols != cc)
        throw ConfigError("ssgnc: weight slot " + std::to_string(slot) + " has shape " +
                          std::to_string(w[slot].rows) + "x" + std::to_string(w[slot].cols) +
                          ", expected " + std::to_string(r) + "x" + std::to_string(cc));
    };
    expect(0, d_in, h);
    expect(1, 1, h);
    expect(2, h, h);
    expect(3, 1, h);
    for (std::size_t l = 0; l < cfg.L; ++l)
      for (std::size_t k = 0; k < cfg.K; ++k)
        for (std::size_t m = 0; m <= cfg.M; ++m) expect(theta_slot(l, k, m), h, h);
    expect(out_slot(), cfg.L * h, h);
    expect(out_slot() + 1, 1, h);
    expect(out_slot() + 2, h, 2);
    expect(out_slot() + 3, 1, 2);
  }
};

/// Soft node-to-prototype assignment after T refinement rounds.
struct RoutingState {
  Matrix S;    // n x K, rows sum to 1
  Matrix C_T;  // K x hidden prototypes at the end of the refinement
};

namespace detail {

struct TapeRouting {
  Tape::NodeId S;
  Tape::NodeId C_T;
};

/// s = row-softmax(H C^T); then T rounds of c_k = sum_i s_ik h_i /
/// (sum_i s_ik + eps) followed by re-softmax against the updated prototypes.
inline TapeRouting route_on_tape(Tape& t, Tape::NodeId h, Tape::NodeId c, std::size_t T,
                                 double eps) {
  Tape::NodeId cur = c;
  Tape::NodeId s = t.softmax_rows(t.matmul_nt(h, cur));
  for (std::size_t it = 0; it < T; ++it) {
    auto mass = t.colsum(s);                      // K x 1: sum_i s_ik
    auto numer = t.matmul_tn(s, h);               // K x hidden: sum_i s_ik h_i
    cur = t.rowscale(numer, t.recip_shift(mass, eps));
    s = t.softmax_rows(t.matmul_nt(h, cur));
  }
  return {s, cur};
}

/// Chebyshev recursion on the given Laplacian: T_0 X = X, T_1 X = L X,
/// T_m X = 2 L T_{m-1} X - T_{m-2} X. Returns M + 1 nodes.
inline std::vector<Tape::NodeId> cheb_on_tape(Tape& t, const Csr& lap, Tape::NodeId x,
                                              std::size_t M) {
  std::vector<Tape::NodeId> basis{x};
  if (M >= 1) basis.push_back(t.spmm(lap, x));
  for (std::size_t m = 2; m <= M; ++m)
    basis.push_back(
        t.add(t.affine(t.spmm(lap, basis[m - 1]), 2.0), t.affine(basis[m - 2], -1.0)));
  return basis;
}

/// Z_k = sum_m T_m(L) H theta_{k,m}; H' = tanh(sum_k diag(s_{:,k}) Z_k).
inline Tape::NodeId ss_conv_on_tape(Tape& t, std::span<const Tape::NodeId> basis,
                                    std::span<const Tape::NodeId> theta, Tape::NodeId s,
                                    std::size_t K, std::size_t M, bool activation) {
  Tape::NodeId acc = -1;
  for (std::size_t k = 0; k < K; ++k) {
    Tape::NodeId zk = -1;
    for (std::size_t m = 0; m <= M; ++m) {
      auto term = t.matmul(basis[m], theta[k * (M + 1) + m]);
      zk = zk < 0 ? term : t.add(zk, term);
    }
    auto weighted = t.rowscale(zk, t.col(s, k));
    acc = acc < 0 ? weighted : t.add(acc, weighted);
  }
  return activation ? t.tanh(acc) : acc;
}

struct TapeForward {
  Tape::NodeId probs;
  std::vector<Matrix> c_T;  // per-layer end-of-routing prototypes (values)
};

/// Full forward pass: H0 = MLP_in(X); per layer routing -> subgraph spectral
/// convolution (tanh inside) -> dropout; head = softmax(MLP_out(concat of all
/// layer outputs)). Prototypes are shared across layers.
inline TapeForward forward_on_tape(Tape& t, const Csr& lap, Tape::NodeId x, Tape::NodeId c,
                                   std::span<const Tape::NodeId> w, const SsgncParams& p,
                                   bool train_mode, Rng* drop_rng) {
  const SsgncConfig& cfg = p.cfg;
  auto h = t.add_rowvec(t.matmul(t.relu(t.add_rowvec(t.matmul(x, w[0]), w[1])), w[2]), w[3]);
  TapeForward out;
  std::vector<Tape::NodeId> layer_outputs;
  for (std::size_t l = 0; l < cfg.L; ++l) {
    auto routing = route_on_tape(t, h, c, cfg.T_route, cfg.epsilon);
    out.c_T.push_back(t.value(routing.C_T));
    auto basis = cheb_on_tape(t, lap, h, cfg.M);
    std::vector<Tape::NodeId> theta;
    theta.reserve(cfg.K * (cfg.M + 1));
    for (std::size_t k = 0; k < cfg.K; ++k)
      for (std::size_t m = 0; m <= cfg.M; ++m) theta.push_back(w[p.theta_slot(l, k, m)]);
    auto hl = ss_conv_on_tape(t, basis, theta, routing.S, cfg.K, cfg.M, true);
    if (train_mode && cfg.dropout > 0.0) hl = t.dropout(hl, cfg.dropout, *drop_rng);
    layer_outputs.push_back(hl);
    h = hl;
  }
  auto cat = t.concat_cols(layer_outputs);
  const std::size_t o = p.out_slot();
  auto hid = t.relu(t.add_rowvec(t.matmul(cat, w[o]), w[o + 1]));
  out.probs = t.softmax_rows(t.add_rowvec(t.matmul(hid, w[o + 2]), w[o + 3]));
  return out;
}

/// WCE + gamma * mean smooth size over the training rows; thresholds are
/// plain constants, so no gradient flows into the calibration.
inline Tape::NodeId hybrid_loss_on_tape(Tape& t, Tape::NodeId probs,
                                        std::span<const int> labels,
                                        std::span<const std::size_t> train_index,
                                        const DualThresholds& thr, const HybridLossSpec& hl,
                                        Tape::NodeId* wce_term, Tape::NodeId* size_term) {
  auto wce = t.wce(probs, labels, train_index, hl.class_weights[0], hl.class_weights[1]);
  auto f1 = t.col(probs, 1);
  auto near_zero = t.sigmoid(t.affine(f1, -1.0 / hl.tau, thr.lambda_normal / hl.tau));
  auto near_one = t.sigmoid(t.affine(f1, 1.0 / hl.tau, -(1.0 - thr.lambda_ano) / hl.tau));
  auto size = t.affine(t.mean_subset(t.add(near_zero, near_one), train_index), hl.gamma);
  if (wce_term) *wce_term = wce;
  if (size_term) *size_term = size;
  return t.add(wce, size);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Value-level operations (scratch tape, no gradients). These are the same
// code paths the trainer differentiates through.

inline RoutingState dynamic_routing(const Matrix& H, const Matrix& C, std::size_t T,
                                    double epsilon) {
  if (H.cols != C.cols) throw NumericError("dynamic_routing: feature dims differ");
  if (epsilon <= 0.0) throw NumericError("dynamic_routing: epsilon must be positive");
  Tape t;
  auto r = detail::route_on_tape(t, t.input(H, false), t.input(C, false), T, epsilon);
  return {t.value(r.S), t.value(r.C_T)};
}

/// Momentum prototype update C' = beta*C + (1-beta)*C_T.
inline Matrix update_prototypes(const Matrix& C, const Matrix& C_T, double beta) {
  if (!C.same_shape(C_T)) throw NumericError("update_prototypes: shape mismatch");
  Matrix out = C;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.a[i] = beta * C.a[i] + (1.0 - beta) * C_T.a[i];
  return out;
}

inline std::vector<Matrix> cheb_basis(const Csr& lap, const Matrix& X, std::size_t M) {
  Tape t;
  auto ids = detail::cheb_on_tape(t, lap, t.input(X, false), M);
  std::vector<Matrix> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(t.value(id));
  return out;
}

/// Single subgraph-aware spectral convolution. `theta` holds K*(M+1)
/// matrices, k-major.
inline Matrix ss_conv(const Csr& lap, const Matrix& H, std::span<const Matrix> theta,
                      const Matrix& S, std::size_t K, std::size_t M, bool activation = true) {
  if (theta.size() != K * (M + 1)) throw NumericError("ss_conv: wrong filter count");
  if (S.rows != H.rows || S.cols != K) throw NumericError("ss_conv: routing shape mismatch");
  Tape t;
  auto basis = detail::cheb_on_tape(t, lap, t.input(H, false), M);
  std::vector<Tape::NodeId> th;
  th.reserve(theta.size());
  for (const auto& m : theta) th.push_back(t.input(m, false));
  return t.value(detail::ss_conv_on_tape(t, basis, th, t.input(S, false), K, M, activation));
}

inline Csr ssgnc_laplacian(const Graph& g, const SsgncConfig& cfg) {
  return cfg.rescale_spectrum ? shifted_laplacian(g) : normalized_laplacian(g);
}

/// Forward pass over a prebuilt Laplacian. Eval mode (train_mode = false) is
/// deterministic; train mode draws dropout masks from `drop_rng`.
inline Matrix ssgnc_forward(const Csr& lap, const Matrix& X, const SsgncParams& p,
                            bool train_mode = false, Rng* drop_rng = nullptr) {
  p.validate();
  if (X.cols != p.d_in) throw ConfigError("ssgnc_forward: input dim mismatch");
  if (train_mode && p.cfg.dropout > 0.0 && drop_rng == nullptr)
    throw ConfigError("ssgnc_forward: train mode needs an RNG for dropout");
  Tape t;
  auto x = t.input(X, false);
  auto c = t.input(p.c, false);
  std::vector<Tape::NodeId> w;
  w.reserve(p.w.size());
  for (const auto& m : p.w) w.push_back(t.input(m, false));
  return t.value(detail::forward_on_tape(t, lap, x, c, w, p, train_mode, drop_rng).probs);
}

inline Matrix ssgnc_forward(const Graph& g, const Matrix& X, const SsgncParams& p,
                            bool train_mode = false, Rng* drop_rng = nullptr) {
  return ssgnc_forward(ssgnc_laplacian(g, p.cfg), X, p, train_mode, drop_rng);
}

inline double hybrid_loss(const Matrix& probs, std::span<const int> labels,
                          const DualThresholds& thr, const HybridLossSpec& spec,
                          std::span<const std::size_t> train_index) {
  spec.validate();
  Tape t;
  return t
      .value(detail::hybrid_loss_on_tape(t, t.input(probs, false), labels, train_index, thr,
                                         spec, nullptr, nullptr))
      .a[0];
}

// ---------------------------------------------------------------------------
// Training

struct TrainLogRow {
  std::size_t epoch = 0;
  double wce = 0.0;
  double size_loss = 0.0;
  double total = 0.0;
  double internal_fnr = 0.0;
  double internal_fpr = 0.0;
  double singleton = 0.0;
};

inline void write_training_log(std::span<const TrainLogRow> log,
                               const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "epoch,wce,size_loss,total,internal_fnr,internal_fpr,singleton\n";
  for (const auto& r : log)
    out << r.epoch << ',' << fmt_double(r.wce) << ',' << fmt_double(r.size_loss) << ','
        << fmt_double(r.total) << ',' << fmt_double(r.internal_fnr) << ','
        << fmt_double(r.internal_fpr) << ',' << fmt_double(r.singleton) << '\n';
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

struct SsgncTrainResult {
  SsgncParams params;
  ScoreTable table;  // eval-mode probabilities for every node, outer splits
  std::vector<TrainLogRow> log;
  DualThresholds internal_thresholds;  // last refresh
};

namespace detail {

struct InternalFold {
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> calib_rows;
};

/// Stratified carve-out of the internal calibration fold from the outer
/// Train rows. Deterministic given the RNG state.
inline InternalFold carve_internal_fold(std::span<const int> labels,
                                        std::span<const std::size_t> outer_train,
                                        double frac, Rng& rng) {
  InternalFold fold;
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i : outer_train)
      if (labels[i] == cls) idx.push_back(i);
    if (idx.size() < 2)
      throw InsufficientCalibration(
          "ssgnc: Train split needs at least 2 nodes of class " + std::to_string(cls) +
          " to carve an internal calibration fold");
    std::size_t take = static_cast<std::size_t>(
        std::ceil(frac * static_cast<double>(idx.size())));
    take = std::max<std::size_t>(1, std::min(take, idx.size() - 1));
    rng.shuffle(idx);
    fold.calib_rows.insert(fold.calib_rows.end(), idx.begin(), idx.begin() + take);
    fold.train_rows.insert(fold.train_rows.end(), idx.begin() + take, idx.end());
  }
  std::sort(fold.train_rows.begin(), fold.train_rows.end());
  std::sort(fold.calib_rows.begin(), fold.calib_rows.end());
  return fold;
}

/// Dual-threshold calibration restricted to the given rows of a probability
/// matrix (used for the internal fold, which has no ScoreTable).
inline DualThresholds calibrate_on_rows(const Matrix& probs, std::span<const int> labels,
                                        std::span<const std::size_t> rows,
                                        const RiskSpec& spec) {
  std::vector<double> normals;
  std::vector<double> anomalies;
  for (std::size_t i : rows) (labels[i] == 0 ? normals : anomalies).push_back(probs(i, 1));
  if (normals.empty() || anomalies.empty())
    throw InsufficientCalibration("ssgnc: internal calibration fold lost a class");
  DualThresholds thr;
  thr.spec = spec;
  thr.n_normal = normals.size();
  thr.n_ano = anomalies.size();
  thr.lambda_normal =
      calibrate_threshold(normals, NodeClass::normal, spec.alpha_fpr, spec.B, spec.delta);
  thr.lambda_ano =
      calibrate_threshold(anomalies, NodeClass::anomalous, spec.alpha_fnr, spec.B, spec.delta);
  return thr;
}

}  // namespace detail

/// Adam training loop for the calibrator. Reads labels only inside the outer
/// Train split (WCE fold + internal calibration fold); the emitted ScoreTable
/// carries eval-mode probabilities for all nodes under the outer splits, so
/// the untouched Calib split can calibrate the final thresholds downstream.
inline SsgncTrainResult train_ssgnc(const Graph& g, const Matrix& x_input,
                                    const std::vector<int>& labels, const NodeSplit& split,
                                    SsgncParams params, const HybridLossSpec& loss_spec,
                                    std::size_t epochs, std::uint64_t seed) {
  params.validate();
  loss_spec.validate();
  if (epochs == 0) throw ConfigError("ssgnc: epochs must be positive");
  if (x_input.rows != g.num_nodes() || labels.size() != g.num_nodes() ||
      split.assignment.size() != g.num_nodes())
    throw ConfigError("ssgnc: inputs misaligned with the graph");
  if (x_input.cols != params.d_in) throw ConfigError("ssgnc: input dim mismatch");

  const Csr lap = ssgnc_laplacian(g, params.cfg);
  Rng base(seed);
  Rng fold_rng = base.derive(0x666f6c64ULL, 0);
  const auto outer_train = split.indices(Split::train);
  const auto fold = detail::carve_internal_fold(labels, outer_train,
                                                params.cfg.internal_calib_frac, fold_rng);

  HybridLossSpec hl = loss_spec;
  if (hl.auto_class_weights) {
    std::size_t n_pos = 0;
    for (std::size_t i : fold.train_rows) n_pos += static_cast<std::size_t>(labels[i]);
    const std::size_t n_neg = fold.train_rows.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
      throw InsufficientCalibration("ssgnc: WCE fold lost a class");
    hl.class_weights[0] =
        static_cast<double>(fold.train_rows.size()) / (2.0 * static_cast<double>(n_neg));
    hl.class_weights[1] =
        static_cast<double>(fold.train_rows.size()) / (2.0 * static_cast<double>(n_pos));
  }

  AdamState opt;
  opt.init(params.w);
  AdamConfig adam;
  adam.lr = params.cfg.lr;

  SsgncTrainResult out;
  out.log.reserve(epochs);
  DualThresholds thr;
  Tape t;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const Matrix eval_probs = ssgnc_forward(lap, x_input, params, false, nullptr);
    if (epoch % hl.refresh_every == 0)
      thr = detail::calibrate_on_rows(eval_probs, labels, fold.calib_rows, hl.risk);

    std::size_t fn = 0, fp = 0, single = 0, n_ano = 0, n_norm = 0;
    for (std::size_t i : fold.calib_rows) {
      const PredictionSet s = predict_set(eval_probs(i, 1), thr);
      single += s.is_singleton();
      if (labels[i] == 1) {
        ++n_ano;
        fn += !s.contains(1);
      } else {
        ++n_norm;
        fp += !s.contains(0);
      }
    }

    auto x = t.input(x_input, false);
    auto c = t.input(params.c, true);
    std::vector<Tape::NodeId> w;
    w.reserve(params.w.size());
    for (const auto& m : params.w) w.push_back(t.input(m, true));
    Rng drop_rng = base.derive(0x64726f70ULL, epoch);
    auto fw = detail::forward_on_tape(t, lap, x, c, w, params, true, &drop_rng);
    Tape::NodeId wce_term = -1;
    Tape::NodeId size_term = -1;
    auto loss = detail::hybrid_loss_on_tape(t, fw.probs, labels, fold.train_rows, thr, hl,
                                            &wce_term, &size_term);
    TrainLogRow row;
    row.epoch = epoch;
    row.wce = t.value(wce_term).a[0];
    row.size_loss = t.value(size_term).a[0];
    row.total = t.value(loss).a[0];
    row.internal_fnr = static_cast<double>(fn) / static_cast<double>(n_ano);
    row.internal_fpr = static_cast<double>(fp) / static_cast<double>(n_norm);
    row.singleton = static_cast<double>(single) / static_cast<double>(fold.calib_rows.size());
    out.log.push_back(row);

    auto grads = t.backward(loss);
    std::vector<Matrix> gw;
    gw.reserve(params.w.size());
    for (std::size_t k = 0; k < params.w.size(); ++k) {
      auto& gk = grads[w[k]];
      gw.push_back(gk.empty() ? Matrix(params.w[k].rows, params.w[k].cols) : std::move(gk));
    }
    adam_step(params.w, gw, opt, adam);
    // Prototype momentum (layers folded in order; gradients are discarded).
    for (const Matrix& ct : fw.c_T)
      params.c = update_prototypes(params.c, ct, params.cfg.beta);
  }

  const Matrix probs = ssgnc_forward(lap, x_input, params, false, nullptr);
  out.table.rows.reserve(g.num_nodes());
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    ScoreRow r;
    r.node_id = static_cast<std::uint32_t>(i);
    r.p_normal = probs(i, 0);
    r.p_anomaly = probs(i, 1);
    r.label = labels[i];
    r.split = split.assignment[i];
    out.table.rows.push_back(r);
  }
  out.table.validate();
  out.params = std::move(params);
  out.internal_thresholds = thr;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpointing (flat `name,row,col,value` CSV; shape metadata rides along
// as 1x1 scalar blocks so a checkpoint is self-describing)

inline void save_ssgnc_checkpoint(const SsgncParams& p, const std::filesystem::path& path) {
  p.validate();
  const SsgncConfig& c = p.cfg;
  std::vector<Matrix> meta;
  meta.reserve(10);
  std::vector<std::pair<std::string, const Matrix*>> entries;
  const auto put_meta = [&](const char* name, double v) {
    meta.push_back(Matrix::scalar(v));
    entries.emplace_back(name, &meta.back());
  };
  put_meta("meta.K", static_cast<double>(c.K));
  put_meta("meta.M", static_cast<double>(c.M));
  put_meta("meta.L", static_cast<double>(c.L));
  put_meta("meta.T_route", static_cast<double>(c.T_route));
  put_meta("meta.hidden", static_cast<double>(c.hidden));
  put_meta("meta.d_in", static_cast<double>(p.d_in));
  put_meta("meta.beta", c.beta);
  put_meta("meta.epsilon", c.epsilon);
  put_meta("meta.dropout", c.dropout);
  put_meta("meta.rescale_spectrum", c.rescale_spectrum ? 1.0 : 0.0);
  entries.emplace_back("c", &p.c);
  entries.emplace_back("in_w1", &p.w[0]);
  entries.emplace_back("in_b1", &p.w[1]);
  entries.emplace_back("in_w2", &p.w[2]);
  entries.emplace_back("in_b2", &p.w[3]);
  std::vector<std::string> theta_names;
  theta_names.reserve(c.L * c.K * (c.M + 1));
  for (std::size_t l = 0; l < c.L; ++l)
    for (std::size_t k = 0; k < c.K; ++k)
      for (std::size_t m = 0; m <= c.M; ++m) {
        theta_names.push_back("theta.l" + std::to_string(l) + ".k" + std::to_string(k) +
                              ".m" + std::to_string(m));
        entries.emplace_back(theta_names.back(), &p.w[p.theta_slot(l, k, m)]);
      }
  entries.emplace_back("out_w1", &p.w[p.out_slot()]);
  entries.emplace_back("out_b1", &p.w[p.out_slot() + 1]);
  entries.emplace_back("out_w2", &p.w[p.out_slot() + 2]);
  entries.emplace_back("out_b2", &p.w[p.out_slot() + 3]);
  write_checkpoint_csv(entries, path);
}

inline SsgncParams load_ssgnc_checkpoint(const std::filesystem::path& path) {
  auto blocks = read_checkpoint_csv(path);
  const auto take = [&](const std::string& name) -> Matrix {
    auto it = blocks.find(name);
    if (it == blocks.end())
      throw ConfigError(path.string() + ": checkpoint is missing block '" + name + "'");
    return std::move(it->second);
  };
  const auto meta = [&](const char* name) { return take(name).a.at(0); };
  SsgncParams p;
  p.cfg.K = static_cast<std::size_t>(meta("meta.K"));
  p.cfg.M = static_cast<std::size_t>(meta("meta.M"));
  p.cfg.L = static_cast<std::size_t>(meta("meta.L"));
  p.cfg.T_route = static_cast<std::size_t>(meta("meta.T_route"));
  p.cfg.hidden = static_cast<std::size_t>(meta("meta.hidden"));
  p.d_in = static_cast<std::size_t>(meta("meta.d_in"));
  p.cfg.beta = meta("meta.beta");
  p.cfg.epsilon = meta("meta.epsilon");
  p.cfg.dropout = meta("meta.dropout");
  p.cfg.rescale_spectrum = meta("meta.rescale_spectrum") != 0.0;
  p.c = take("c");
  p.w.push_back(take("in_w1"));
  p.w.push_back(take("in_b1"));
  p.w.push_back(take("in_w2"));
  p.w.push_back(take("in_b2"));
  for (std::size_t l = 0; l < p.cfg.L; ++l)
    for (std::size_t k = 0; k < p.cfg.K; ++k)
      for (std::size_t m = 0; m <= p.cfg.M; ++m)
        p.w.push_back(take("theta.l" + std::to_string(l) + ".k" + std::to_string(k) + ".m" +
                           std::to_string(m)));
  p.w.push_back(take("out_w1"));
  p.w.push_back(take("out_b1"));
  p.w.push_back(take("out_w2"));
  p.w.push_back(take("out_b2"));
  p.validate();
  return p;
}

}  // namespace risksets
