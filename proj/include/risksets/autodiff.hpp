#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "risksets/common.hpp"
#include "risksets/matrix.hpp"
#include "risksets/rng.hpp"

namespace risksets {

/// Reverse-mode tape over dense matrices. Primitives compute their value
/// eagerly, record themselves on the tape in topological order, and check
/// the result for finiteness (NaN/Inf anywhere is an error state). A node
/// participates in the backward sweep iff any of its inputs does.
///
/// Sparse operands (spmm) are held by pointer: the Csr must outlive the tape.
class Tape {
 public:
  using NodeId = std::int32_t;

  enum class Op {
    leaf,
    matmul,      // x * y
    matmul_nt,   // x * y^T
    matmul_tn,   // x^T * y
    spmm,        // const sparse * x
    add,
    add_rowvec,  // (n x d) + broadcast (1 x d)
    affine,      // c0 * x + c1 elementwise
    tanh_act,
    relu_act,
    sigmoid_act,
    softmax_rows,
    rowscale,    // diag(s) * x with s an (n x 1) column
    concat_cols,
    dropout,
    col,         // single-column slice
    colsum,      // (n x k) -> (k x 1) column sums
    recip_shift, // 1 / (x + c0)
    wce,         // weighted cross-entropy over a row subset -> scalar
    mean_subset, // mean of an (n x 1) column over a row subset -> scalar
  };

  NodeId input(Matrix value, bool requires_grad = true) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n), "input");
  }

  const Matrix& value(NodeId id) const { return nodes_.at(id).value; }
  std::size_t num_nodes() const { return nodes_.size(); }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  NodeId matmul(NodeId x, NodeId y) {
    return binary(Op::matmul, x, y, risksets::matmul(val(x), val(y)));
  }
  NodeId matmul_nt(NodeId x, NodeId y) {
    return binary(Op::matmul_nt, x, y, risksets::matmul_nt(val(x), val(y)));
  }
  NodeId matmul_tn(NodeId x, NodeId y) {
    return binary(Op::matmul_tn, x, y, risksets::matmul_tn(val(x), val(y)));
  }

  NodeId spmm(const Csr& s, NodeId x) {
    Node n;
    n.op = Op::spmm;
    n.a = x;
    n.sparse = &s;
    n.value = risksets::spmm(s, val(x));
    n.requires_grad = nodes_[x].requires_grad;
    return push(std::move(n), "spmm");
  }

  NodeId add(NodeId x, NodeId y) {
    const Matrix& xv = val(x);
    const Matrix& yv = val(y);
    if (!xv.same_shape(yv)) throw NumericError("add: shape mismatch");
    Matrix z = xv;
    for (std::size_t i = 0; i < z.size(); ++i) z.a[i] += yv.a[i];
    return binary(Op::add, x, y, std::move(z));
  }

  NodeId add_rowvec(NodeId x, NodeId b) {
    const Matrix& xv = val(x);
    const Matrix& bv = val(b);
    if (bv.rows != 1 || bv.cols != xv.cols) throw NumericError("add_rowvec: shape mismatch");
    Matrix z = xv;
    for (std::size_t i = 0; i < z.rows; ++i)
      for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += bv.a[j];
    return binary(Op::add_rowvec, x, b, std::move(z));
  }

  NodeId affine(NodeId x, double scale, double shift = 0.0) {
    Matrix z = val(x);
    for (auto& v : z.a) v = scale * v + shift;
    Node n;
    n.op = Op::affine;
    n.a = x;
    n.c0 = scale;
    n.value = std::move(z);
    n.requires_grad = nodes_[x].requires_grad;
    return push(std::move(n), "affine");
  }

  NodeId scale(NodeId x, double s) { return affine(x, s, 0.0); }

  NodeId tanh(NodeId x) {
    Matrix z = val(x);
    for (auto& v : z.a) v = std::tanh(v);
    return unary(Op::tanh_act, x, std::move(z));
  }

  NodeId relu(NodeId x) {
    Matrix z = val(x);
    for (auto& v : z.a) v = v > 0.0 ? v : 0.0;
    return unary(Op::relu_act, x, std::move(z));
  }

  NodeId sigmoid(NodeId x) {
    Matrix z = val(x);
    for (auto& v : z.a) v = 1.0 / (1.0 + std::exp(-v));
    return unary(Op::sigmoid_act, x, std::move(z));
  }

  /// Row-wise softmax with max subtraction; rows sum to 1.
  NodeId softmax_rows(NodeId x) {
    Matrix z = val(x);
    for (std::size_t i = 0; i < z.rows; ++i) {
      double* row = &z.a[i * z.cols];
      double mx = row[0];
      for (std::size_t j = 1; j < z.cols; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < z.cols; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (std::size_t j = 0; j < z.cols; ++j) row[j] /= sum;
    }
    return unary(Op::softmax_rows, x, std::move(z));
  }

  /// diag(s) * x where s is an (n x 1) column of per-row weights.
  NodeId rowscale(NodeId x, NodeId s) {
    const Matrix& xv = val(x);
    const Matrix& sv = val(s);
    if (sv.rows != xv.rows || sv.cols != 1) throw NumericError("rowscale: s must be (n x 1)");
    Matrix z = xv;
    for (std::size_t i = 0; i < z.rows; ++i) {
      const double w = sv.a[i];
      for (std::size_t j = 0; j < z.cols; ++j) z(i, j) *= w;
    }
    return binary(Op::rowscale, x, s, std::move(z));
  }

  NodeId concat_cols(std::span<const NodeId> parts) {
    if (parts.empty()) throw NumericError("concat_cols: no inputs");
    const std::size_t rows = val(parts[0]).rows;
    std::size_t cols = 0;
    bool grad = false;
    for (NodeId p : parts) {
      if (val(p).rows != rows) throw NumericError("concat_cols: row mismatch");
      cols += val(p).cols;
      grad = grad || nodes_[p].requires_grad;
    }
    Matrix z(rows, cols);
    std::size_t off = 0;
    for (NodeId p : parts) {
      const Matrix& pv = val(p);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < pv.cols; ++j) z(i, off + j) = pv(i, j);
      off += pv.cols;
    }
    Node n;
    n.op = Op::concat_cols;
    n.srcs.assign(parts.begin(), parts.end());
    n.value = std::move(z);
    n.requires_grad = grad;
    return push(std::move(n), "concat_cols");
  }

  /// Train-mode dropout with inverted scaling: kept entries are divided by
  /// the keep probability, so the eval path (simply omitting this op) is the
  /// identity in expectation.
  NodeId dropout(NodeId x, double drop_p, Rng& rng) {
    if (drop_p < 0.0 || drop_p >= 1.0) throw NumericError("dropout: p must lie in [0,1)");
    const Matrix& xv = val(x);
    Node n;
    n.op = Op::dropout;
    n.a = x;
    n.mask.resize(xv.size());
    const double keep = 1.0 - drop_p;
    Matrix z = xv;
    for (std::size_t i = 0; i < z.size(); ++i) {
      n.mask[i] = (drop_p == 0.0 || rng.uniform() < keep) ? 1.0 / keep : 0.0;
      z.a[i] *= n.mask[i];
    }
    n.value = std::move(z);
    n.requires_grad = nodes_[x].requires_grad;
    return push(std::move(n), "dropout");
  }

  NodeId col(NodeId x, std::size_t j) {
    const Matrix& xv = val(x);
    if (j >= xv.cols) throw NumericError("col: index out of range");
    Matrix z(xv.rows, 1);
    for (std::size_t i = 0; i < xv.rows; ++i) z.a[i] = xv(i, j);
    Node n;
    n.op = Op::col;
    n.a = x;
    n.idx = j;
    n.value = std::move(z);
    n.requires_grad = nodes_[x].requires_grad;
    return push(std::move(n), "col");
  }

  /// Column sums of an (n x k) matrix as a (k x 1) vector.
  NodeId colsum(NodeId x) {
    const Matrix& xv = val(x);
    Matrix z(xv.cols, 1);
    for (std::size_t i = 0; i < xv.rows; ++i)
      for (std::size_t j = 0; j < xv.cols; ++j) z.a[j] += xv(i, j);
    return unary(Op::colsum, x, std::move(z));
  }

  NodeId recip_shift(NodeId x, double shift) {
    Matrix z = val(x);
    for (auto& v : z.a) v = 1.0 / (v + shift);
    Node n;
    n.op = Op::recip_shift;
    n.a = x;
    n.c0 = shift;
    n.value = std::move(z);
    n.requires_grad = nodes_[x].requires_grad;
    return push(std::move(n), "recip_shift");
  }

  /// Weighted cross-entropy over the given rows of a probability matrix:
  /// sum_i w_{y_i} * (-log p_{i,y_i}) / sum_i w_{y_i}. Scalar output.
  NodeId wce(NodeId probs, std::span<const int> labels, std::span<const std::size_t> rows,
             double w0, double w1) {
    const Matrix& pv = val(probs);
    if (pv.cols != 2) throw NumericError("wce: probability matrix must have 2 columns");
    if (labels.size() != pv.rows) throw NumericError("wce: labels misaligned");
    if (rows.empty()) throw NumericError("wce: empty row subset");
    Node n;
    n.op = Op::wce;
    n.a = probs;
    n.rows.assign(rows.begin(), rows.end());
    n.labels.assign(labels.begin(), labels.end());
    n.c0 = w0;
    n.c1 = w1;
    double wsum = 0.0;
    double loss = 0.0;
    for (std::size_t i : n.rows) {
      const int y = n.labels.at(i);
      const double w = y == 0 ? w0 : w1;
      const double p = std::max(pv(i, static_cast<std::size_t>(y)), 1e-300);
      wsum += w;
      loss -= w * std::log(p);
    }
    n.weight_sum = wsum;
    n.value = Matrix::scalar(loss / wsum);
    n.requires_grad = nodes_[probs].requires_grad;
    return push(std::move(n), "wce");
  }

  /// Mean of an (n x 1) column over a row subset. Scalar output.
  NodeId mean_subset(NodeId x, std::span<const std::size_t> rows) {
    const Matrix& xv = val(x);
    if (xv.cols != 1) throw NumericError("mean_subset: input must be a column");
    if (rows.empty()) throw NumericError("mean_subset: empty row subset");
    double sum = 0.0;
    for (std::size_t i : rows) sum += xv.a[i];
    Node n;
    n.op = Op::mean_subset;
    n.a = x;
    n.rows.assign(rows.begin(), rows.end());
    n.value = Matrix::scalar(sum / static_cast<double>(rows.size()));
    n.requires_grad = nodes_[x].requires_grad;
    return push(std::move(n), "mean_subset");
  }

  /// Reverse sweep from a scalar loss node. Returns one gradient per node id
  /// (empty matrices where no gradient is tracked) and resets the tape.
  std::vector<Matrix> backward(NodeId loss) {
    const Matrix& lv = val(loss);
    if (lv.rows != 1 || lv.cols != 1) throw NumericError("backward: loss must be scalar");
    std::vector<Matrix> grad(nodes_.size());
    if (nodes_[loss].requires_grad) {
      grad[loss] = Matrix::scalar(1.0);
      for (NodeId id = loss; id >= 0; --id) {
        if (grad[id].empty() || !nodes_[id].requires_grad) continue;
        step_backward(id, grad);
      }
    }
    nodes_.clear();
    return grad;
  }

  void reset() { nodes_.clear(); }

 private:
  struct Node {
    Op op = Op::leaf;
    NodeId a = -1;
    NodeId b = -1;
    double c0 = 0.0;
    double c1 = 0.0;
    std::size_t idx = 0;
    double weight_sum = 0.0;
    const Csr* sparse = nullptr;
    std::vector<NodeId> srcs;
    std::vector<double> mask;
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    Matrix value;
    bool requires_grad = false;
  };

  const Matrix& val(NodeId id) const { return nodes_.at(id).value; }

  NodeId push(Node&& n, const char* what) {
    if (!n.value.all_finite())
      throw NumericError(std::string(what) + ": non-finite output");
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId unary(Op op, NodeId x, Matrix&& z) {
    Node n;
    n.op = op;
    n.a = x;
    n.value = std::move(z);
    n.requires_grad = nodes_[x].requires_grad;
    return push(std::move(n), "primitive");
  }

  NodeId binary(Op op, NodeId x, NodeId y, Matrix&& z) {
    Node n;
    n.op = op;
    n.a = x;
    n.b = y;
    n.value = std::move(z);
    n.requires_grad = nodes_[x].requires_grad || nodes_[y].requires_grad;
    return push(std::move(n), "primitive");
  }

  void accumulate(std::vector<Matrix>& grad, NodeId id, const Matrix& g) {
    if (!nodes_[id].requires_grad) return;
    if (grad[id].empty()) {
      grad[id] = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) grad[id].a[i] += g.a[i];
    }
  }

  void step_backward(NodeId id, std::vector<Matrix>& grad) {
    const Node& n = nodes_[id];
    const Matrix& g = grad[id];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul:
        accumulate(grad, n.a, risksets::matmul_nt(g, val(n.b)));
        accumulate(grad, n.b, risksets::matmul_tn(val(n.a), g));
        break;
      case Op::matmul_nt:
        accumulate(grad, n.a, risksets::matmul(g, val(n.b)));
        accumulate(grad, n.b, risksets::matmul_tn(g, val(n.a)));
        break;
      case Op::matmul_tn:
        accumulate(grad, n.a, risksets::matmul_nt(val(n.b), g));
        accumulate(grad, n.b, risksets::matmul(val(n.a), g));
        break;
      case Op::spmm:
        accumulate(grad, n.a, risksets::spmm_t(*n.sparse, g));
        break;
      case Op::add:
        accumulate(grad, n.a, g);
        accumulate(grad, n.b, g);
        break;
      case Op::add_rowvec: {
        accumulate(grad, n.a, g);
        Matrix gb(1, g.cols);
        for (std::size_t i = 0; i < g.rows; ++i)
          for (std::size_t j = 0; j < g.cols; ++j) gb.a[j] += g(i, j);
        accumulate(grad, n.b, gb);
        break;
      }
      case Op::affine: {
        Matrix gx = g;
        for (auto& v : gx.a) v *= n.c0;
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::tanh_act: {
        Matrix gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
          gx.a[i] *= 1.0 - n.value.a[i] * n.value.a[i];
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::relu_act: {
        Matrix gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (n.value.a[i] <= 0.0) gx.a[i] = 0.0;
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::sigmoid_act: {
        Matrix gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double z = n.value.a[i];
          gx.a[i] *= z * (1.0 - z);
        }
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::softmax_rows: {
        Matrix gx(g.rows, g.cols);
        for (std::size_t i = 0; i < g.rows; ++i) {
          const double* zi = &n.value.a[i * g.cols];
          const double* gi = &g.a[i * g.cols];
          double dot = 0.0;
          for (std::size_t j = 0; j < g.cols; ++j) dot += gi[j] * zi[j];
          for (std::size_t j = 0; j < g.cols; ++j) gx(i, j) = zi[j] * (gi[j] - dot);
        }
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::rowscale: {
        const Matrix& xv = val(n.a);
        const Matrix& sv = val(n.b);
        Matrix gx = g;
        for (std::size_t i = 0; i < g.rows; ++i)
          for (std::size_t j = 0; j < g.cols; ++j) gx(i, j) *= sv.a[i];
        accumulate(grad, n.a, gx);
        Matrix gs(g.rows, 1);
        for (std::size_t i = 0; i < g.rows; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < g.cols; ++j) acc += g(i, j) * xv(i, j);
          gs.a[i] = acc;
        }
        accumulate(grad, n.b, gs);
        break;
      }
      case Op::concat_cols: {
        std::size_t off = 0;
        for (NodeId p : n.srcs) {
          const Matrix& pv = val(p);
          Matrix gp(pv.rows, pv.cols);
          for (std::size_t i = 0; i < pv.rows; ++i)
            for (std::size_t j = 0; j < pv.cols; ++j) gp(i, j) = g(i, off + j);
          accumulate(grad, p, gp);
          off += pv.cols;
        }
        break;
      }
      case Op::dropout: {
        Matrix gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx.a[i] *= n.mask[i];
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::col: {
        const Matrix& xv = val(n.a);
        Matrix gx(xv.rows, xv.cols);
        for (std::size_t i = 0; i < xv.rows; ++i) gx(i, n.idx) = g.a[i];
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::colsum: {
        const Matrix& xv = val(n.a);
        Matrix gx(xv.rows, xv.cols);
        for (std::size_t i = 0; i < xv.rows; ++i)
          for (std::size_t j = 0; j < xv.cols; ++j) gx(i, j) = g.a[j];
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::recip_shift: {
        Matrix gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double z = n.value.a[i];
          gx.a[i] *= -z * z;
        }
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::wce: {
        const Matrix& pv = val(n.a);
        Matrix gx(pv.rows, pv.cols);
        const double gs = g.a[0];
        for (std::size_t i : n.rows) {
          const int y = n.labels[i];
          const double w = y == 0 ? n.c0 : n.c1;
          const double p = std::max(pv(i, static_cast<std::size_t>(y)), 1e-300);
          gx(i, static_cast<std::size_t>(y)) -= gs * w / (n.weight_sum * p);
        }
        accumulate(grad, n.a, gx);
        break;
      }
      case Op::mean_subset: {
        const Matrix& xv = val(n.a);
        Matrix gx(xv.rows, 1);
        const double gs = g.a[0] / static_cast<double>(n.rows.size());
        for (std::size_t i : n.rows) gx.a[i] += gs;
        accumulate(grad, n.a, gx);
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Gradient checking

/// Max over coordinates of |analytic - numeric| / (|analytic| + eps).
inline double max_rel_error(std::span<const Matrix> analytic, std::span<const Matrix> numeric,
                            double eps) {
  if (analytic.size() != numeric.size())
    throw NumericError("max_rel_error: gradient lists differ in length");
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    for (std::size_t i = 0; i < analytic[k].size(); ++i) {
      const double a = analytic[k].a[i];
      const double m = numeric[k].a[i];
      worst = std::max(worst, std::abs(a - m) / (std::abs(a) + eps));
    }
  }
  return worst;
}

/// Central-difference gradient of a scalar function of a parameter list.
/// Fn: (const std::vector<Matrix>&) -> double.
template <typename Fn>
std::vector<Matrix> central_difference_gradient(Fn&& f, std::vector<Matrix> params,
                                                double step) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix gk(params[k].rows, params[k].cols);
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double orig = params[k].a[i];
      params[k].a[i] = orig + step;
      const double up = f(params);
      params[k].a[i] = orig - step;
      const double dn = f(params);
      params[k].a[i] = orig;
      gk.a[i] = (up - dn) / (2.0 * step);
    }
    out.push_back(std::move(gk));
  }
  return out;
}

/// Checks the tape gradients of a scalar-valued build function against
/// central differences. BuildFn: (Tape&, std::span<const Tape::NodeId>) ->
/// Tape::NodeId; it must register one leaf per parameter, which this harness
/// does on its behalf. eps doubles as the difference step and the relative
/// error guard.
template <typename BuildFn>
double finite_difference_check(BuildFn&& build, const std::vector<Matrix>& params,
                               double eps) {
  if (eps < 1e-7 || eps > 1e-3)
    throw NumericError("finite_difference_check: eps must lie in [1e-7, 1e-3]");

  Tape tape;
  std::vector<Tape::NodeId> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.input(p, true));
  const Tape::NodeId loss = build(tape, leaves);
  const auto grads = tape.backward(loss);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const auto id = leaves[k];
    analytic.push_back(grads[id].empty() ? Matrix(params[k].rows, params[k].cols)
                                         : grads[id]);
  }

  const auto value_of = [&](const std::vector<Matrix>& p) {
    Tape t;
    std::vector<Tape::NodeId> ids;
    ids.reserve(p.size());
    for (const auto& m : p) ids.push_back(t.input(m, false));
    return t.value(build(t, ids)).a[0];
  };
  const auto numeric = central_difference_gradient(value_of, params, eps);
  return max_rel_error(analytic, numeric, eps);
}

// ---------------------------------------------------------------------------
// Optimizer

/// Glorot-normal initialization, std = sqrt(2 / (fan_in + fan_out)).
inline Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix w(rows, cols);
  const double s = std::sqrt(2.0 / static_cast<double>(rows + cols));
  for (auto& v : w.a) v = s * rng.normal();
  return w;
}

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  void init(const std::vector<Matrix>& params) {
    step = 0;
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.rows, p.cols);
      v.emplace_back(p.rows, p.cols);
    }
  }
};

/// Standard bias-corrected Adam update. Deterministic; no-ops on zero
/// gradients apart from moment decay.
inline void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads,
                      AdamState& state, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size()) throw NumericError("adam_step: shape mismatch");
  if (state.m.size() != params.size()) state.init(params);
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].same_shape(grads[k])) throw NumericError("adam_step: shape mismatch");
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double g = grads[k].a[i];
      double& m = state.m[k].a[i];
      double& v = state.v[k].a[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      params[k].a[i] -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    }
  }
}

}  // namespace risksets
