#pragma once

#include "bapt/rng.hpp"
#include "bapt/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace bapt {

using Mask = std::vector<bool>;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  double item() const { return value().item(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only record of differentiable operations.
///
/// Nodes are stored in execution order, so every node follows the nodes it
/// reads from and a reverse sweep is a valid topological traversal.
/// Parameters enter through param(); backward() accumulates into their grad.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a trainable tensor. Repeated calls return the same node.
  Var param(Tensor& p);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  /// Gradients are added to the grad buffers of bound parameters.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Op-construction interface.
  Var push(Tensor value, std::vector<int> inputs, BackwardFn fn);
  const Tensor& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of a node, allocated and zeroed on first access.
  MatrixMap grad(int id);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Tensor* external = nullptr;  // parameter leaf: value and grad live in the parameter
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;  // deque keeps value() references stable across pushes
  std::unordered_map<const Tensor*, int> param_nodes_;
};

// Linear algebra. Matrices are row-major; vectors are 1 x n rows.
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x n row to every row of an m x n matrix.
Var add_row(Var a, Var row);

Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var exp(Var a);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var reverse_rows(Var a);

Var sum(Var a);
Var mean_rows(Var a);
Var pick(Var a, std::size_t r, std::size_t c);

/// Row-wise softmax over the columns marked true in `mask` (length = cols).
/// Masked columns receive probability exactly 0.
Var softmax_masked_rows(Var logits, const Mask& mask);

/// Column-wise maximum over the rows marked true in `row_mask`.
/// Backward routes each column's gradient to its argmax row; ties go to the
/// lowest row index.
Var masked_max_rows(Var a, const Mask& row_mask);

/// Element-wise maximum over a list of equally sized row vectors.
Var masked_reduce_max(std::span<const Var> vectors, const Mask& mask);

/// Fused LSTM cell nonlinearity. `gates` is 1 x 4H in (input, forget,
/// candidate, output) order; `cell` is 1 x H. Returns [h, c] as 1 x 2H.
Var lstm_pointwise(Var gates, Var cell);

/// Whole-sequence LSTM recurrence. `projected` is T x 4H (input projection
/// plus bias for every step), `w_hidden` 4H x H, `h0`/`c0` 1 x H. Returns
/// T x 2H with row t = [h_t, c_t]. Equivalent to chaining lstm_pointwise,
/// but the backward pass batches the weight gradient over time.
Var lstm_sequence(Var projected, Var w_hidden, Var h0, Var c0);

/// Inverted dropout; identity when !training or rate == 0.
Var dropout(Var x, double rate, bool training, Rng& rng);

/// -y log p - (1-y) log(1-p) with p clamped to [1e-12, 1 - 1e-12].
Var binary_cross_entropy(Var p, double y);

// Non-recorded helpers.
std::vector<double> softmax_masked(std::span<const double> logits, const Mask& mask);

}  // namespace bapt
