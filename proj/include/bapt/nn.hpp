#pragma once

#include "bapt/autodiff.hpp"
#include "bapt/parameters.hpp"
#include "bapt/rng.hpp"

#include <cstddef>
#include <span>
#include <string>

namespace bapt {

enum class Activation { none, relu, tanh };

/// What a forward pass records onto and whether it is a training pass.
struct ForwardContext {
  Tape& tape;
  Rng& rng;
  bool training = false;
  double dropout = 0.0;
};

/// vocab_size x dim lookup table; one row per word id.
struct EmbeddingTable {
  Tensor* table = nullptr;

  static EmbeddingTable create(ParameterStore& store, const std::string& name, std::size_t vocab_size,
                               std::size_t dim, Rng& rng);
  std::size_t vocab_size() const { return table->rows(); }
  std::size_t dim() const { return table->cols(); }

  /// Returns ids.size() x dim. Throws std::out_of_range on an id >= vocab_size.
  Var lookup(Tape& tape, std::span<const std::size_t> ids) const;
};

/// y = act(x W^T + b), applied to every row of x.
struct LinearLayer {
  Tensor* weight = nullptr;  // out x in
  Tensor* bias = nullptr;    // optional, 1 x out
  Activation activation = Activation::none;

  static LinearLayer create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                            bool with_bias, Activation activation, Rng& rng);
  std::size_t in_dim() const { return weight->cols(); }
  std::size_t out_dim() const { return weight->rows(); }

  Var forward(Tape& tape, Var x) const;
};

struct LstmState {
  Var h;
  Var c;
};

/// Single-direction LSTM, gate order (input, forget, candidate, output).
/// Forget-gate bias starts at 1, other biases at 0, matrices Xavier.
struct LstmCell {
  Tensor* w_input = nullptr;   // 4H x in
  Tensor* w_hidden = nullptr;  // 4H x H
  Tensor* bias = nullptr;      // 1 x 4H

  static LstmCell create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                         Rng& rng);
  std::size_t hidden() const { return w_hidden->cols(); }
  std::size_t in_dim() const { return w_input->cols(); }

  LstmState zero_state(Tape& tape) const;
  LstmState step(Tape& tape, Var x, const LstmState& prev) const;

  struct Run {
    Var outputs;  // T x H
    LstmState final;
  };
  /// Runs over the rows of `inputs` from a zero state (or `initial`).
  Run run(Tape& tape, Var inputs) const;
  Run run(Tape& tape, Var inputs, const LstmState& initial) const;
};

/// Concatenated forward/backward LSTM; row t of the output is [fwd_t, bwd_t].
struct BiLstm {
  LstmCell forward;
  LstmCell backward;

  static BiLstm create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                       Rng& rng);
  std::size_t out_dim() const { return 2 * forward.hidden(); }

  struct Run {
    Var outputs;     // T x 2H, after dropout
    Var last_fwd;    // 1 x H, forward state after the final step
    Var last_bwd;    // 1 x H, backward state after reading the first step
  };
  /// Dropout is applied to the hidden outputs only, and only when training.
  Run run(Tape& tape, Var inputs, double dropout_rate, bool training, Rng& rng) const;
};

/// logit(q, k) = q^T B k.
struct BilinearForm {
  Tensor* matrix = nullptr;  // d_q x d_k

  static BilinearForm create(ParameterStore& store, const std::string& name, std::size_t dq, std::size_t dk,
                             Rng& rng);
  /// queries m x d_q, keys n x d_k -> m x n logits.
  Var logits(Tape& tape, Var queries, Var keys) const;
};

struct Attention {
  Var weights;  // m x n, rows are probability vectors over unmasked keys
  Var context;  // m x d_k
};

/// Softmax over bilinear logits followed by the weighted sum of keys.
/// Works for a single query (1 x d_q) or a batch of queries.
Attention bilinear_attention(Tape& tape, const BilinearForm& form, Var queries, Var keys, const Mask& key_mask);

/// [h; c; h - c; h o c], row-wise.
Var joint_features(Var h, Var c);

/// relu(W [h; c; h - c; h o c]).
Var fuse_joint(Tape& tape, const LinearLayer& layer, Var h, Var c);

}  // namespace bapt
