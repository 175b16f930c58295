#pragma once

#include "bapt/biatt.hpp"
#include "bapt/nn.hpp"

#include <vector>

namespace bapt {

/// Encoder/decoder pointer network over the objects of one sub-image.
///
/// Object inputs come from the comprehension model's object projection (the
/// same tensors, not a copy). The decoder input at each step is
/// [embedding of the previously chosen object (or `start`) ; attention
/// context over the statement states], where the attention query is the
/// previous decoder state.
struct PointerParameters {
  LinearLayer object_projection;  // shared with BiattParameters
  LstmCell encoder;               // object_embed -> H
  LstmCell decoder;               // object_embed + 2H -> H
  BilinearForm pointer_attention;   // H x H, decoder state vs encoder states
  BilinearForm language_attention;  // H x 2H, decoder state vs statement states
  Tensor* start = nullptr;          // 1 x object_embed

  static PointerParameters create(ParameterStore& store, const BiattParameters& comprehension, Rng& rng);
};

struct PointerEncoding {
  Var embeddings;  // N x object_embed, encoder input order
  Var states;      // N x H
  Var keys;        // N x H, states B^T so that logits = d keys^T
  LstmState final;
};

struct DecodeState {
  LstmState lstm;
  Var previous;   // 1 x object_embed input for the next step
  Mask selected;  // already emitted objects
  std::size_t step = 0;
};

struct DecodeStep {
  Var probabilities;  // 1 x N, zero on selected objects
  LstmState lstm;
};

struct Permutation {
  std::vector<std::size_t> order;
  std::vector<double> step_probs;
  double log_prob = 0.0;
  Var log_prob_var;  // differentiable sum of log step probabilities
};

/// Requires N >= 1; sub-images without objects skip the pointer network.
PointerEncoding pointer_encode(const PointerParameters& p, Tape& tape, Var embeddings);
DecodeState initial_decode_state(const PointerParameters& p, Tape& tape, const PointerEncoding& enc);

/// Distribution over the not-yet-selected objects. Throws std::logic_error
/// once every object has been selected.
DecodeStep decode_step(const PointerParameters& p, Tape& tape, const DecodeState& state, const PointerEncoding& enc,
                       Var statement);
/// Marks `choice` as emitted and feeds its embedding to the next step.
DecodeState advance(const DecodeState& state, const DecodeStep& step, const PointerEncoding& enc, std::size_t choice);

Permutation sample_permutation(const PointerParameters& p, Tape& tape, Var embeddings, Var statement, Rng& rng);
/// Argmax at each step, lowest index on ties.
Permutation greedy_permutation(const PointerParameters& p, Tape& tape, Var embeddings, Var statement);
/// Teacher-forced log p(order | s, o). Throws std::invalid_argument if
/// `order` is not a permutation of 0..N-1.
Var permutation_log_prob(const PointerParameters& p, Tape& tape, Var embeddings, Var statement,
                         const std::vector<std::size_t>& order);

/// -(R - b) log_prob with R and b held constant; its gradient is the
/// score-function part of the policy gradient.
Var rl_surrogate_loss(Var log_prob, double reward, double baseline);
double rl_surrogate_value(double log_prob, double reward, double baseline);

bool is_permutation_of_range(const std::vector<std::size_t>& order, std::size_t n);

}  // namespace bapt
