#include "bapt/nn.hpp"

#include "bapt/optim.hpp"

#include <array>
#include <vector>

namespace bapt {

EmbeddingTable EmbeddingTable::create(ParameterStore& store, const std::string& name, std::size_t vocab_size,
                                      std::size_t dim, Rng& rng) {
  Tensor& t = store.add(name, {vocab_size, dim});
  xavier_uniform_fill(t, rng);
  return EmbeddingTable{&t};
}

Var EmbeddingTable::lookup(Tape& tape, std::span<const std::size_t> ids) const {
  for (auto id : ids) {
    if (id >= vocab_size()) {
      throw std::out_of_range("embedding id " + std::to_string(id) + " >= vocabulary size " +
                              std::to_string(vocab_size()));
    }
  }
  return gather_rows(tape.param(*table), ids);
}

LinearLayer LinearLayer::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                                bool with_bias, Activation activation, Rng& rng) {
  LinearLayer layer;
  layer.weight = &store.add(name + ".weight", {out, in});
  xavier_uniform_fill(*layer.weight, rng);
  if (with_bias) layer.bias = &store.add(name + ".bias", {1, out});
  layer.activation = activation;
  return layer;
}

Var LinearLayer::forward(Tape& tape, Var x) const {
  if (x.cols() != in_dim()) {
    throw DimensionError("linear: input has " + std::to_string(x.cols()) + " columns, layer expects " +
                         std::to_string(in_dim()));
  }
  Var y = matmul_nt(x, tape.param(*weight));
  if (bias) y = add_row(y, tape.param(*bias));
  switch (activation) {
    case Activation::relu: return relu(y);
    case Activation::tanh: return tanh(y);
    case Activation::none: break;
  }
  return y;
}

LstmCell LstmCell::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                          Rng& rng) {
  LstmCell cell;
  cell.w_input = &store.add(name + ".w_input", {4 * hidden, in});
  xavier_uniform_fill(*cell.w_input, rng);
  cell.w_hidden = &store.add(name + ".w_hidden", {4 * hidden, hidden});
  xavier_uniform_fill(*cell.w_hidden, rng);
  cell.bias = &store.add(name + ".bias", {1, 4 * hidden});
  for (std::size_t k = hidden; k < 2 * hidden; ++k) cell.bias->data[k] = 1.0;
  return cell;
}

LstmState LstmCell::zero_state(Tape& tape) const {
  return {tape.constant(Tensor::matrix(1, hidden())), tape.constant(Tensor::matrix(1, hidden()))};
}

LstmState LstmCell::step(Tape& tape, Var x, const LstmState& prev) const {
  Var gates = add_row(add(matmul_nt(x, tape.param(*w_input)), matmul_nt(prev.h, tape.param(*w_hidden))),
                      tape.param(*bias));
  Var hc = lstm_pointwise(gates, prev.c);
  return {slice_cols(hc, 0, hidden()), slice_cols(hc, hidden(), hidden())};
}

LstmCell::Run LstmCell::run(Tape& tape, Var inputs) const { return run(tape, inputs, zero_state(tape)); }

LstmCell::Run LstmCell::run(Tape& tape, Var inputs, const LstmState& initial) const {
  const std::size_t steps = inputs.rows();
  if (steps == 0) throw std::invalid_argument("lstm: empty input sequence");
  if (inputs.cols() != in_dim()) {
    throw DimensionError("lstm: input has " + std::to_string(inputs.cols()) + " columns, cell expects " +
                         std::to_string(in_dim()));
  }
  // Input projections for every step in one product.
  Var projected = add_row(matmul_nt(inputs, tape.param(*w_input)), tape.param(*bias));
  Var hc = lstm_sequence(projected, tape.param(*w_hidden), initial.h, initial.c);
  Var outputs = slice_cols(hc, 0, hidden());
  LstmState last{slice_rows(outputs, steps - 1, 1), slice_rows(slice_cols(hc, hidden(), hidden()), steps - 1, 1)};
  return {outputs, last};
}

BiLstm BiLstm::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                      Rng& rng) {
  BiLstm lstm;
  lstm.forward = LstmCell::create(store, name + ".fwd", in, hidden, rng);
  lstm.backward = LstmCell::create(store, name + ".bwd", in, hidden, rng);
  return lstm;
}

BiLstm::Run BiLstm::run(Tape& tape, Var inputs, double dropout_rate, bool training, Rng& rng) const {
  if (inputs.rows() == 0) throw std::invalid_argument("bilstm: empty input sequence");
  auto fwd = forward.run(tape, inputs);
  auto bwd = backward.run(tape, reverse_rows(inputs));
  std::array<Var, 2> halves{fwd.outputs, reverse_rows(bwd.outputs)};
  Var out = dropout(concat_cols(halves), dropout_rate, training, rng);
  return {out, fwd.final.h, bwd.final.h};
}

BilinearForm BilinearForm::create(ParameterStore& store, const std::string& name, std::size_t dq, std::size_t dk,
                                  Rng& rng) {
  Tensor& t = store.add(name, {dq, dk});
  xavier_uniform_fill(t, rng);
  return BilinearForm{&t};
}

Var BilinearForm::logits(Tape& tape, Var queries, Var keys) const {
  return matmul_nt(matmul(queries, tape.param(*matrix)), keys);
}

Attention bilinear_attention(Tape& tape, const BilinearForm& form, Var queries, Var keys, const Mask& key_mask) {
  Var weights = softmax_masked_rows(form.logits(tape, queries, keys), key_mask);
  return {weights, matmul(weights, keys)};
}

Var joint_features(Var h, Var c) {
  if (h.rows() != c.rows() || h.cols() != c.cols()) {
    throw DimensionError("joint features: " + shape_string(h.value().shape) + " vs " +
                         shape_string(c.value().shape));
  }
  std::array<Var, 4> parts{h, c, sub(h, c), mul(h, c)};
  return concat_cols(parts);
}

Var fuse_joint(Tape& tape, const LinearLayer& layer, Var h, Var c) {
  return relu(layer.forward(tape, joint_features(h, c)));
}

}  // namespace bapt
