#include "bapt/pointer.hpp"

#include "bapt/optim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

namespace bapt {

PointerParameters PointerParameters::create(ParameterStore& store, const BiattParameters& comprehension, Rng& rng) {
  const ModelDims& d = comprehension.dims;
  PointerParameters p;
  p.object_projection = comprehension.object_projection;
  p.encoder = LstmCell::create(store, "pointer.encoder", d.object_embed, d.hidden, rng);
  p.decoder = LstmCell::create(store, "pointer.decoder", d.object_embed + d.states(), d.hidden, rng);
  p.pointer_attention = BilinearForm::create(store, "pointer.pointer_attention", d.hidden, d.hidden, rng);
  p.language_attention = BilinearForm::create(store, "pointer.language_attention", d.hidden, d.states(), rng);
  p.start = &store.add("pointer.start", {1, d.object_embed});
  xavier_uniform_fill(*p.start, rng);
  return p;
}

PointerEncoding pointer_encode(const PointerParameters& p, Tape& tape, Var embeddings) {
  if (embeddings.rows() == 0) throw std::invalid_argument("pointer_encode: no objects");
  auto run = p.encoder.run(tape, embeddings);
  PointerEncoding enc;
  enc.embeddings = embeddings;
  enc.states = run.outputs;
  enc.keys = matmul_nt(run.outputs, tape.param(*p.pointer_attention.matrix));
  enc.final = run.final;
  return enc;
}

DecodeState initial_decode_state(const PointerParameters& p, Tape& tape, const PointerEncoding& enc) {
  return {enc.final, tape.param(*p.start), Mask(enc.states.rows(), false), 0};
}

DecodeStep decode_step(const PointerParameters& p, Tape& tape, const DecodeState& state, const PointerEncoding& enc,
                       Var statement) {
  const std::size_t n = enc.states.rows();
  if (state.step >= n) throw std::logic_error("decode_step: every object has already been selected");
  auto lang = bilinear_attention(tape, p.language_attention, state.lstm.h, statement, Mask(statement.rows(), true));
  std::array<Var, 2> input{state.previous, lang.context};
  LstmState next = p.decoder.step(tape, concat_cols(input), state.lstm);
  Mask open(n);
  for (std::size_t k = 0; k < n; ++k) open[k] = !state.selected[k];
  Var probs = softmax_masked_rows(matmul_nt(next.h, enc.keys), open);
  return {probs, next};
}

DecodeState advance(const DecodeState& state, const DecodeStep& step, const PointerEncoding& enc, std::size_t choice) {
  if (choice >= state.selected.size() || state.selected[choice]) {
    throw std::invalid_argument("advance: object " + std::to_string(choice) + " is not selectable");
  }
  DecodeState next;
  next.lstm = step.lstm;
  next.previous = slice_rows(enc.embeddings, choice, 1);
  next.selected = state.selected;
  next.selected[choice] = true;
  next.step = state.step + 1;
  return next;
}

namespace {

template <typename Chooser>
Permutation decode(const PointerParameters& p, Tape& tape, Var embeddings, Var statement, Chooser choose) {
  PointerEncoding enc = pointer_encode(p, tape, embeddings);
  DecodeState state = initial_decode_state(p, tape, enc);
  const std::size_t n = embeddings.rows();
  Permutation perm;
  std::vector<Var> logs;
  for (std::size_t t = 0; t < n; ++t) {
    DecodeStep step = decode_step(p, tape, state, enc, statement);
    const auto& probs = step.probabilities.value().data;
    const std::size_t choice = choose(probs, t);
    perm.order.push_back(choice);
    perm.step_probs.push_back(probs[choice]);
    perm.log_prob += std::log(probs[choice]);
    logs.push_back(log(pick(step.probabilities, 0, choice)));
    state = advance(state, step, enc, choice);
  }
  perm.log_prob_var = sum(concat_cols(logs));
  return perm;
}

}  // namespace

Permutation sample_permutation(const PointerParameters& p, Tape& tape, Var embeddings, Var statement, Rng& rng) {
  return decode(p, tape, embeddings, statement, [&rng](const std::vector<double>& probs, std::size_t) {
    std::discrete_distribution<std::size_t> dist(probs.begin(), probs.end());
    return dist(rng);
  });
}

Permutation greedy_permutation(const PointerParameters& p, Tape& tape, Var embeddings, Var statement) {
  return decode(p, tape, embeddings, statement, [](const std::vector<double>& probs, std::size_t) {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  });
}

bool is_permutation_of_range(const std::vector<std::size_t>& order, std::size_t n) {
  if (order.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (auto k : order) {
    if (k >= n || seen[k]) return false;
    seen[k] = true;
  }
  return true;
}

Var permutation_log_prob(const PointerParameters& p, Tape& tape, Var embeddings, Var statement,
                         const std::vector<std::size_t>& order) {
  if (!is_permutation_of_range(order, embeddings.rows())) {
    throw std::invalid_argument("permutation_log_prob: order is not a permutation of the objects");
  }
  return decode(p, tape, embeddings, statement,
                [&order](const std::vector<double>&, std::size_t t) { return order[t]; })
      .log_prob_var;
}

Var rl_surrogate_loss(Var log_prob, double reward, double baseline) { return scale(log_prob, -(reward - baseline)); }

double rl_surrogate_value(double log_prob, double reward, double baseline) { return -(reward - baseline) * log_prob; }

}  // namespace bapt
