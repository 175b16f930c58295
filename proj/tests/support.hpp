#pragma once

#include "bapt/data.hpp"
#include "bapt/model.hpp"
#include "bapt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace bapt::testing {

inline std::string data_dir() { return BAPT_TEST_DATA_DIR; }

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data) v = u(rng);
  return t;
}

/// Central-difference derivative of `f` with respect to every entry of `t`.
inline std::vector<double> numeric_grad(Tensor& t, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double saved = t.data[i];
    t.data[i] = saved + h;
    const double up = f();
    t.data[i] = saved - h;
    const double down = f();
    t.data[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
  return worst;
}

/// Autodiff gradient of the scalar built by `loss` with respect to `x`.
inline std::vector<double> tape_grad_wrt(Tensor& x, const std::function<Var(Tape&, Var)>& loss) {
  x.requires_grad = true;
  x.zero_grad();
  Tape tape;
  tape.backward(loss(tape, tape.param(x)));
  return x.grad;
}

/// Max relative error between autodiff and central differences for an op
/// applied to `inputs`, reduced to a scalar with a fixed random weighting.
inline double op_grad_error(std::vector<Tensor> inputs, const std::function<Var(Tape&, std::vector<Var>&)>& op,
                            std::uint64_t seed = 7) {
  Rng rng(seed);
  Tensor weights;
  auto build = [&](Tape& tape) {
    std::vector<Var> vars;
    for (auto& in : inputs) vars.push_back(tape.param(in));
    Var out = op(tape, vars);
    if (weights.numel() != out.value().numel()) weights = random_tensor({out.rows(), out.cols()}, rng);
    return sum(mul(out, tape.constant(weights)));
  };
  for (auto& in : inputs) {
    in.requires_grad = true;
    in.zero_grad();
  }
  {
    Tape tape;
    tape.backward(build(tape));
  }
  double worst = 0.0;
  for (auto& in : inputs) {
    const auto numeric = numeric_grad(in, [&] {
      Tape tape;
      return build(tape).item();
    });
    worst = std::max(worst, max_rel_err(in.grad, numeric));
  }
  return worst;
}

inline ModelDims tiny_dims(std::size_t vocab = 6) {
  ModelDims d;
  d.vocab_size = vocab;
  d.embed = 4;
  d.hidden = 3;
  d.object_embed = 4;
  d.joint = 5;
  d.mlp = 5;
  return d;
}

inline ModelDims small_dims(std::size_t vocab) {
  ModelDims d;
  d.vocab_size = vocab;
  d.embed = 16;
  d.hidden = 16;
  d.object_embed = 8;
  d.joint = 24;
  d.mlp = 24;
  return d;
}

inline ObjectFeature random_object(Rng& rng) {
  std::uniform_int_distribution<int> pos(0, 100), size(0, 2), cat(0, 2);
  RawObject o;
  o.x = pos(rng);
  o.y = pos(rng);
  o.size = 10 * (size(rng) + 1);
  o.shape = static_cast<ObjectShape>(cat(rng));
  o.color = static_cast<ObjectColor>(cat(rng));
  return encode_object(o);
}

/// Random example with the given token count and per-sub-image object counts.
inline EncodedExample random_example(Rng& rng, std::size_t vocab, std::size_t tokens,
                                     std::array<std::size_t, kSubImages> counts, int label = 1) {
  EncodedExample ex;
  ex.identifier = "rand";
  std::uniform_int_distribution<std::size_t> word(0, vocab - 1);
  for (std::size_t i = 0; i < tokens; ++i) ex.token_ids.push_back(word(rng));
  for (std::size_t j = 0; j < kSubImages; ++j) {
    for (std::size_t k = 0; k < counts[j]; ++k) ex.sub_images[j].push_back(random_object(rng));
  }
  ex.label = label;
  return ex;
}

inline std::vector<EncodedExample> load_encoded(const std::string& path, const Vocabulary& vocab,
                                                std::size_t limit = 0) {
  std::vector<EncodedExample> out;
  for (const auto& raw : load_corpus(path)) {
    if (limit && out.size() == limit) break;
    out.push_back(encode_example(raw, vocab));
  }
  return out;
}

inline Vocabulary fixture_vocab() {
  std::vector<std::vector<std::string>> streams;
  for (const auto& raw : load_corpus(data_dir() + "/train.json")) streams.push_back(tokenize(raw.sentence));
  return Vocabulary::build(streams);
}

inline void fill_all(ParameterStore& store, double value) {
  for (std::size_t i = 0; i < store.size(); ++i) std::fill(store.at(i).data.begin(), store.at(i).data.end(), value);
}

}  // namespace bapt::testing
