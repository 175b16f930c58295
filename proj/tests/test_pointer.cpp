#include "support.hpp"

#include "bapt/model.hpp"
#include "bapt/pointer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace {

using namespace bapt;
using namespace bapt::testing;

struct PointerFixture {
  explicit PointerFixture(std::uint64_t seed = 1)
      : rng(seed), model(ModelConfig{ModelKind::biatt_pointer, tiny_dims(), PoolingMode::max}, rng) {}

  const PointerParameters& ptr() const { return model.pointer(); }

  // Statement states and object embeddings for n random objects.
  std::pair<Var, Var> inputs(Tape& tape, std::size_t n, std::uint64_t seed = 5) {
    Rng data(seed);
    ForwardContext ctx{tape, rng, false, 0.0};
    const std::vector<std::size_t> ids{2, 3, 4};
    Var statement = encode_statement(model.comprehension(), ctx, ids).states;
    std::vector<ObjectFeature> objs;
    for (std::size_t k = 0; k < n; ++k) objs.push_back(random_object(data));
    return {project_objects(model.comprehension(), ctx, objs), statement};
  }

  void zero_policy() {
    auto& m = ptr().pointer_attention.matrix->data;
    std::fill(m.begin(), m.end(), 0.0);
  }

  Rng rng;
  Model model;
};

std::vector<std::vector<std::size_t>> all_orders(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<std::size_t>> out;
  do out.push_back(order);
  while (std::next_permutation(order.begin(), order.end()));
  return out;
}

TEST(PointerEncode, SharedProjectionAndShapes) {
  PointerFixture f;
  EXPECT_EQ(f.ptr().object_projection.weight, f.model.comprehension().object_projection.weight);
  EXPECT_EQ(f.ptr().object_projection.bias, f.model.comprehension().object_projection.bias);
  Tape tape;
  auto [emb, statement] = f.inputs(tape, 1);
  auto enc = pointer_encode(f.ptr(), tape, emb);
  EXPECT_EQ(enc.states.rows(), 1u);
  EXPECT_EQ(enc.states.cols(), 3u);
  EXPECT_THROW(pointer_encode(f.ptr(), tape, tape.constant(Tensor::matrix(0, 4))), std::invalid_argument);
}

TEST(PointerEncode, ZeroWeightsGiveZeroStates) {
  PointerFixture f;
  for (Tensor* t : {f.ptr().encoder.w_input, f.ptr().encoder.w_hidden, f.ptr().encoder.bias}) {
    std::fill(t->data.begin(), t->data.end(), 0.0);
  }
  Tape tape;
  auto [emb, statement] = f.inputs(tape, 4);
  for (double v : pointer_encode(f.ptr(), tape, emb).states.value().data) EXPECT_EQ(v, 0.0);
}

TEST(DecodeStep, DistributionOverUnselected) {
  PointerFixture f;
  Tape tape;
  auto [emb, statement] = f.inputs(tape, 5);
  auto enc = pointer_encode(f.ptr(), tape, emb);
  DecodeState state = initial_decode_state(f.ptr(), tape, enc);
  const std::vector<std::size_t> picks{3, 0, 4, 1, 2};
  for (std::size_t step = 0; step < 5; ++step) {
    auto d = decode_step(f.ptr(), tape, state, enc, statement);
    double total = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      const double p = d.probabilities.value()(0, k);
      if (state.selected[k]) EXPECT_EQ(p, 0.0);
      total += p;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    state = advance(state, d, enc, picks[step]);
  }
  EXPECT_THROW(decode_step(f.ptr(), tape, state, enc, statement), std::logic_error);
}

TEST(DecodeStep, ZeroPolicyIsUniform) {
  PointerFixture f;
  f.zero_policy();
  Tape tape;
  auto [emb, statement] = f.inputs(tape, 4);
  auto enc = pointer_encode(f.ptr(), tape, emb);
  DecodeState state = initial_decode_state(f.ptr(), tape, enc);
  auto d = decode_step(f.ptr(), tape, state, enc, statement);
  for (double p : d.probabilities.value().data) EXPECT_NEAR(p, 0.25, 1e-15);
  state = advance(state, d, enc, 2);
  d = decode_step(f.ptr(), tape, state, enc, statement);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(d.probabilities.value()(0, k), k == 2 ? 0.0 : 1.0 / 3, 1e-15);
}

TEST(Sample, SingleObject) {
  PointerFixture f;
  Tape tape;
  auto [emb, statement] = f.inputs(tape, 1);
  auto perm = sample_permutation(f.ptr(), tape, emb, statement, f.rng);
  EXPECT_EQ(perm.order, (std::vector<std::size_t>{0}));
  EXPECT_EQ(perm.log_prob, 0.0);
  EXPECT_EQ(greedy_permutation(f.ptr(), tape, emb, statement).order, (std::vector<std::size_t>{0}));
  EXPECT_EQ(permutation_log_prob(f.ptr(), tape, emb, statement, {0}).item(), 0.0);
}

TEST(Sample, UniformPolicyFrequencies) {
  PointerFixture f;
  f.zero_policy();
  Tape setup;
  auto [emb_v, st_v] = f.inputs(setup, 3);
  const Tensor emb = emb_v.value();
  const Tensor statement = st_v.value();
  std::map<std::vector<std::size_t>, int> counts;
  constexpr int kDraws = 60000;
  Rng rng(77);
  for (int d = 0; d < kDraws; ++d) {
    Tape tape;
    auto perm = sample_permutation(f.ptr(), tape, tape.constant(emb), tape.constant(statement), rng);
    ++counts[perm.order];
  }
  ASSERT_EQ(counts.size(), 6u);
  const double p = 1.0 / 6;
  const double sigma = std::sqrt(kDraws * p * (1 - p));
  for (const auto& [order, n] : counts) {
    EXPECT_LT(std::abs(n - kDraws * p), 3 * sigma) << "order starting " << order[0];
  }
}

TEST(Sample, LogProbIsProductOfStepProbabilities) {
  PointerFixture f;
  Tape tape;
  auto [emb, statement] = f.inputs(tape, 5);
  for (int trial = 0; trial < 20; ++trial) {
    auto perm = sample_permutation(f.ptr(), tape, emb, statement, f.rng);
    double product = 1.0;
    for (double p : perm.step_probs) product *= p;
    EXPECT_NEAR(std::exp(perm.log_prob), product, 1e-14);
    EXPECT_NEAR(perm.log_prob_var.item(), perm.log_prob, 1e-14);
    EXPECT_NEAR(permutation_log_prob(f.ptr(), tape, emb, statement, perm.order).item(), perm.log_prob, 1e-12);
  }
}

TEST(Sample, AlwaysValidPermutations) {
  PointerFixture f;
  for (std::size_t n = 1; n <= 8; ++n) {
    Tape tape;
    auto [emb, statement] = f.inputs(tape, n, n);
    for (int trial = 0; trial < 100; ++trial) {
      auto perm = sample_permutation(f.ptr(), tape, emb, statement, f.rng);
      EXPECT_TRUE(is_permutation_of_range(perm.order, n));
      EXPECT_EQ(perm.step_probs.size(), n);
    }
    EXPECT_TRUE(is_permutation_of_range(greedy_permutation(f.ptr(), tape, emb, statement).order, n));
  }
}

TEST(Greedy, UniformPolicyGivesIdentity) {
  PointerFixture f;
  f.zero_policy();
  Tape tape;
  auto [emb, statement] = f.inputs(tape, 6);
  EXPECT_EQ(greedy_permutation(f.ptr(), tape, emb, statement).order, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST(Greedy, ArgmaxAtEveryStep) {
  PointerFixture f;
  Tape tape;
  auto [emb, statement] = f.inputs(tape, 5);
  auto greedy = greedy_permutation(f.ptr(), tape, emb, statement);
  for (double p : greedy.step_probs) EXPECT_GT(p, 0.0);
  // Swapping the choice at any step with a later element gives a no-larger step probability there.
  auto enc = pointer_encode(f.ptr(), tape, emb);
  DecodeState state = initial_decode_state(f.ptr(), tape, enc);
  for (std::size_t step = 0; step < 5; ++step) {
    auto d = decode_step(f.ptr(), tape, state, enc, statement);
    const double chosen = d.probabilities.value()(0, greedy.order[step]);
    for (std::size_t later = step + 1; later < 5; ++later) {
      EXPECT_GE(chosen, d.probabilities.value()(0, greedy.order[later]));
    }
    state = advance(state, d, enc, greedy.order[step]);
  }
}

TEST(LogProb, UniformPolicyAndEnumeration) {
  PointerFixture f;
  for (std::size_t n = 1; n <= 4; ++n) {
    Tape tape;
    auto [emb, statement] = f.inputs(tape, n, 10 + n);
    double total = 0;
    for (const auto& order : all_orders(n)) total += std::exp(permutation_log_prob(f.ptr(), tape, emb, statement, order).item());
    EXPECT_NEAR(total, 1.0, 1e-9) << "n=" << n;
  }
  f.zero_policy();
  Tape tape;
  auto [emb, statement] = f.inputs(tape, 4);
  EXPECT_NEAR(permutation_log_prob(f.ptr(), tape, emb, statement, {2, 0, 3, 1}).item(), std::log(1.0 / 24), 1e-12);
  EXPECT_THROW(permutation_log_prob(f.ptr(), tape, emb, statement, {0, 0, 1, 2}), std::invalid_argument);
  EXPECT_THROW(permutation_log_prob(f.ptr(), tape, emb, statement, {0, 1, 2}), std::invalid_argument);
}

TEST(LogProb, GradientMatchesFiniteDifferences) {
  PointerFixture f;
  ParameterStore& store = f.model.params();
  const std::vector<std::size_t> order{2, 0, 1};
  auto build = [&](Tape& tape) {
    auto [emb, statement] = f.inputs(tape, 3);
    return permutation_log_prob(f.ptr(), tape, emb, statement, order);
  };
  store.zero_grad();
  {
    Tape tape;
    tape.backward(build(tape));
  }
  bool pointer_checked = false;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto numeric = numeric_grad(store.at(i), [&] {
      Tape tape;
      return build(tape).item();
    });
    EXPECT_LT(max_rel_err(store.at(i).grad, numeric), 1e-4) << store.name(i);
    pointer_checked = pointer_checked || store.name(i).rfind("pointer.", 0) == 0;
  }
  EXPECT_TRUE(pointer_checked);
}

TEST(Surrogate, Identities) {
  EXPECT_EQ(rl_surrogate_value(-1.3, 0.4, 0.4), 0.0);
  EXPECT_DOUBLE_EQ(rl_surrogate_value(-1.0, 0.0, 0.5), -0.5);
  for (double shift : {-3.0, 0.25, 10.0}) {
    EXPECT_NEAR(rl_surrogate_value(-0.7, 0.2 + shift, 0.9 + shift), rl_surrogate_value(-0.7, 0.2, 0.9), 1e-12);
  }
  Tensor lp = Tensor::scalar(-0.8);
  const auto zero = tape_grad_wrt(lp, [](Tape&, Var v) { return rl_surrogate_loss(v, 0.3, 0.3); });
  EXPECT_EQ(zero[0], 0.0);
  const auto g = tape_grad_wrt(lp, [](Tape&, Var v) { return rl_surrogate_loss(v, -0.2, 0.3); });
  EXPECT_DOUBLE_EQ(g[0], 0.5);
}

}  // namespace
