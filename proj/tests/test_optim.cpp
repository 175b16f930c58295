#include "support.hpp"

#include "bapt/optim.hpp"
#include "bapt/parameters.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using namespace bapt;
using namespace bapt::testing;

TEST(ParameterStore, RegistersUniqueNames) {
  ParameterStore store;
  Tensor& a = store.add("a", {2, 3});
  EXPECT_EQ(a.numel(), 6u);
  EXPECT_TRUE(a.requires_grad);
  EXPECT_EQ(&store.get("a"), &a);
  EXPECT_THROW(store.add("a", {1}), std::invalid_argument);
  EXPECT_THROW(store.get("missing"), std::out_of_range);
  store.add("b", {4});
  EXPECT_EQ(store.total_values(), 10u);
}

TEST(Adam, FirstStepMagnitude) {
  ParameterStore store;
  Tensor& w = store.add("w", {1});
  w.grad = {1.0};
  AdamState state;
  adam_step(store, state, 1e-4);
  // m_hat = 1, v_hat = 1 after bias correction.
  EXPECT_NEAR(w.data[0], -1e-4 * (1.0 / (1.0 + 1e-8)), 1e-18);
  EXPECT_NEAR(w.data[0], -9.99999e-5, 1e-10);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, MatchesHandRecurrenceOverSeveralSteps) {
  ParameterStore store;
  Tensor& w = store.add("w", {2});
  AdamState state;
  const double lr = 0.01;
  double m[2] = {0, 0}, v[2] = {0, 0}, expect[2] = {0, 0};
  const double grads[3][2] = {{0.5, -1.0}, {0.25, 2.0}, {-0.75, 0.0}};
  for (int t = 1; t <= 3; ++t) {
    w.grad = {grads[t - 1][0], grads[t - 1][1]};
    adam_step(store, state, lr);
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      expect[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(w.data[i], expect[i], 1e-15);
    }
  }
}

TEST(Adam, ZeroGradientIsNoOp) {
  ParameterStore store;
  Tensor& w = store.add("w", {3});
  w.data = {1, -2, 3};
  w.zero_grad();
  AdamState state;
  for (int i = 0; i < 5; ++i) adam_step(store, state, 0.1);
  EXPECT_EQ(w.data, (std::vector<double>{1, -2, 3}));
}

TEST(Adam, ZeroLearningRateStillCountsSteps) {
  ParameterStore store;
  Tensor& w = store.add("w", {2});
  w.data = {0.5, 0.25};
  w.grad = {3.0, -1.0};
  AdamState state;
  adam_step(store, state, 0.0);
  EXPECT_EQ(w.data, (std::vector<double>{0.5, 0.25}));
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParameterStore store;
  Tensor& a = store.add("good", {1});
  Tensor& b = store.add("layer.bad", {2});
  a.grad = {1.0};
  b.grad = {0.0, std::nan("")};
  AdamState state;
  try {
    adam_step(store, state, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.bad"), std::string::npos);
  }
  EXPECT_EQ(a.data[0], 0.0);
  EXPECT_EQ(state.step, 0);
}

TEST(ClipByGlobalNorm, Examples) {
  std::vector<double> a{6.0, 0.0}, b{0.0, 8.0};  // norm 10
  EXPECT_NEAR(clip_by_global_norm({&a, &b}, 5.0), 10.0, 1e-12);
  EXPECT_NEAR(a[0], 3.0, 1e-12);
  EXPECT_NEAR(b[1], 4.0, 1e-12);

  std::vector<double> small{0.0, 3.0};
  clip_by_global_norm({&small}, 5.0);
  EXPECT_EQ(small, (std::vector<double>{0.0, 3.0}));

  std::vector<double> single{3.0, 4.0};
  clip_by_global_norm({&single}, 1.0);
  EXPECT_NEAR(single[0], 0.6, 1e-15);
  EXPECT_NEAR(single[1], 0.8, 1e-15);
}

TEST(ClipByGlobalNorm, IdempotentAndBounded) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    ParameterStore store;
    for (int k = 0; k < 3; ++k) {
      Tensor& t = store.add("p" + std::to_string(k), {4});
      t.grad = random_tensor({4}, rng, -10, 10).data;
    }
    const double max_norm = 0.5 + trial % 5;
    clip_by_global_norm(store, max_norm);
    const double once = global_grad_norm(store);
    EXPECT_LE(once, max_norm * (1 + 1e-12));
    std::vector<std::vector<double>> snapshot;
    for (std::size_t i = 0; i < store.size(); ++i) snapshot.push_back(store.at(i).grad);
    clip_by_global_norm(store, max_norm);
    for (std::size_t i = 0; i < store.size(); ++i) {
      for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(store.at(i).grad[k], snapshot[i][k], 1e-14);
    }
  }
}

TEST(Xavier, BoundDeterminismAndErrors) {
  Rng a(5), b(5);
  Tensor x = xavier_uniform_init({2, 3}, a);
  Tensor y = xavier_uniform_init({2, 3}, b);
  const double bound = std::sqrt(6.0 / 5.0);
  EXPECT_NEAR(bound, 1.0955, 1e-4);
  for (double v : x.data) {
    EXPECT_LE(std::abs(v), bound);
  }
  EXPECT_EQ(x.data, y.data);
  EXPECT_THROW(xavier_uniform_init({0, 3}, a), std::invalid_argument);
  EXPECT_THROW(xavier_uniform_init({}, a), std::invalid_argument);
}

TEST(Xavier, FillsTheRange) {
  Rng rng(6);
  Tensor x = xavier_uniform_init({64, 64}, rng);
  const double bound = std::sqrt(6.0 / 128.0);
  double lo = 0, hi = 0;
  for (double v : x.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_LT(lo, -0.95 * bound);
  EXPECT_GT(hi, 0.95 * bound);
}

}  // namespace
