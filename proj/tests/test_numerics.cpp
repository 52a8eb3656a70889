#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "mvlt/error.hpp"
#include "mvlt/ops.hpp"
#include "mvlt/optim.hpp"
#include "mvlt/rng.hpp"
#include "mvlt/tensor.hpp"

namespace mvlt {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), grad);
}

// Central differences of f with respect to every scalar of x.
std::vector<double> numeric_grad(Tensor& x, const std::function<Tensor()>& f, double h = 1e-6) {
  std::vector<double> g(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f().item();
    x.data()[i] = keep - h;
    const double down = f().item();
    x.data()[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

void expect_grad_matches(Tensor& x, const std::function<Tensor()>& f, double tol = 1e-7) {
  x.clear_grad();
  f().backward();
  ASSERT_TRUE(x.has_grad());
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  auto numeric = numeric_grad(x, f);
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    EXPECT_NEAR(analytic[i], numeric[i], tol * std::max(1.0, std::abs(numeric[i]))) << "index " << i;
  }
}

TEST(Matmul, IdentityTimesColumn) {
  auto y = ops::matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{3}, {4}}));
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y.at(0, 0), 3.0);
  EXPECT_EQ(y.at(1, 0), 4.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto f = [&] { return ops::sum(ops::gelu(ops::matmul(a, b))); };
  expect_grad_matches(a, f);
  expect_grad_matches(b, f);
}

TEST(LayerNorm, ConstantRowNormalizesToZero) {
  auto y = ops::layer_norm(Tensor::matrix({{2.5, 2.5, 2.5, 2.5}}), Tensor::full({4}, 1.0),
                           Tensor::zeros({4}));
  for (double v : y.data()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(v, 0.0);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  Tensor x = random_tensor({3, 5}, rng), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
  Tensor w = random_tensor({5, 1}, rng, false);
  auto f = [&] { return ops::sum(ops::gelu(ops::matmul(ops::layer_norm(x, g, b), w))); };
  expect_grad_matches(x, f);
  expect_grad_matches(g, f);
  expect_grad_matches(b, f);
}

TEST(Gelu, ValueAndSlopeAtZero) {
  Tensor x = Tensor::vector({0.0}, true);
  auto y = ops::gelu(x);
  EXPECT_EQ(y.data()[0], 0.0);
  ops::sum(y).backward();
  EXPECT_NEAR(x.grad()[0], 0.5, 1e-15);
}

TEST(Gelu, UsesExactErfForm) {
  auto y = ops::gelu(Tensor::vector({1.0, -2.0}));
  EXPECT_NEAR(y.data()[0], 0.5 * (1 + std::erf(1 / std::numbers::sqrt2)), 1e-15);
  EXPECT_NEAR(y.data()[1], -1.0 * (1 + std::erf(-2 / std::numbers::sqrt2)), 1e-15);
}

TEST(Gelu, GradientMatchesFiniteDifferences) {
  Tensor x = Tensor::vector({-3.0, -0.7, 0.2, 1.4, 2.9}, true);
  expect_grad_matches(x, [&] { return ops::sum(ops::gelu(x)); });
}

TEST(Softmax, UniformLogits) {
  auto y = ops::softmax(Tensor::matrix({{0, 0, 0, 0}}), 1);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, MatchesDirectFormula) {
  auto y = ops::softmax(Tensor::matrix({{1, 2, 3}}), 1);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.data()[i], std::exp(i + 1.0) / z, 1e-12);
}

TEST(Softmax, RowsAreDistributions) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, false);
    for (auto& v : x.data()) v *= 50.0;
    auto y = ops::softmax(x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        const double p = y.at(r, c);
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, ColumnAxis) {
  auto y = ops::softmax(Tensor::matrix({{0, 1}, {0, 1}}), 0);
  EXPECT_DOUBLE_EQ(y.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1, 1), 0.5);
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  std::vector<double> row(37, 0.0);
  row[5] = 30.0;
  std::vector<std::size_t> t{5};
  EXPECT_LT(ops::cross_entropy(Tensor({1, 37}, row), t).item(), 1e-9);
}

TEST(CrossEntropy, UniformIsLogM) {
  std::vector<std::size_t> t{11};
  EXPECT_NEAR(ops::cross_entropy(Tensor::zeros({1, 37}), t).item(), std::log(37.0), 1e-12);
}

TEST(CrossEntropy, HandComputedValue) {
  std::vector<std::size_t> t{0};
  const double expected = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 1.0;
  const double got = ops::cross_entropy(Tensor::matrix({{1, 2, 3}}), t).item();
  EXPECT_NEAR(got, expected, 1e-12);
  EXPECT_NEAR(got, 2.4076, 1e-4);
}

TEST(CrossEntropy, OutOfRangeTargetThrows) {
  std::vector<std::size_t> t{3};
  EXPECT_THROW(ops::cross_entropy(Tensor::zeros({1, 3}), t), IndexError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Tensor x = random_tensor({3, 5}, rng);
  std::vector<std::size_t> t{4, 0, 2};
  expect_grad_matches(x, [&] { return ops::cross_entropy(x, t); });
}

TEST(Mse, Values) {
  Tensor t = Tensor::vector({0.2, 0.4, 0.9});
  EXPECT_EQ(ops::mse(t, t).item(), 0.0);
  EXPECT_NEAR(ops::mse(Tensor::vector({1.2, 1.4, 1.9}), t).item(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(ops::mse(Tensor::vector({0, 1}), Tensor::vector({1, 0})).item(), 1.0);
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor q = random_tensor({3, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
  Tensor w = random_tensor({3, 4}, rng, false);
  auto f = [&] { return ops::sum(ops::gelu(ops::add(ops::attention(q, k, v, 2), w))); };
  expect_grad_matches(q, f);
  expect_grad_matches(k, f);
  expect_grad_matches(v, f);
}

TEST(SplitConcat, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  Tensor x = random_tensor({4, 3}, rng);
  std::vector<std::size_t> sizes{1, 3};
  std::vector<std::size_t> idx{2, 0, 2};
  auto f = [&] {
    auto parts = ops::split(x, 0, sizes);
    std::vector<Tensor> swapped{ops::gelu(parts[1]), parts[0]};
    auto y = ops::concat(swapped, 0);
    return ops::sum(ops::gelu(ops::gather_rows(y, idx)));
  };
  expect_grad_matches(x, f);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::vector({1, 2, 3}, true);
  ops::sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, MseAgainstZeroGivesTwoV) {
  Tensor x = Tensor::scalar(1.75, true);
  ops::mse(x, Tensor::scalar(0.0)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.5);
}

TEST(Backward, NonScalarIsContractViolation) {
  Tensor x = Tensor::vector({1, 2}, true);
  EXPECT_THROW(ops::scale(x, 2.0).backward(), ContractError);
}

TEST(Backward, AccumulationIsLinear) {
  Rng rng(7);
  Tensor x = random_tensor({2, 3}, rng);
  auto l1 = [&] { return ops::sum(ops::gelu(x)); };
  auto l2 = [&] { return ops::mse(x, Tensor::full({2, 3}, 0.3)); };
  ops::add(l1(), l2()).backward();
  std::vector<double> joint(x.grad().begin(), x.grad().end());
  x.clear_grad();
  l1().backward();
  l2().backward();
  for (std::size_t i = 0; i < joint.size(); ++i) EXPECT_NEAR(joint[i], x.grad()[i], 1e-15);
}

TEST(Backward, SharedLeafAccumulatesBothPaths) {
  Tensor x = Tensor::scalar(3.0, true);
  ops::add(ops::scale(x, 2.0), ops::mse(x, Tensor::scalar(0.0))).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 + 6.0);
}

TEST(Detach, StopsGradient) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = ops::add(ops::scale(x, 3.0), ops::scale(x.detach(), 5.0));
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(AdamW, ZeroGradientLeavesParametersUnchanged) {
  ParameterStore store;
  store.add("w", Tensor::matrix({{0.5, -1.0}}, true), true);
  store.zero_grad();
  auto state = AdamWState::for_store(store);
  LrSchedule s;
  adamw_step(store, state, 0.1, s);
  EXPECT_EQ(store.get("w").data()[0], 0.5);
  EXPECT_EQ(store.get("w").data()[1], -1.0);
}

TEST(AdamW, SingleStepHandComputation) {
  ParameterStore store;
  store.add("p", Tensor::scalar(1.0, true), false);
  store.zero_grad();
  store.get("p").grad()[0] = 1.0;
  auto state = AdamWState::for_store(store);
  LrSchedule s;
  s.beta1 = 0.9;
  s.beta2 = 0.95;
  s.weight_decay = 0.0;
  adamw_step(store, state, 0.1, s);
  // m_hat = v_hat = 1, so the step is lr * 1 / (1 + eps).
  EXPECT_NEAR(store.get("p").data()[0], 0.9, 1e-8);
  EXPECT_EQ(state.t, 1u);
}

TEST(AdamW, DecayAppliesToMatricesOnly) {
  ParameterStore store;
  store.add("w", Tensor::matrix({{1.0}}, true), true);
  store.add("b", Tensor::vector({1.0}, true), false);
  store.zero_grad();
  auto state = AdamWState::for_store(store);
  LrSchedule s;
  s.weight_decay = 0.5;
  adamw_step(store, state, 0.1, s);
  EXPECT_DOUBLE_EQ(store.get("w").data()[0], 1.0 - 0.1 * 0.5);
  EXPECT_EQ(store.get("b").data()[0], 1.0);
}

TEST(AdamW, FrozenParametersUntouched) {
  ParameterStore store;
  store.add("a.w", Tensor::matrix({{1.0}}, true), true);
  store.add("b.w", Tensor::matrix({{1.0}}, true), true);
  store.set_frozen("a.", true);
  store.zero_grad();
  store.get("a.w").grad()[0] = 1.0;
  store.get("b.w").grad()[0] = 1.0;
  auto state = AdamWState::for_store(store);
  adamw_step(store, state, 0.1, LrSchedule{});
  EXPECT_EQ(store.get("a.w").data()[0], 1.0);
  EXPECT_LT(store.get("b.w").data()[0], 1.0);
}

TEST(LrSchedule, WarmupThenCosine) {
  LrSchedule s;
  s.base_lr = 2e-3;
  s.warmup_steps = 100;
  s.total_steps = 1100;
  EXPECT_EQ(lr_at(0, s), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(50, s), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(100, s), 2e-3);
  EXPECT_NEAR(lr_at(600, s), 1e-3, 1e-15);
  EXPECT_NEAR(lr_at(1100, s), 0.0, 1e-18);
  for (std::size_t t = 101; t <= 1100; ++t) EXPECT_LT(lr_at(t, s), lr_at(t - 1, s)) << t;
}

TEST(GradClip, BelowThresholdUntouched) {
  ParameterStore store;
  store.add("g", Tensor::vector({1.0}, true), false);
  store.zero_grad();
  store.get("g").grad()[0] = 1.0;
  EXPECT_EQ(clip_global_norm(store, 2.0), 1.0);
  EXPECT_EQ(store.get("g").grad()[0], 1.0);
}

TEST(GradClip, ScalesToMaxNorm) {
  ParameterStore store;
  store.add("g", Tensor::vector({0.0, 0.0}, true), false);
  store.zero_grad();
  store.get("g").grad()[0] = 3.0;
  store.get("g").grad()[1] = 4.0;
  EXPECT_DOUBLE_EQ(global_grad_norm(store), 5.0);
  EXPECT_DOUBLE_EQ(clip_global_norm(store, 2.0), 0.4);
  EXPECT_DOUBLE_EQ(store.get("g").grad()[0], 1.2);
  EXPECT_DOUBLE_EQ(store.get("g").grad()[1], 1.6);
}

TEST(LayerDecay, MultiplierFollowsDepth) {
  ParameterStore store;
  store.add("embed", Tensor::vector({0}), false, 0);
  store.add("block0", Tensor::vector({0}), false, 1);
  store.add("block1", Tensor::vector({0}), false, 2);
  store.add("head", Tensor::vector({0}), false);
  store.set_top_layer(3);
  EXPECT_DOUBLE_EQ(store.lr_multiplier(store[0], 0.75), 0.75 * 0.75 * 0.75);
  EXPECT_DOUBLE_EQ(store.lr_multiplier(store[1], 0.75), 0.75 * 0.75);
  EXPECT_DOUBLE_EQ(store.lr_multiplier(store[2], 0.75), 0.75);
  EXPECT_DOUBLE_EQ(store.lr_multiplier(store[3], 0.75), 1.0);
  EXPECT_DOUBLE_EQ(store.lr_multiplier(store[0], std::nullopt), 1.0);
}

TEST(Rng, DerivedStreamsAreReproducibleAndDistinct) {
  Rng a = Rng::derive(9, {1, 2}), b = Rng::derive(9, {1, 2}), c = Rng::derive(9, {1, 3});
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
}

TEST(Rng, ChooseGivesDistinctIndices) {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    auto idx = rng.choose(20, 7);
    std::sort(idx.begin(), idx.end());
    EXPECT_EQ(std::unique(idx.begin(), idx.end()), idx.end());
    EXPECT_LT(idx.back(), 20u);
  }
}

}  // namespace
}  // namespace mvlt
