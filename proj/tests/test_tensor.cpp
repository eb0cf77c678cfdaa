// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "mope/errors.hpp"
#include "mope/gradcheck.hpp"
#include "mope/ops.hpp"
#include "mope/optim.hpp"
#include "test_util.hpp"

namespace mope {
namespace {

using testing::expect_gradients_match;
using testing::random_tensor;
using D = Tensor<double>;

TEST(Tensor, ElementCountMatchesShape) {
  D t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_THROW(D({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  D eye({2, 2}, {1, 0, 0, 1});
  D a({2, 2}, {1.5, -2, 3, 0.25});
  EXPECT_EQ(matmul(eye, a).values(), a.values());
}

TEST(Matmul, HandArithmetic) {
  D a({2, 2}, {1, 2, 3, 4});
  D b({2, 1}, {1, 1});
  EXPECT_EQ(matmul(a, b).values(), (std::vector<double>{3, 7}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  D a({2, 3});
  D b({2, 2});
  try {
    matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[2, 2]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 5}, rng);
    a.zero_grad();
    backward(sum(matmul(a, b)));
    const auto numeric =
        finite_diff_grad<double>([&](const D& x) { NoGradGuard g; return sum(matmul(x, b)).item(); }, a, 1e-4);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_LT(relative_error(a.grad()[i], numeric[i]), 1e-3);
  }
}

TEST(Matmul, BatchedAndSharedWeightGradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto a = random_tensor({2, 3, 4}, rng);
    auto w = random_tensor({4, 2}, rng);
    auto b = random_tensor({2, 4, 3}, rng);
    expect_gradients_match([&] { return matmul(a, w); }, {a, w});
    expect_gradients_match([&] { return matmul(a, b); }, {a, b});
  }
}

TEST(Softmax, SymmetricInput) {
  auto s = softmax(D({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Softmax, ClosedFormTwoThirds) {
  auto s = softmax(D({2}, {std::log(2.0), 0}), 0);
  EXPECT_NEAR(s[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(s[1], 1.0 / 3.0, 1e-12);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto z = random_tensor({7}, rng, 3.0, false);
    const double c = rng.normal(0.0, 50.0);
    D shifted({7});
    for (std::size_t i = 0; i < 7; ++i) shifted.values()[i] = z[i] + c;
    auto a = softmax(z, 0), b = softmax(shifted, 0);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(Softmax, SumsToOneOnRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(64));
    auto z = random_tensor({n}, rng, 10.0, false);
    auto s = softmax(z, 0);
    double total = 0.0;
    for (double v : s.values()) {
      EXPECT_GT(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Softmax, NanInputIsNumericError) {
  EXPECT_THROW(softmax(D({2}, {std::numeric_limits<double>::quiet_NaN(), 0}), 0), NumericError);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto z = random_tensor({2, 3, 4}, rng);
    expect_gradients_match([&] { return softmax(z, 1); }, {z});
    expect_gradients_match([&] { return softmax(z, 2); }, {z});
  }
}

TEST(Gelu, ZeroAndAsymptote) {
  auto y = gelu(D({2}, {0.0, 12.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 12.0, 1e-6);
}

TEST(Gelu, ExactErfForm) {
  const double x = 0.7;
  EXPECT_NEAR(gelu(D({1}, {x}))[0], x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))), 1e-15);
}

TEST(Gelu, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 5}, rng, 2.0);
    expect_gradients_match([&] { return gelu(x); }, {x});
  }
}

TEST(LayerNorm, ConstantInputGivesZeros) {
  D x({2, 4}, 3.5);
  auto y = layer_norm(x, D({4}, 1.0), D({4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, OutputMeanEqualsBias) {
  Rng rng(5);
  auto x = random_tensor({6, 8}, rng, 3.0, false);
  auto z = layer_norm(x, D({8}, 1.0), D({8}, 0.75));
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0.0;
    for (std::size_t c = 0; c < 8; ++c) m += z[r * 8 + c];
    EXPECT_NEAR(m / 8.0, 0.75, 1e-5);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 6}, rng);
    auto g = random_tensor({6}, rng);
    auto b = random_tensor({6}, rng);
    expect_gradients_match([&] { return layer_norm(x, g, b); }, {x, g, b});
  }
}

TEST(Detach, ValuesEqualAndNoGradient) {
  Rng rng(2);
  auto x = random_tensor({4}, rng);
  auto w = random_tensor({4}, rng);
  auto d = detach(x);
  EXPECT_EQ(d.values(), x.values());
  backward(sum(mul(d, w)));
  EXPECT_FALSE(x.has_grad());
  EXPECT_TRUE(w.has_grad());
}

TEST(Detach, HandDifferentiationOracle) {
  D x({3}, {0.5, -1.25, 2.0});
  x.set_requires_grad(true);
  auto sq = mul(x, x);
  backward(sum(add(sq, detach(sq))));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Backward, NonScalarLossIsContractError) {
  D x({2}, {1, 2});
  x.set_requires_grad(true);
  EXPECT_THROW(backward(mul(x, x)), ContractError);
}

TEST(Backward, AccumulatesOverPaths) {
  D x({1}, {3.0});
  x.set_requires_grad(true);
  backward(sum(add(mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Backward, FrozenOnlySubgraphAllocatesNoGrads) {
  ParameterRegistry<double> reg;
  auto frozen = reg.add("frozen", D({3}, {1, 2, 3}), true);
  auto trainable = reg.add("trainable", D({3}, {1, 1, 1}), false);
  backward(sum(mul(frozen, trainable)));
  EXPECT_FALSE(frozen.has_grad());
  EXPECT_TRUE(trainable.has_grad());
}

TEST(Backward, OffPathTensorHasNoGrad) {
  Rng rng(1);
  auto a = random_tensor({3}, rng);
  auto b = random_tensor({3}, rng);
  auto unused = mul(b, b);
  backward(sum(mul(a, a)));
  EXPECT_FALSE(b.has_grad());
  EXPECT_TRUE(a.has_grad());
  EXPECT_EQ(a.grad().size(), a.numel());
}

TEST(Ops, ElementwiseAndShapeGradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto pos = random_tensor({3, 4}, rng);
    for (auto& v : pos.values()) v = 1.0 + std::abs(v);
    expect_gradients_match([&] { return add(a, b); }, {a, b});
    expect_gradients_match([&] { return sub(a, b); }, {a, b});
    expect_gradients_match([&] { return mul(a, b); }, {a, b});
    expect_gradients_match([&] { return div(a, pos); }, {a, pos});
    expect_gradients_match([&] { return scale(a, 0.3); }, {a});
    expect_gradients_match([&] { return transpose(a); }, {a});
    expect_gradients_match([&] { return permute(a, {2, 0, 1}); }, {a});
    expect_gradients_match([&] { return reshape(a, Shape{6, 4}); }, {a});
    expect_gradients_match([&] { return concat<double>({a, a}, 1); }, {a});
    expect_gradients_match([&] { return narrow(a, 2, 1, 2); }, {a});
    expect_gradients_match([&] { return sum_axis(a, 1); }, {a});
    expect_gradients_match([&] { return expand_batch(b, 3); }, {b});
    expect_gradients_match([&] { return mean(a); }, {a});
  }
}

TEST(Ops, LossGradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto z = random_tensor({4, 3}, rng);
    const std::vector<int> labels{0, 2, 1, 2};
    std::vector<double> targets(12);
    for (auto& t : targets) t = rng.uniform() < 0.5 ? 1.0 : 0.0;
    expect_gradients_match([&] { return cross_entropy(z, std::span<const int>(labels)); }, {z});
    expect_gradients_match([&] { return bce_with_logits(z, std::span<const double>(targets)); }, {z});
  }
}

TEST(Ops, EmbeddingGradient) {
  Rng rng(4);
  auto table = random_tensor({5, 3}, rng);
  const std::vector<int> ids{4, 0, 4, 2};
  expect_gradients_match([&] { return embedding(table, std::span<const int>(ids), Shape{2, 2}); }, {table});
}

TEST(Ops, BroadcastBeyondLeadingDimensionRejected) {
  EXPECT_THROW(add(D({2, 3}), D({2})), DimensionError);
  EXPECT_THROW(permute(D({2, 3}), {0, 0}), DimensionError);
}

TEST(Ops, DeterministicForwardAndBackward) {
  auto run = [] {
    Rng rng(8);
    auto a = random_tensor({4, 6}, rng);
    auto w = random_tensor({6, 6}, rng);
    backward(sum(gelu(layer_norm(matmul(a, w), D({6}, 1.0), D({6})))));
    std::vector<double> out(w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamW, FrozenParameterBitIdentical) {
  ParameterRegistry<float> reg;
  auto frozen = reg.add("f", Tensor<float>({3}, {0.1f, 0.2f, 0.3f}), true);
  auto live = reg.add("t", Tensor<float>({3}, {0.1f, 0.2f, 0.3f}), false);
  live.mutable_grad().assign(3, 1.0f);
  frozen.mutable_grad().assign(3, 1.0f);
  const auto before = frozen.values();
  AdamW<float> opt(reg, {.lr = 0.1, .weight_decay = 0.5});
  opt.step();
  EXPECT_EQ(frozen.values(), before);
  EXPECT_NE(live.values(), before);
}

TEST(AdamW, ZeroGradZeroDecayLeavesValues) {
  ParameterRegistry<double> reg;
  auto p = reg.add("p", D({2}, {1.5, -0.5}), false);
  p.mutable_grad().assign(2, 0.0);
  AdamW<double> opt(reg, {.lr = 0.1});
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_EQ(p.values(), (std::vector<double>{1.5, -0.5}));
}

TEST(AdamW, MatchesHandRolledRecurrence) {
  const std::vector<double> grads{0.5, -1.0, 0.25, 2.0, -0.1, 0.0, 0.7};
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ParameterRegistry<double> reg;
  auto p = reg.add("w", D({1}, {0.3}), false);
  AdamW<double> opt(reg, {.lr = lr});
  double w = 0.3, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
    p.zero_grad();
    p.mutable_grad()[0] = g;
    opt.step();
    EXPECT_NEAR(p[0], w, 1e-15) << "step " << t;
  }
}

TEST(AdamW, DecoupledWeightDecay) {
  ParameterRegistry<double> reg;
  auto p = reg.add("w", D({1}, {2.0}), false);
  p.mutable_grad()[0] = 0.0;
  AdamW<double> opt(reg, {.lr = 0.1, .weight_decay = 0.01});
  opt.step();
  EXPECT_NEAR(p[0], 2.0 * (1.0 - 0.1 * 0.01), 1e-15);
}

TEST(Registry, DuplicateNameIsContractError) {
  ParameterRegistry<double> reg;
  reg.add("a", D({1}), false);
  EXPECT_THROW(reg.add("a", D({1}), false), ContractError);
}

}  // namespace
}  // namespace mope
