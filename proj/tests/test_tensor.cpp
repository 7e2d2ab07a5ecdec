#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mst/adamw.hpp"
#include "mst/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/op_catalog.hpp"

using namespace mst;
using mst::testing::gradient_error;
using mst::testing::probe;
using mst::testing::random_tensor;

namespace {

Tensor<double> T2(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor<double>(Shape{r, c}, std::move(v)); }

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto x = T2(2, 2, {3, -1, 0.5, 7});
  const auto y = matmul(T2(2, 2, {1, 0, 0, 1}), x);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()),
            std::vector<double>(x.values().begin(), x.values().end()));
}

TEST(Matmul, HandComputedProduct) {
  const auto y = matmul(T2(2, 2, {1, 2, 3, 4}), T2(2, 1, {1, 1}));
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(y.at(0), 3.0);
  EXPECT_DOUBLE_EQ(y.at(1), 7.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(T2(2, 3, std::vector<double>(6)), T2(2, 2, std::vector<double>(4)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const auto a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng);
  const double err = gradient_error({a, b}, [](const auto& in) { return sum(matmul(in[0], in[1])); });
  EXPECT_LE(err, 1e-4);
}

TEST(Softmax, UniformRow) {
  const auto y = softmax_rows(T2(1, 3, {0, 0, 0}));
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeGapSaturatesWithoutOverflow) {
  const auto y = softmax_rows(T2(1, 2, {1000, 0}));
  EXPECT_NEAR(y.at(0), 1.0, 1e-12);
  EXPECT_NEAR(y.at(1), 0.0, 1e-12);
}

TEST(Softmax, MatchesLongDoubleReference) {
  const auto y = softmax_rows(T2(1, 3, {1, 2, 3}));
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), double(std::exp(static_cast<long double>(i + 1)) / z), 1e-15);
}

TEST(Softmax, NaNInputIsReported) {
  EXPECT_THROW(softmax_rows(T2(1, 2, {std::nan(""), 0})), NumericError);
}

TEST(Softmax, RowsSumToOneAndStayInUnitInterval) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor({4, 9}, rng, -30, 30);
    const auto y = softmax_rows(x, 0.7);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 9; ++c) {
        const double v = y.at(r * 9 + c);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Elementwise, SmallExamples) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor<double>::scalar(0)).item(), 0.5);
  const auto c = cosine_rows(T2(1, 2, {1, 0}), T2(3, 2, {1, 0, 0, 1, -1, 0}));
  EXPECT_DOUBLE_EQ(c.at(0), 1.0);
  EXPECT_DOUBLE_EQ(c.at(1), 0.0);
  EXPECT_DOUBLE_EQ(c.at(2), -1.0);
  const auto x = T2(1, 3, {0.3, -2, 5});
  EXPECT_DOUBLE_EQ(l2_distance(x, x).item(), 0.0);
}

TEST(Elementwise, CosineOfZeroVectorIsZero) {
  const auto c = cosine_rows(T2(1, 2, {0, 0}), T2(2, 2, {1, 0, 3, 4}));
  EXPECT_EQ(c.at(0), 0.0);
  EXPECT_EQ(c.at(1), 0.0);
  const auto d = cosine_rows(T2(1, 2, {1, 1}), T2(1, 2, {0, 0}));
  EXPECT_EQ(d.at(0), 0.0);
}

TEST(Elementwise, CosineStaysInRange) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_tensor({1, 7}, rng, -100, 100);
    const auto b = random_tensor({5, 7}, rng, -100, 100);
    const auto y = cosine_rows(a, b);
    for (double v : y.values()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Elementwise, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(add(T2(1, 2, {1, 2}), T2(2, 1, {1, 2})), DimensionError);
  EXPECT_THROW(mul(T2(1, 2, {1, 2}), T2(1, 3, {1, 2, 3})), DimensionError);
  EXPECT_THROW(cosine_rows(T2(1, 2, {1, 2}), T2(2, 3, std::vector<double>(6))), DimensionError);
  EXPECT_THROW(reshape(T2(2, 2, {1, 2, 3, 4}), Shape{3}), DimensionError);
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor<double>(Shape{3}, {1, 2, 3}).set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(sum(mul(x, x)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
}

TEST(Backward, SecondCallWithoutResetIsContractError) {
  auto x = Tensor<double>(Shape{2}, {1, 2}).set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto loss = sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ContractError);
  tape.reset();
  const auto again = sum(x);
  EXPECT_NO_THROW(tape.backward(again));
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = Tensor<double>(Shape{2}, {1, 2}).set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  EXPECT_THROW(tape.backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, RecordedTensorsAreImmutable) {
  auto x = Tensor<double>(Shape{2}, {1, 2}).set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_values(), ContractError);
}

TEST(Backward, LinearityOverSummedLosses) {
  std::mt19937_64 rng(21);
  auto a = random_tensor({3, 4}, rng).set_requires_grad(true);
  auto b = random_tensor({4, 2}, rng).set_requires_grad(true);
  auto f1 = [&] { return probe(gelu(matmul(a, b)), 1); };
  auto f2 = [&] { return sum(softplus(matmul(a, b))); };
  auto grads = [&](auto build) {
    a.zero_grad();
    b.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(build());
    return std::pair{std::vector<double>(a.grad().begin(), a.grad().end()),
                     std::vector<double>(b.grad().begin(), b.grad().end())};
  };
  const auto g1 = grads(f1), g2 = grads(f2);
  const auto g12 = grads([&] { return add(f1(), f2()); });
  for (std::size_t i = 0; i < g12.first.size(); ++i) EXPECT_NEAR(g12.first[i], g1.first[i] + g2.first[i], 1e-12);
  for (std::size_t i = 0; i < g12.second.size(); ++i) EXPECT_NEAR(g12.second[i], g1.second[i] + g2.second[i], 1e-12);
}

TEST(Backward, ReplayIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(8);
    auto a = random_tensor({5, 6}, rng).set_requires_grad(true);
    auto g = random_tensor({6}, rng), be = random_tensor({6}, rng);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const auto y = softmax_rows(layer_norm(a, g, be), 0.5);
    tape.backward(probe(y));
    return std::pair{std::vector<double>(y.values().begin(), y.values().end()),
                     std::vector<double>(a.grad().begin(), a.grad().end())};
  };
  EXPECT_EQ(run(), run());
}

// Every differentiable op against central differences at ten random points.
class OpGradient : public ::testing::TestWithParam<mst::testing::OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const mst::testing::OpCase& c = GetParam();
  for (std::uint64_t point = 0; point < 10; ++point) {
    std::mt19937_64 rng(1000 + point);
    std::vector<Tensor<double>> in;
    for (const auto& s : c.shapes) in.push_back(random_tensor(s, rng, c.lo, c.hi));
    EXPECT_LE(gradient_error(in, c.f), 1e-4) << c.name << " at point " << point;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(mst::testing::op_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(AdamW, ZeroGradientAndNoDecayLeavesParameters) {
  auto w = Tensor<double>(Shape{3}, {0.5, -1, 2}).set_requires_grad(true);
  w.raw()->grad_buffer();
  AdamW<double> opt({{"w", w, true}}, AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  EXPECT_EQ(std::vector<double>(w.values().begin(), w.values().end()), (std::vector<double>{0.5, -1, 2}));
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamW, SingleStepMatchesHandRolledUpdate) {
  auto w = Tensor<double>(Shape{1}, {1.0}).set_requires_grad(true);
  w.raw()->grad_buffer()[0] = 1.0;
  AdamW<double> opt({{"w", w, true}}, AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  // m = 0.1, v = 0.001; bias corrected m = 1, v = 1.
  const double expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(w.at(0), expected, 1e-15);
  EXPECT_NEAR(w.at(0), 0.9, 1e-8);
}

TEST(AdamW, DecayOnlyScalesParameter) {
  auto w = Tensor<double>(Shape{2}, {2.0, -4.0}).set_requires_grad(true);
  w.raw()->grad_buffer();
  AdamW<double> opt({{"w", w, true}}, AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.01});
  opt.step();
  EXPECT_NEAR(w.at(0), 2.0 * (1 - 0.1 * 0.01), 1e-15);
  EXPECT_NEAR(w.at(1), -4.0 * (1 - 0.1 * 0.01), 1e-15);
}

TEST(AdamW, MissingGradientIsContractError) {
  auto w = Tensor<double>(Shape{1}, {1.0}).set_requires_grad(true);
  AdamW<double> opt({{"w", w, true}}, AdamWOptions{});
  EXPECT_THROW(opt.step(), ContractError);
}

TEST(AdamW, StepCountStrictlyIncreases) {
  auto w = Tensor<float>(Shape{4}, {1, 2, 3, 4}).set_requires_grad(true);
  AdamW<float> opt({{"w", w, true}}, AdamWOptions{});
  for (int i = 1; i <= 5; ++i) {
    auto g = w.raw()->grad_buffer();
    std::fill(g.begin(), g.end(), 0.5f);
    opt.step();
    EXPECT_EQ(opt.step_count(), i);
    EXPECT_EQ(opt.first_moment(0).size(), w.numel());
  }
}
