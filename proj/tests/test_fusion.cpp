#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mst/encoder.hpp"
#include "mst/fusion.hpp"
#include "support/gradcheck.hpp"

using namespace mst;
using mst::testing::random_tensor;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Full sort, take k, gather and scale.
std::vector<double> brute_force_select(const std::vector<double>& s, std::size_t k, const Tensor<double>& tokens,
                                       std::vector<std::size_t>* idx_out = nullptr) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  idx.resize(k);
  const std::size_t c = tokens.dim(1);
  std::vector<double> out;
  for (std::size_t i : idx)
    for (std::size_t j = 0; j < c; ++j) out.push_back(s[i] * tokens.at(i * c + j));
  if (idx_out) *idx_out = idx;
  return out;
}

}  // namespace

TEST(ClickKernel, SingleClickIsThatToken) {
  std::mt19937_64 g(1);
  const auto base = random_tensor({49, 8}, g);
  // Patch 7 on a 7 x 7 grid of 16 px patches: row 1, column 0.
  const std::vector<Point> clicks{{5, 20}};
  const auto k = compute_kernel(base, clicks, 16, 7);
  ASSERT_TRUE(k);
  EXPECT_EQ(k->indices, (std::vector<std::size_t>{7}));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_DOUBLE_EQ(k->vector.at(j), base.at(7 * 8 + j));
}

TEST(ClickKernel, TwoClicksAverage) {
  std::mt19937_64 g(2);
  const auto base = random_tensor({49, 8}, g);
  const std::vector<Point> clicks{{3 * 16 + 2, 1}, {1, 16 + 15}};
  const auto k = compute_kernel(base, clicks, 16, 7);
  ASSERT_TRUE(k);
  EXPECT_EQ(k->indices, (std::vector<std::size_t>{3, 7}));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(k->vector.at(j), (base.at(3 * 8 + j) + base.at(7 * 8 + j)) / 2, 1e-15);
}

TEST(ClickKernel, ClicksInOnePatchAreCountedOnce) {
  std::mt19937_64 g(3);
  const auto base = random_tensor({49, 4}, g);
  const std::vector<Point> clicks{{20, 20}, {21, 30}, {100, 100}};
  const auto k = compute_kernel(base, clicks, 16, 7);
  ASSERT_TRUE(k);
  EXPECT_EQ(k->indices.size(), 2u);
  const std::size_t a = 1 * 7 + 1, b = 6 * 7 + 6;
  for (std::size_t j = 0; j < 4; ++j) {
    const double dedup = (base.at(a * 4 + j) + base.at(b * 4 + j)) / 2;
    const double weighted = (2 * base.at(a * 4 + j) + base.at(b * 4 + j)) / 3;
    EXPECT_NEAR(k->vector.at(j), dedup, 1e-15);
    if (std::abs(dedup - weighted) > 1e-9) EXPECT_GT(std::abs(k->vector.at(j) - weighted), 1e-12);
  }
}

TEST(ClickKernel, NoPositiveClicksMeansNoKernel) {
  std::mt19937_64 g(4);
  EXPECT_FALSE(compute_kernel(random_tensor({49, 4}, g), std::span<const Point>{}, 16, 7));
}

TEST(ClickKernel, ClickOutsideImageIsContractError) {
  std::mt19937_64 g(5);
  const std::vector<Point> clicks{{112, 4}};
  EXPECT_THROW(compute_kernel(random_tensor({49, 4}, g), clicks, 16, 7), ContractError);
}

TEST(Similarity, ParallelOrthogonalAntiparallel) {
  const auto kernel = Tensor<double>(Shape{1, 2}, {2, 0});
  const auto tokens = Tensor<double>(Shape{3, 2}, {5, 0, 0, 3, -1, 0});
  const auto s = similarity_scores(kernel, tokens);
  EXPECT_NEAR(s.at(0), sigmoid_ref(1.0), 1e-15);
  EXPECT_NEAR(s.at(0), 0.7310585786300049, 1e-12);
  EXPECT_DOUBLE_EQ(s.at(1), 0.5);
  EXPECT_NEAR(s.at(2), 0.2689414213699951, 1e-12);
}

TEST(Similarity, RangeIsOpenSigmoidOfUnitInterval) {
  std::mt19937_64 g(6);
  for (int t = 0; t < 100; ++t) {
    const auto s = similarity_scores(random_tensor({1, 5}, g), random_tensor({20, 5}, g));
    for (double v : s.values()) {
      EXPECT_GE(v, sigmoid_ref(-1.0) - 1e-15);
      EXPECT_LE(v, sigmoid_ref(1.0) + 1e-15);
    }
  }
}

TEST(TopK, Examples) {
  const std::vector<double> s{0.9, 0.1, 0.5, 0.7};
  const auto r = topk<double>(s, 2);
  EXPECT_EQ(r.scores, (std::vector<double>{0.9, 0.7}));
  EXPECT_EQ(r.indices, (std::vector<std::size_t>{0, 3}));
  const std::vector<double> eq(5, 0.3);
  EXPECT_EQ(topk<double>(eq, 2).indices, (std::vector<std::size_t>{0, 1}));
  const auto all = topk<double>(s, 4);
  EXPECT_EQ(all.indices, (std::vector<std::size_t>{0, 3, 2, 1}));
}

TEST(TopK, OutOfRangeIsContractError) {
  const std::vector<double> s{0.1, 0.2};
  EXPECT_THROW(topk<double>(s, 0), ContractError);
  EXPECT_THROW(topk<double>(s, 3), ContractError);
}

TEST(Selection, UnitAndHalfScore) {
  std::mt19937_64 g(7);
  const auto tokens = random_tensor({4, 3}, g);
  const std::vector<std::size_t> two{2}, zero{0};
  const auto a = select(build_selection(Tensor<double>(Shape{1}, {1.0}), std::span<const std::size_t>(two), 4), tokens);
  const auto b = select(build_selection(Tensor<double>(Shape{1}, {0.5}), std::span<const std::size_t>(zero), 4), tokens);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(a.at(j), tokens.at(2 * 3 + j));
    EXPECT_DOUBLE_EQ(b.at(j), 0.5 * tokens.at(j));
  }
}

TEST(Selection, RowsHaveOneScoreValuedEntry) {
  const std::vector<std::size_t> idx{3, 1};
  const auto s = build_selection(Tensor<double>(Shape{2}, {0.6, 0.4}), std::span<const std::size_t>(idx), 5);
  ASSERT_EQ(s.shape(), (Shape{2, 5}));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      const double v = s.at(r * 5 + c);
      if (c == idx[r]) EXPECT_DOUBLE_EQ(v, r == 0 ? 0.6 : 0.4);
      else EXPECT_EQ(v, 0.0);
    }
}

TEST(Selection, DuplicateIndicesAreContractError) {
  const std::vector<std::size_t> idx{1, 1};
  EXPECT_THROW(build_selection(Tensor<double>(Shape{2}, {0.5, 0.5}), std::span<const std::size_t>(idx), 3), ContractError);
  const std::vector<std::size_t> far{4};
  EXPECT_THROW(build_selection(Tensor<double>(Shape{1}, {0.5}), std::span<const std::size_t>(far), 3), ContractError);
}

TEST(Selection, MatchesSortGatherScaleOnRandomCases) {
  std::mt19937_64 g(8);
  std::uniform_int_distribution<std::size_t> len(1, 60), dim(1, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t l = len(g), c = dim(g);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, l)(g);
    auto scores = random_tensor({l}, g, 0, 1);
    if (trial % 5 == 0) {  // coarse values force ties
      auto v = scores.mutable_values();
      for (auto& x : v) x = std::round(x * 4) / 4;
    }
    const auto tokens = random_tensor({l, c}, g);
    const auto best = topk<double>(scores.values(), k);
    const auto s = build_selection(gather_rows(scores, std::span<const std::size_t>(best.indices)),
                                   std::span<const std::size_t>(best.indices), l);
    const auto got = select(s, tokens);
    std::vector<std::size_t> ref_idx;
    const auto want = brute_force_select({scores.values().begin(), scores.values().end()}, k, tokens, &ref_idx);
    ASSERT_EQ(best.indices, ref_idx) << "trial " << trial;
    ASSERT_EQ(std::vector<double>(got.values().begin(), got.values().end()), want) << "trial " << trial;
  }
}

TEST(Selection, GradientIsNonzeroExactlyOnSelectedRowsAndScores) {
  std::mt19937_64 g(9);
  auto tokens = random_tensor({8, 3}, g).set_requires_grad(true);
  auto scores = random_tensor({8}, g, 0.3, 0.7).set_requires_grad(true);
  const auto best = topk<double>(scores.values(), 3);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const auto top = gather_rows(scores, std::span<const std::size_t>(best.indices));
    tape.backward(sum(select(build_selection(top, std::span<const std::size_t>(best.indices), 8), tokens)));
  }
  for (std::size_t r = 0; r < 8; ++r) {
    const bool chosen = std::find(best.indices.begin(), best.indices.end(), r) != best.indices.end();
    double row = 0;
    for (std::size_t j = 0; j < 3; ++j) row += std::abs(tokens.grad()[r * 3 + j]);
    EXPECT_EQ(row > 0, chosen) << r;
    EXPECT_EQ(scores.grad()[r] != 0, chosen) << r;
  }
  // Values agree with finite differences away from ties.
  const double err = mst::testing::gradient_error({tokens.detach(), scores.detach()}, [&](const auto& in) {
    const auto top = gather_rows(in[1], std::span<const std::size_t>(best.indices));
    return sum(select(build_selection(top, std::span<const std::size_t>(best.indices), 8), in[0]));
  });
  EXPECT_LE(err, 1e-4);
}

TEST(Selection, CountIsTwelfthOfLengthAtLeastOne) {
  EXPECT_EQ(selection_count(196, 12), 16u);
  EXPECT_EQ(selection_count(16, 12), 1u);
  EXPECT_EQ(selection_count(3136, 12), 261u);
  EXPECT_EQ(selection_count(256, 12), 21u);
  EXPECT_EQ(selection_count(5, 12), 1u);
}

TEST(ChooseScale, InferenceArgmaxWithTiesToTiny) {
  EXPECT_EQ(choose_scale(0.7, 0.5, FusionMode::Inference, nullptr), Scale::Tiny);
  EXPECT_EQ(choose_scale(0.5, 0.7, FusionMode::Inference, nullptr), Scale::Large);
  EXPECT_EQ(choose_scale(0.6, 0.6, FusionMode::Inference, nullptr), Scale::Tiny);
}

TEST(ChooseScale, InferenceInvariantUnderMonotoneTransform) {
  std::mt19937_64 g(10);
  std::uniform_real_distribution<double> u(0.27, 0.73);
  for (int i = 0; i < 500; ++i) {
    const double a = u(g), b = u(g);
    auto f = [](double x) { return std::exp(5 * x) - 3; };
    EXPECT_EQ(choose_scale(a, b, FusionMode::Inference, nullptr), choose_scale(f(a), f(b), FusionMode::Inference, nullptr));
  }
}

TEST(ChooseScale, TrainingIsReproducibleUnderSeed) {
  auto draw = [](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Scale> out;
    for (int i = 0; i < 64; ++i) out.push_back(choose_scale(0.9, 0.1, FusionMode::Training, &rng));
    return out;
  };
  const auto a = draw(42);
  EXPECT_EQ(a, draw(42));
  EXPECT_GT(std::count(a.begin(), a.end(), Scale::Large), 10);
  EXPECT_GT(std::count(a.begin(), a.end(), Scale::Tiny), 10);
}

TEST(CrossAttention, SingleSelectedTokenGetsFullWeight) {
  ParameterStore<double> store;
  Rng rng(11);
  const auto fuse = CrossAttentionFuse<double>::create(store, "f", 8, 2, rng);
  std::mt19937_64 g(12);
  const auto base = random_tensor({6, 8}, g), sel = random_tensor({1, 8}, g);
  std::vector<Tensor<double>> attn;
  const auto out = fuse(base, sel, &attn);
  for (const auto& a : attn)
    for (double v : a.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  // Every base row receives the same projected value vector.
  const auto v = fuse.attn.out(fuse.attn.value(sel));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.at(r * 8 + j), base.at(r * 8 + j) + v.at(j), 1e-12);
}

TEST(CrossAttention, ZeroSelectionWithZeroBiasIsIdentity) {
  ParameterStore<double> store;
  Rng rng(13);
  const auto fuse = CrossAttentionFuse<double>::create(store, "f", 8, 2, rng);
  std::mt19937_64 g(14);
  const auto base = random_tensor({6, 8}, g);
  const auto out = fuse(base, Tensor<double>::zeros(Shape{3, 8}));
  for (std::size_t i = 0; i < base.numel(); ++i) EXPECT_DOUBLE_EQ(out.at(i), base.at(i));
  const auto empty = fuse(base, Tensor<double>::zeros(Shape{0, 8}));
  EXPECT_EQ(empty.raw(), base.raw());
}

TEST(CrossAttention, AttentionRowsSumToOne) {
  ParameterStore<double> store;
  Rng rng(15);
  const auto fuse = CrossAttentionFuse<double>::create(store, "f", 8, 4, rng);
  std::mt19937_64 g(16);
  std::vector<Tensor<double>> attn;
  fuse(random_tensor({10, 8}, g), random_tensor({4, 8}, g, -3, 3), &attn);
  for (const auto& a : attn)
    for (std::size_t r = 0; r < 10; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) s += a.at(r * 4 + c);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(ScaledCrossAttention, RatioOneIsPlainCrossAttention) {
  ParameterStore<double> store;
  Rng rng(17);
  const auto upd = ScaledCrossAttention<double>::create(store, "s", 8, 2, rng);
  std::mt19937_64 g(18);
  const auto stream = random_tensor({16, 8}, g), base = random_tensor({49, 8}, g);
  const auto out = upd(stream, base, 7, 1);
  const auto ref = add(stream, upd.attn(upd.query_norm(stream), upd.kv_norm(base)));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_DOUBLE_EQ(out.at(i), ref.at(i));
}

TEST(ScaledCrossAttention, FullRatioPoolsToTheMean) {
  const auto pool = average_pool_matrix<double>(7, 7);
  std::mt19937_64 g(19);
  const auto base = random_tensor({49, 5}, g);
  const auto pooled = matmul(pool, base);
  const auto ref = mean_axis(base, 0);
  ASSERT_EQ(pooled.shape(), (Shape{1, 5}));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(pooled.at(j), ref.at(j), 1e-14);
}

TEST(ScaledCrossAttention, ConstantBaseIsRatioIndependent) {
  ParameterStore<double> store;
  Rng rng(20);
  const auto upd = ScaledCrossAttention<double>::create(store, "s", 4, 2, rng);
  std::mt19937_64 g(21);
  const auto stream = random_tensor({9, 4}, g);
  std::vector<double> row{0.3, -0.2, 0.9, 0.1}, v;
  for (int i = 0; i < 36; ++i) v.insert(v.end(), row.begin(), row.end());
  const auto base = Tensor<double>(Shape{36, 4}, v);
  const auto a = upd(stream, base, 6, 1), b = upd(stream, base, 6, 2), c = upd(stream, base, 6, 3);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
    EXPECT_NEAR(a.at(i), c.at(i), 1e-12);
  }
}

TEST(ScaledCrossAttention, NonDividingRatioIsContractError) {
  ParameterStore<double> store;
  Rng rng(22);
  const auto upd = ScaledCrossAttention<double>::create(store, "s", 4, 2, rng);
  EXPECT_THROW(upd(Tensor<double>::zeros(Shape{4, 4}), Tensor<double>::zeros(Shape{49, 4}), 7, 2), ContractError);
  EXPECT_THROW(average_pool_matrix<double>(7, 2), ContractError);
}

namespace {

struct DeskStreams {
  MstStreams<double> s;
  MstBlock<double> block;
  ParameterStore<double> store;
};

MstStreams<double> random_streams(std::mt19937_64& g, std::size_t c = 64) {
  return {random_tensor({49, c}, g), random_tensor({196, c}, g), random_tensor({16, c}, g)};
}

}  // namespace

TEST(MstBlock, NoPositiveClicksIsIdentity) {
  ParameterStore<double> store;
  Rng rng(23);
  const auto block = MstBlock<double>::create(store, "m", 64, 4, rng);
  std::mt19937_64 g(24);
  const auto in = random_streams(g);
  MstTrace<double> trace;
  const auto out = block(in, std::span<const Point>{}, MstGeometry{}, FusionMode::Inference, nullptr, &trace);
  EXPECT_EQ(out.base.raw(), in.base.raw());
  EXPECT_EQ(out.tiny.raw(), in.tiny.raw());
  EXPECT_EQ(out.large.raw(), in.large.raw());
  EXPECT_FALSE(trace.fused);
}

TEST(MstBlock, DeskShapesPreserved) {
  ParameterStore<float> store;
  Rng rng(25);
  const auto block = MstBlock<float>::create(store, "m", 64, 4, rng);
  const MstStreams<float> in{Tensor<float>::full(Shape{49, 64}, 0.1f), Tensor<float>::full(Shape{196, 64}, 0.2f),
                             Tensor<float>::full(Shape{16, 64}, 0.3f)};
  const std::vector<Point> clicks{{30, 30}};
  MstTrace<float> trace;
  const auto out = block(in, clicks, MstGeometry{}, FusionMode::Inference, nullptr, &trace);
  EXPECT_EQ(out.base.shape(), (Shape{49, 64}));
  EXPECT_EQ(out.tiny.shape(), (Shape{196, 64}));
  EXPECT_EQ(out.large.shape(), (Shape{16, 64}));
  ASSERT_TRUE(trace.tiny && trace.large);
  EXPECT_EQ(trace.tiny->indices.size(), 16u);
  EXPECT_EQ(trace.large->indices.size(), 1u);
}

TEST(MstBlock, GradientReachesTinyStreamThroughScores) {
  ParameterStore<double> store;
  Rng rng(26);
  const auto block = MstBlock<double>::create(store, "m", 64, 4, rng);
  std::mt19937_64 g(27);
  auto in = random_streams(g);
  const std::vector<Point> clicks{{40, 70}};
  // Make the tiny scale win in inference so the fused path runs through it.
  MstTrace<double> trace;
  block(in, clicks, MstGeometry{}, FusionMode::Inference, nullptr, &trace);
  ASSERT_TRUE(trace.tiny);
  auto f = [&] {
    return mst::testing::probe(block({in.base, in.tiny, in.large}, clicks, MstGeometry{}, FusionMode::Inference, nullptr).base);
  };
  // Only the fused stream matters for the base output; pick it.
  auto& chosen = trace.chosen == Scale::Tiny ? in.tiny : in.large;
  EXPECT_LE(mst::testing::directional_error({chosen, in.base}, f, 28), 1e-4);
  // The selected rows of the chosen stream carry gradient, the others none.
  const auto& sel = trace.chosen == Scale::Tiny ? trace.tiny->indices : trace.large->indices;
  ASSERT_TRUE(chosen.has_grad());
  for (std::size_t r = 0; r < chosen.dim(0); ++r) {
    double row = 0;
    for (std::size_t j = 0; j < 64; ++j) row += std::abs(chosen.grad()[r * 64 + j]);
    const bool picked = std::find(sel.begin(), sel.end(), r) != sel.end();
    if (picked) EXPECT_GT(row, 0.0) << r;
  }
}
