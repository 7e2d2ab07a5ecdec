#include <benchmark/benchmark.h>

#include <random>

#include "mst/clicks.hpp"
#include "mst/fusion.hpp"
#include "mst/image_io.hpp"
#include "mst/model.hpp"
#include "mst/ops.hpp"
#include "mst/synthetic.hpp"
#include "mst/training.hpp"

using namespace mst;

namespace {

Tensor<float> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> v(r * c);
  for (auto& x : v) x = u(g);
  return Tensor<float>(Shape{r, c}, std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, 64, 1), b = random_matrix(64, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * std::int64_t(n * n * 64));
}
BENCHMARK(BM_Matmul)->Arg(49)->Arg(196)->Arg(784);

void BM_TopK(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  const auto s = random_matrix(1, l, 3);
  for (auto _ : state) benchmark::DoNotOptimize(topk<float>(s.values(), selection_count(l, 12)));
}
BENCHMARK(BM_TopK)->Arg(196)->Arg(3136);

void BM_Forward(benchmark::State& state) {
  const auto w = static_cast<std::size_t>(state.range(0));
  ModelConfig cfg = ModelConfig::desk();
  cfg.image_size = w;
  MstModel<float> model(cfg);
  const auto x = Tensor<float>::full(Shape{6, w, w}, 0.5f);
  const std::vector<Point> clicks{{int(w / 2), int(w / 2)}};
  NoGradScope<float> no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, clicks, FusionMode::Inference, nullptr));
}
BENCHMARK(BM_Forward)->Arg(112)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg = TrainConfig::desk();
  MstModel<float> model(cfg.model);
  Trainer trainer(cfg, model);
  const auto data = gen_synthetic(5, cfg.batch_size, cfg.model.image_size);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_batch(data));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_NextClick(benchmark::State& state) {
  const auto samples = gen_synthetic(6, 1, 112);
  const auto& gt = samples[0].mask;
  std::vector<std::uint8_t> pred(gt.data.size(), 0);
  for (std::size_t i = 0; i < pred.size(); i += 3) pred[i] = gt.data[i];
  for (auto _ : state) benchmark::DoNotOptimize(next_click(pred, gt.data, gt.width, gt.height));
}
BENCHMARK(BM_NextClick);

void BM_EncodeMaskPng(benchmark::State& state) {
  const auto samples = gen_synthetic(7, 1, 448);
  for (auto _ : state) benchmark::DoNotOptimize(encode_mask_png(samples[0].mask));
}
BENCHMARK(BM_EncodeMaskPng);

}  // namespace
BENCHMARK_MAIN();
