#include <benchmark/benchmark.h>

#include <random>

#include "tcnet/dataset.hpp"
#include "tcnet/features.hpp"
#include "tcnet/forest.hpp"
#include "tcnet/model.hpp"
#include "tcnet/train.hpp"

using namespace tcnet;

namespace {

Tensor random_blocks(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> vals(shape_numel(shape));
  for (auto& v : vals) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(vals));
}

void BM_extract_hard(benchmark::State& state) {
  Tensor blocks = random_blocks({8, 4, 32, 3}, 1);
  ExtractorParams params = ExtractorParams::defaults();
  for (auto _ : state) benchmark::DoNotOptimize(extract_all(blocks, params, Mode::Hard));
}
BENCHMARK(BM_extract_hard);

void BM_extract_soft(benchmark::State& state) {
  Tensor blocks = random_blocks({8, 4, 32, 3}, 1);
  ExtractorParams params = ExtractorParams::defaults();
  for (auto _ : state) benchmark::DoNotOptimize(extract_all(blocks, params, Mode::Soft));
}
BENCHMARK(BM_extract_soft);

void BM_dft_magnitude(benchmark::State& state) {
  Tensor sig = random_blocks({std::size_t(state.range(0))}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(dft_magnitude(sig));
}
BENCHMARK(BM_dft_magnitude)->Arg(32)->Arg(128)->Arg(256);

void BM_forward_tiny(benchmark::State& state) {
  Preset tiny = find_preset("tiny");
  TcnetModel model(tiny.model, 3);
  Tensor x = random_blocks({std::size_t(state.range(0)), 3, 128}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
}
BENCHMARK(BM_forward_tiny)->Arg(1)->Arg(16);

void BM_forward_backward_tiny(benchmark::State& state) {
  Preset tiny = find_preset("tiny");
  TcnetModel model(tiny.model, 3);
  Tensor x = random_blocks({16, 3, 128}, 5);
  std::vector<int> labels(16, 1);
  for (auto _ : state) {
    auto out = model.forward(x);
    LossParts loss = total_loss(out.logits, labels, out.bundles, 1e-4, 1e-4);
    backward(loss.total);
    for (auto& [name, p] : model.params().items) p.zero_grad();
  }
}
BENCHMARK(BM_forward_backward_tiny);

void BM_compact_forward(benchmark::State& state) {
  CompactConfig cc;
  cc.window_len = 64;
  CompactTcnet model(cc, 7);
  Tensor x = random_blocks({std::size_t(state.range(0)), 3, 64}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
}
BENCHMARK(BM_compact_forward)->Arg(32)->Arg(256);

void BM_rf_fit(benchmark::State& state) {
  WindowedDataset data = synth_generate(3, 60, 3, 128, 50.0, 3);
  ExtractorParams params = ExtractorParams::defaults();
  FeatureMatrix fm = extract_rf_features(data, {32, 128}, params);
  std::vector<int> labels(data.labels.begin(), data.labels.end());
  ForestConfig cfg;
  cfg.n_trees = std::size_t(state.range(0));
  cfg.max_depth = 20;
  cfg.seed = 1;
  for (auto _ : state) benchmark::DoNotOptimize(fit_forest(fm, labels, cfg));
}
BENCHMARK(BM_rf_fit)->Arg(10)->Arg(50);

}  // namespace

BENCHMARK_MAIN();
