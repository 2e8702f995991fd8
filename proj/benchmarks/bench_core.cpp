#include <benchmark/benchmark.h>

#include "alike/backbone.hpp"
#include "alike/detect.hpp"
#include "alike/losses.hpp"
#include "alike/matching.hpp"
#include "alike/trainer.hpp"

using namespace alike;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.values()) v = float(rng.uniform(-1, 1));
  return t;
}

void BM_Conv2d3x3(benchmark::State& state) {
  const int c = int(state.range(0)), s = int(state.range(1));
  const auto x = random_tensor({1, c, s, s}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  const auto b = random_tensor({c}, 3);
  for (auto _ : state) {
    Graph<float> g;
    benchmark::DoNotOptimize(ops::conv2d(g.constant(x), g.constant(w), g.constant(b), 1, 1).value().data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(c) * c * 9 * s * s);
}
BENCHMARK(BM_Conv2d3x3)->Args({8, 96})->Args({32, 96})->Args({64, 64})->Unit(benchmark::kMillisecond);

void BM_ModelInfer(benchmark::State& state) {
  const auto names = ModelConfig::preset_names();
  Model<float> model(ModelConfig::preset(names[std::size_t(state.range(0))]), 0);
  const int h = int(state.range(1)), w = int(state.range(2));
  const auto img = random_tensor({1, 3, h, w}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.infer(img).score_map.data());
  state.SetLabel(names[std::size_t(state.range(0))]);
}
BENCHMARK(BM_ModelInfer)->Args({0, 96, 96})->Args({0, 480, 640})->Args({2, 480, 640})->Unit(benchmark::kMillisecond);

void BM_DetectKeypoints(benchmark::State& state) {
  Tensor<float> map = random_tensor({480, 640}, 5);
  for (auto& v : map.values()) v = 0.5f * (v + 1.0f);
  const DetectorConfig det;
  for (auto _ : state) benchmark::DoNotOptimize(detect_keypoints(map, det).size());
}
BENCHMARK(BM_DetectKeypoints)->Unit(benchmark::kMillisecond);

void BM_NreSum(benchmark::State& state) {
  const int k = int(state.range(0));
  const auto sim = random_tensor({k, 96 * 96}, 6);
  Rng rng(7);
  std::vector<ReprojectionProbability> q;
  for (int i = 0; i < k; ++i) q.push_back(reprojection_probability(Point2{rng.uniform(0, 95), rng.uniform(0, 95)}, 96, 96));
  for (auto _ : state) {
    Graph<float> g;
    auto s = g.variable(sim);
    auto loss = nre_sum(s, q, 0.02, 0.0);
    g.backward(loss);
    auto grad = g.grad(s);
    benchmark::DoNotOptimize(grad.data());
  }
}
BENCHMARK(BM_NreSum)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_MutualMatch(benchmark::State& state) {
  const int k = int(state.range(0));
  auto a = random_tensor({k, 128}, 8), b = random_tensor({k, 128}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(mutual_match(a, b).size());
}
BENCHMARK(BM_MutualMatch)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_TrainingPair(benchmark::State& state) {
  TrainConfig cfg;
  cfg.top_k_train = int(state.range(0));
  cfg.n_random = int(state.range(0));
  Model<float> model(ModelConfig::preset("tiny"), 0);
  std::uint64_t i = 0;
  for (auto _ : state) {
    model.zero_grad();
    benchmark::DoNotOptimize(accumulate_pair(model, training_pair_seed(cfg, i++), cfg, 1.0).total);
  }
}
BENCHMARK(BM_TrainingPair)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
