#include <benchmark/benchmark.h>

#include "m2mrf/fusion_net.hpp"
#include "m2mrf/ops.hpp"
#include "m2mrf/rf_operators.hpp"

namespace {

using namespace m2mrf;

M2MRFConfig table_config(int64_t channels) {
  M2MRFConfig cfg;  // S=8, r=4, alpha=64
  cfg.channels = channels;
  return cfg;
}

void BM_M2MRFOneStepDown(benchmark::State& state) {
  Rng rng(0);
  auto op = build_one_step(Direction::Down, 1, table_config(32), rng);
  Tensor x = Tensor::rand_uniform({64, 64, 32}, rng, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(op->apply(nullptr, x));
}
BENCHMARK(BM_M2MRFOneStepDown);

void BM_M2MRFOneStepUp(benchmark::State& state) {
  Rng rng(0);
  auto op = build_one_step(Direction::Up, 1, table_config(32), rng);
  Tensor x = Tensor::rand_uniform({32, 32, 32}, rng, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(op->apply(nullptr, x));
}
BENCHMARK(BM_M2MRFOneStepUp);

void BM_M2MRFCascadeDownT2(benchmark::State& state) {
  Rng rng(0);
  auto op = build_cascade(Direction::Down, 2, table_config(32), rng);
  Tensor x = Tensor::rand_uniform({64, 64, 32}, rng, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(op->apply(nullptr, x));
}
BENCHMARK(BM_M2MRFCascadeDownT2);

void BM_StrideConvDownT2(benchmark::State& state) {
  Rng rng(0);
  auto op = build_baseline(RFKind::StrideConv, Direction::Down, 2, 32, rng);
  Tensor x = Tensor::rand_uniform({64, 64, 32}, rng, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(op->apply(nullptr, x));
}
BENCHMARK(BM_StrideConvDownT2);

void BM_BilinearUpT2(benchmark::State& state) {
  Rng rng(0);
  auto op = build_baseline(RFKind::Bilinear, Direction::Up, 2, 32, rng);
  Tensor x = Tensor::rand_uniform({16, 16, 32}, rng, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(op->apply(nullptr, x));
}
BENCHMARK(BM_BilinearUpT2);

void BM_Conv2D3x3(benchmark::State& state) {
  Rng rng(0);
  Tensor x = Tensor::rand_uniform({64, 64, 16}, rng, -1.0, 1.0);
  Tensor k = Tensor::rand_uniform({3, 3, 16, 16}, rng, -0.1, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, k, 1, 1));
}
BENCHMARK(BM_Conv2D3x3);

void BM_NetForward64(benchmark::State& state) {
  NetConfig cfg;
  MiniFusionNet net(cfg, 0);
  Rng rng(1);
  Tensor x = Tensor::rand_uniform({64, 64, 3}, rng, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(nullptr, x));
}
BENCHMARK(BM_NetForward64);

void BM_TrainIteration64(benchmark::State& state) {
  NetConfig cfg;
  MiniFusionNet net(cfg, 0);
  std::vector<Sample> data = generate_dataset(4, 64, 64, default_lesion_specs(), 0);
  TrainOptions opt;
  opt.batch = 4;
  opt.iters = 1;
  uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train(net, data, opt, seed++));
}
BENCHMARK(BM_TrainIteration64);

}  // namespace

BENCHMARK_MAIN();
