#include <benchmark/benchmark.h>

#include "metaaug/learner.hpp"
#include "metaaug/metamaxup.hpp"

namespace {

using namespace metaaug;

const FewShotDataset& dataset() {
  static const FewShotDataset ds = generate_synthetic({16, 5, 5, 40, 3, 32, 32, 7});
  return ds;
}

Episode episode(int shot) {
  const auto& ds = dataset();
  const ClassPool pool = build_class_pool(ds, Split::train, std::nullopt, RngStream(1, 0, 0, Purpose::class_pool));
  return sample_episode(ds, pool, {5, shot, 15, Split::train, true}, RngStream(1, 0, 0, Purpose::episode));
}

void BM_SampleEpisode(benchmark::State& state) {
  const auto& ds = dataset();
  const ClassPool pool = build_class_pool(ds, Split::train, std::nullopt, RngStream(1, 0, 0, Purpose::class_pool));
  std::uint64_t i = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(sample_episode(ds, pool, {5, 1, 15, Split::train, true}, RngStream(1, 0, i++, Purpose::episode)));
}
BENCHMARK(BM_SampleEpisode);

void BM_CutMix(benchmark::State& state) {
  const Image a(Geometry{3, 32, 32}, 10.0f), b(Geometry{3, 32, 32}, 200.0f);
  const SoftLabel la = SoftLabel::one_hot(5, 0), lb = SoftLabel::one_hot(5, 1);
  RngStream rng(1, 0, 0, Purpose::augment);
  for (auto _ : state) benchmark::DoNotOptimize(cutmix(a, la, b, lb, rng));
}
BENCHMARK(BM_CutMix);

void BM_LossAndGrad(benchmark::State& state) {
  const HeadConfig head{state.range(0) ? HeadKind::ridge : HeadKind::prototype, 1.0};
  const ArchConfig arch{{3, 32, 32}, {8, 16, 32, 32}};
  const auto params = ModelParams<float>::initialize(arch, RngStream(1, 0, 0, Purpose::init));
  const Episode ep = episode(static_cast<int>(state.range(1)));
  for (auto _ : state)
    benchmark::DoNotOptimize(loss_and_grad(params, head, ep, dataset().stats(), RngStream(1, 0, 0, Purpose::feature_mixup)));
}
BENCHMARK(BM_LossAndGrad)->ArgsProduct({{0, 1}, {1, 5}})->Unit(benchmark::kMillisecond);

void BM_EpisodeLoss(benchmark::State& state) {
  const ArchConfig arch{{3, 32, 32}, {8, 16, 32, 32}};
  const auto params = ModelParams<float>::initialize(arch, RngStream(1, 0, 0, Purpose::init));
  const Episode ep = episode(1);
  for (auto _ : state)
    benchmark::DoNotOptimize(episode_loss(params, HeadConfig{}, ep, dataset().stats(), RngStream(1, 0, 0, Purpose::feature_mixup)));
}
BENCHMARK(BM_EpisodeLoss)->Unit(benchmark::kMillisecond);

void BM_RidgeHead(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  MatrixX<double> x = MatrixX<double>::Random(rows, 128), y = MatrixX<double>::Zero(rows, 5);
  for (int i = 0; i < rows; ++i) y(i, i % 5) = 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(head_fit(HeadConfig{HeadKind::ridge, 1.0}, x, y));
}
BENCHMARK(BM_RidgeHead)->Arg(5)->Arg(25)->Arg(50);

}  // namespace

BENCHMARK_MAIN();
