#include <benchmark/benchmark.h>

#include <random>

#include "npshape/analyze.hpp"
#include "npshape/classify.hpp"
#include "npshape/embed.hpp"
#include "npshape/mask_io.hpp"
#include "npshape/preprocess.hpp"
#include "npshape/synth.hpp"

using namespace npshape;

namespace {

BinaryMask disc_mask(int side) {
  BinaryMask m(side, side);
  const double c = side / 2.0, r = side / 3.0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      if ((y + 0.5 - c) * (y + 0.5 - c) + (x + 0.5 - c) * (x + 0.5 - c) <= r * r) m(y, x) = 1;
  return m;
}

embed::EmbeddingMatrix random_embeddings(std::size_t n, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  embed::EmbeddingMatrix m;
  m.dim = dim;
  for (std::size_t i = 0; i < n; ++i) m.ids.push_back("r" + std::to_string(i));
  m.values.resize(n * static_cast<std::size_t>(dim));
  for (auto& v : m.values) v = g(rng);
  return m;
}

void BM_BboxFromMask(benchmark::State& state) {
  const auto mask = disc_mask(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mask_io::bbox_from_mask(mask));
}
BENCHMARK(BM_BboxFromMask)->Arg(6)->Arg(256)->Arg(1024);

void BM_RleRoundTrip(benchmark::State& state) {
  const auto mask = disc_mask(512);
  for (auto _ : state) {
    const auto counts = mask_io::rle_encode(mask);
    benchmark::DoNotOptimize(mask_io::rle_decode(512, 512, counts));
  }
}
BENCHMARK(BM_RleRoundTrip);

void BM_ToyDescriptor(benchmark::State& state) {
  const auto raster = disc_mask(224);
  GrayImage img(224, 224);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = raster.pixels()[i] ? 200 : 0;
  for (auto _ : state) benchmark::DoNotOptimize(embed::toy_descriptor(img));
}
BENCHMARK(BM_ToyDescriptor);

void BM_Silhouette(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = analyze::to_matrix(random_embeddings(n, 64, 1));
  std::vector<std::string> y;
  for (std::size_t i = 0; i < n; ++i) y.push_back(std::to_string(i % 3));
  for (auto _ : state) benchmark::DoNotOptimize(analyze::silhouette(x, y));
}
BENCHMARK(BM_Silhouette)->Arg(100)->Arg(400);

void BM_TrainLogreg(benchmark::State& state) {
  classify::LabeledDataset train;
  train.x = random_embeddings(30, 768, 2);
  for (std::size_t i = 0; i < 30; ++i) train.y.push_back(i % 2 ? "cube" : "pyramid");
  for (auto _ : state) benchmark::DoNotOptimize(classify::train_lr_only(train));
}
BENCHMARK(BM_TrainLogreg)->Unit(benchmark::kMillisecond);

void BM_GenerateScene(benchmark::State& state) {
  synth::SynthSpec spec;
  spec.counts = {{synth::ShapeClass::cube, 6}, {synth::ShapeClass::triangle, 6}};
  for (auto _ : state) benchmark::DoNotOptimize(synth::generate_scene(spec));
}
BENCHMARK(BM_GenerateScene)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
