// Copyright 2026 The avfm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Micro-benchmarks for the hot paths: dense products, a full training step,
// metric computation and one synthesis attempt.

#include <benchmark/benchmark.h>

#include "avfm/backbone.hpp"
#include "avfm/datagen.hpp"
#include "avfm/heads.hpp"
#include "avfm/losses.hpp"
#include "avfm/metrics.hpp"
#include "avfm/rng.hpp"
#include "avfm/vocabulary.hpp"

namespace {

using namespace avfm;

Tensor random(Shape shape, Rng& rng) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random({n, n}, rng), b = random({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_ForwardBackward(benchmark::State& state) {
  const BackboneConfig cfg;
  ModelState model = ModelState::create(cfg, "qv_proj", 1, 2);
  Rng rng(3);
  const Tensor image = random({3, cfg.image_size, cfg.image_size}, rng);
  const Tensor mask = Tensor::zeros({cfg.image_size, cfg.image_size});
  for (auto _ : state) {
    GradTape tape;
    Tensor loss;
    {
      GradTape::Recording rec(tape);
      loss = total_loss(forward_model(image, model), mask, 0, LossConfig{}).value;
    }
    backward(tape, loss);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_Auroc(benchmark::State& state) {
  Rng rng(4);
  ScoredSet s;
  for (std::int64_t i = 0; i < state.range(0); ++i) s.add(rng.uniform(), rng.bernoulli(0.1) ? 1 : 0);
  for (auto _ : state) benchmark::DoNotOptimize(auroc(s));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auroc)->Arg(1 << 12)->Arg(1 << 18);

void BM_GenerateTriplet(benchmark::State& state) {
  const Vocabulary& vocab = Vocabulary::builtin();
  const BackboneState bb = BackboneState::init(BackboneConfig{}, 5);
  const FeatureExtractor ex = FeatureExtractor::from_backbone(bb);
  const GeneratorConfig gen;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_triplet(seed++, vocab.objects, vocab, gen, ex));
}
BENCHMARK(BM_GenerateTriplet)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
