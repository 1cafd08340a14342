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

#include "avfm/protocol.hpp"

#include <chrono>
#include <cmath>

#include "avfm/errors.hpp"
#include "avfm/rng.hpp"

namespace avfm {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Tensor changed_pixel_mask(const Tensor& normal, const Tensor& anomalous) {
  if (normal.shape() != anomalous.shape() || normal.rank() != 3)
    throw DimensionError("changed_pixel_mask: expected matching [3xHxW] images, got " +
                         shape_str(normal.shape()) + " and " + shape_str(anomalous.shape()));
  const std::size_t h = normal.dim(1), w = normal.dim(2), hw = h * w;
  std::vector<double> m(hw, 0.0);
  for (std::size_t c = 0; c < normal.dim(0); ++c)
    for (std::size_t i = 0; i < hw; ++i)
      if (std::fabs(anomalous[c * hw + i] - normal[c * hw + i]) >= 0.5 / 255.0) m[i] = 1.0;
  return Tensor({h, w}, std::move(m));
}

std::vector<EvalSample> eval_samples_from(const Dataset& d) {
  std::vector<EvalSample> out;
  out.reserve(2 * d.samples.size());
  for (const SampleTriplet& t : d.samples)
    out.push_back({t.id, t.object_tag, 0, t.normal, Tensor::zeros(t.mask.shape())});
  for (const SampleTriplet& t : d.samples)
    out.push_back({d.samples.size() + t.id, t.object_tag, 1, t.anomalous,
                   changed_pixel_mask(t.normal, t.anomalous)});
  return out;
}

ProtocolRun run_protocol(const ProtocolConfig& cfg, const StepCallback& on_step) {
  const Vocabulary& vocab = Vocabulary::builtin();
  ProtocolRun run;
  run.split = ClassSplit::draw(vocab, cfg.train_tags, cfg.eval_tags, mix_seed(cfg.seed, 1));
  run.init = ModelState::create(cfg.backbone, cfg.plan, mix_seed(cfg.seed, 0),
                                mix_seed(cfg.seed, 4));

  auto t0 = std::chrono::steady_clock::now();
  const FeatureExtractor extractor = FeatureExtractor::from_backbone(run.init.backbone);
  run.train_set = generate_dataset(cfg.n_train, vocab, run.split.train, cfg.train_data, extractor,
                                   mix_seed(cfg.seed, 2));
  run.eval_set = generate_dataset(cfg.n_eval, vocab, run.split.eval, cfg.eval_data, extractor,
                                  mix_seed(cfg.seed, 3));
  check_no_leakage(run.train_set, run.split.eval);
  run.generate_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  TrainConfig train = cfg.train;
  train.seed = mix_seed(cfg.seed, 5);
  run.trained = train_zero_shot(run.init, run.train_set, train, on_step);
  run.train_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const std::vector<EvalSample> samples = eval_samples_from(run.eval_set);
  run.baseline = evaluate_dataset(run.init, samples, cfg.eval);
  run.result = evaluate_dataset(run.trained.model, samples, cfg.eval);
  run.eval_seconds = seconds_since(t0);
  return run;
}

double normal_pixel_mass(const ModelState& model, const std::vector<EvalSample>& samples,
                         const EvalOptions& opts) {
  std::vector<EvalSample> normals;
  for (const EvalSample& s : samples)
    if (s.label == 0) normals.push_back(s);
  if (normals.empty()) throw ContractError("normal_pixel_mass: no normal images");
  double total = 0.0;
  std::size_t count = 0;
  for (const ScoredImage& s : score_samples(model, normals, opts)) {
    for (double v : s.anomaly_map) total += v;
    count += s.anomaly_map.size();
  }
  return total / static_cast<double>(count);
}

}  // namespace avfm
