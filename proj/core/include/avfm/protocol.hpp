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

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "avfm/datagen.hpp"
#include "avfm/heads.hpp"
#include "avfm/metrics.hpp"
#include "avfm/trainer.hpp"
#include "avfm/vocabulary.hpp"

namespace avfm {

/// Pixels where any channel of `anomalous` differs from `normal` by at least
/// one 8-bit level, as a [H×W] 0/1 map.
Tensor changed_pixel_mask(const Tensor& normal, const Tensor& anomalous);

/// Normal halves (label 0, empty mask) followed by anomalous halves (label 1,
/// changed-pixel mask), tagged with the object class.
std::vector<EvalSample> eval_samples_from(const Dataset& d);

/// End-to-end zero-shot run: class split, training data on the train tags,
/// evaluation data on the disjoint held-out tags, training, evaluation.
struct ProtocolConfig {
  BackboneConfig backbone;
  std::string plan = "qv_proj";
  std::size_t n_train = 512;
  std::size_t n_eval = 256;
  std::size_t train_tags = 6;
  std::size_t eval_tags = 2;
  GeneratorConfig train_data;  // ablations change this one only
  GeneratorConfig eval_data;
  TrainConfig train;
  EvalOptions eval;
  std::uint64_t seed = 0;
};

struct ProtocolRun {
  ClassSplit split;
  Dataset train_set, eval_set;
  ModelState init;
  Checkpoint trained;
  MetricsReport baseline;  // the untrained model on the held-out set
  MetricsReport result;
  double generate_seconds = 0, train_seconds = 0, eval_seconds = 0;
};

/// Seeds for the backbone, split, both datasets, heads and training are all
/// derived from `cfg.seed`.
ProtocolRun run_protocol(const ProtocolConfig& cfg, const StepCallback& on_step = {});

/// Mean anomaly-map value over normal images: the false-positive pixel mass.
double normal_pixel_mass(const ModelState& model, const std::vector<EvalSample>& samples,
                         const EvalOptions& opts = {});

}  // namespace avfm
