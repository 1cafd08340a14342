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

#include "avfm/backbone.hpp"
#include "avfm/tensor.hpp"

namespace avfm {

/// conv 3×3 → GroupNorm → ReLU → bilinear ×2.
struct UpsampleBlock {
  Tensor conv_weight;  // [c_out × c_in × 3 × 3]
  Tensor conv_bias;    // [c_out]
  Tensor norm_gamma, norm_beta;
  std::size_t groups = 1;
};

struct DecoderState {
  UpsampleBlock block1;  // d → d/2
  UpsampleBlock block2;  // d/2 → d/4
  Tensor final_weight;   // [2 × d/4 × 3 × 3]
  Tensor final_bias;     // [2]: map logit, raw confidence

  static DecoderState init(std::size_t embed_dim, std::uint64_t seed);
  std::vector<NamedTensor> weights() const;
};

struct ScoreHeadState {
  Tensor weight;  // [d]
  Tensor bias;    // [1]

  static ScoreHeadState init(std::size_t embed_dim);
  std::vector<NamedTensor> weights() const;
};

/// Group count used for a GroupNorm over `channels` channels.
std::size_t groupnorm_groups(std::size_t channels);

/// Patch tokens [N×d] → feature map [d×gh×gw] (inverse of patch order).
Tensor reshape_tokens(const BackboneOutput& out);

struct DecodedMaps {
  Tensor map_logits;  // [H×W]
  Tensor confidence;  // [H×W], raw c
};

DecodedMaps decode(const Tensor& features, const DecoderState& state,
                   std::size_t out_h, std::size_t out_w);

/// w·cls + b, shape [1].
Tensor score_logit(const Tensor& cls, const ScoreHeadState& head);
/// sigmoid(w·cls + b).
double score_image(const Tensor& cls, const ScoreHeadState& head);

/// Backbone with adapters, decoder and score head, plus the injection recipe.
struct ModelState {
  BackboneState backbone;
  DecoderState decoder;
  ScoreHeadState score_head;

  /// Random backbone from `backbone_seed`; adapters and decoder from `seed`.
  static ModelState create(const BackboneConfig& config,
                           const std::string& plan_name,
                           std::uint64_t backbone_seed, std::uint64_t seed);
  static ModelState create(const BackboneConfig& config, const InjectionPlan& plan,
                           std::uint64_t backbone_seed, std::uint64_t seed);

  /// Every tensor in checkpoint order (backbone, adapters, decoder, score).
  std::vector<NamedTensor> named_tensors() const;
  /// Adapters, decoder and score head, plus backbone weights when
  /// `include_backbone`.
  std::vector<Tensor> trainable(bool include_backbone) const;
  std::size_t head_parameter_count() const;
  /// Deep copy; the original's storage is left untouched by later training.
  ModelState clone() const;
};

/// Logit-space outputs used by the losses.
struct ForwardResult {
  Tensor map_logits;   // [H×W]
  Tensor confidence;   // [H×W]
  Tensor score_logit;  // [1]
};

ForwardResult forward_model(const Tensor& image, const ModelState& model,
                            bool adapters_enabled = true);

struct Prediction {
  Tensor anomaly_map;       // [H×W], sigmoid of the map logits
  Tensor confidence_raw;    // [H×W]
  double image_score = 0.5; // sigmoid of the score logit
};

Prediction to_prediction(const ForwardResult& fr);
Prediction predict(const Tensor& image, const ModelState& model);

}  // namespace avfm
