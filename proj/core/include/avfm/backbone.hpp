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
#include <utility>
#include <vector>

#include "avfm/lora.hpp"
#include "avfm/tensor.hpp"

namespace avfm {

struct BackboneConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t num_blocks = 4;
  std::size_t num_heads = 4;
  double mlp_ratio = 2.0;
  std::size_t adapter_rank = 4;  // 0 disables adapters

  /// ViT-L/16 at 768², LoRA rank 64.
  static BackboneConfig full_scale();
  /// 32², patch 4, dim 16, 2 blocks, rank 2: the gradient-check model.
  static BackboneConfig tiny();

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const;
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }

  bool operator==(const BackboneConfig&) const = default;
};

struct BlockWeights {
  Tensor norm1_gamma, norm1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // [d×d], [d]
  Tensor norm2_gamma, norm2_beta;
  Tensor fc1_w, fc1_b;  // [hidden×d], [hidden]
  Tensor fc2_w, fc2_b;  // [d×hidden], [d]
  BlockAdapters adapters;
};

using NamedTensor = std::pair<std::string, Tensor>;

struct BackboneState {
  BackboneConfig config;
  Tensor patch_weight;  // [d × 3·p·p]
  Tensor patch_bias;    // [d]
  Tensor position;      // [(N+1) × d], row 0 belongs to the class token
  Tensor cls;           // [d]
  std::vector<BlockWeights> blocks;
  Tensor final_gamma, final_beta;
  InjectionPlan plan;  // adapters actually injected (name "none" if absent)

  /// Truncated-normal(0.02) weights, zero biases, unit norm gains.
  static BackboneState init(const BackboneConfig& config, std::uint64_t seed);

  std::vector<NamedTensor> weights() const;
  std::vector<NamedTensor> adapter_weights() const;
  std::size_t adapter_parameter_count() const;
  std::size_t weight_parameter_count() const;
};

struct BackboneOutput {
  Tensor patch_tokens;  // [N × d]
  Tensor cls_token;     // [d]
  std::size_t grid_h = 0, grid_w = 0;
};

/// Non-overlapping patch vectors [N × 3·p·p] of a [3×H×W] image
/// in [0,1]; patches in row-major grid order, values ordered (c, y, x).
Tensor unfold_patches(const Tensor& image, std::size_t image_size,
                      std::size_t patch_size);

/// Patch projection plus position embedding: [N × d].
Tensor patchify(const Tensor& image, const BackboneState& state);

BackboneOutput forward(const Tensor& image, const BackboneState& state,
                       bool adapters_enabled = true);

/// Sets requires_grad on every backbone weight (not adapters).
void set_backbone_trainable(BackboneState& state, bool trainable);

}  // namespace avfm
