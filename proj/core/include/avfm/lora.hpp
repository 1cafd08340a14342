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
#include <map>
#include <string>
#include <vector>

#include "avfm/rng.hpp"
#include "avfm/tensor.hpp"

namespace avfm {

/// Injection sites inside one transformer block.
enum class Site {
  query,
  key,
  value,
  output_projection,
  mlp_fc1,
  mlp_fc2,
  norm1,
  norm2,
};

std::string site_name(Site s);
Site site_from_name(const std::string& name);
bool is_norm_site(Site s);

/// Low-rank update y = W·x + scale·B·(A·x). B starts at zero.
struct LoraLayer {
  Tensor a;  // [rank × d_in]
  Tensor b;  // [d_out × rank]
  std::size_t rank = 0;
  double scale = 1.0;

  static LoraLayer create(std::size_t d_in, std::size_t d_out,
                          std::size_t rank, Rng& rng);
  std::size_t parameter_count() const { return a.size() + b.size(); }
};

/// Trainable additive deltas on a layer-norm affine (low-rank factorisation
/// is degenerate for vectors).
struct NormDelta {
  Tensor gamma;  // [d]
  Tensor beta;   // [d]
  std::size_t parameter_count() const { return gamma.size() + beta.size(); }
};

struct BlockAdapters {
  std::map<Site, LoraLayer> lora;
  std::map<Site, NormDelta> norms;
  bool empty() const { return lora.empty() && norms.empty(); }
};

/// Where adapters go, per transformer block.
class InjectionPlan {
 public:
  InjectionPlan() = default;
  InjectionPlan(std::string name, std::vector<std::vector<Site>> per_block)
      : name_(std::move(name)), per_block_(std::move(per_block)) {}

  /// Named layouts: "qv_proj" (default), "qkv_proj", "all_norms",
  /// "all_linears", "none".
  static InjectionPlan preset(const std::string& name, std::size_t num_blocks);
  static std::vector<std::string> preset_names();

  const std::string& name() const { return name_; }
  std::size_t num_blocks() const { return per_block_.size(); }
  const std::vector<Site>& sites(std::size_t block) const {
    return per_block_.at(block);
  }

 private:
  std::string name_ = "none";
  std::vector<std::vector<Site>> per_block_;
};

/// W·x (+ bias) + scale·B·(A·x) for x [m×d_in], W [d_out×d_in].
Tensor lora_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                    const LoraLayer& lora);
inline Tensor lora_forward(const Tensor& x, const Tensor& weight,
                           const LoraLayer& lora) {
  return lora_forward(x, weight, Tensor{}, lora);
}

}  // namespace avfm
