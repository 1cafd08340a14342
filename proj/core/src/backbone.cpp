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

#include "avfm/backbone.hpp"

#include <cmath>

#include "avfm/errors.hpp"
#include "avfm/rng.hpp"

namespace avfm {

namespace {

Tensor normal_param(Shape shape, Rng& rng, double std_dev = 0.02) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.truncated_normal(std_dev);
  round_to_float32(v);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor const_param(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, value));
}

const LoraLayer* find_lora(const BlockAdapters& a, Site s, bool enabled) {
  if (!enabled) return nullptr;
  auto it = a.lora.find(s);
  return it == a.lora.end() ? nullptr : &it->second;
}

Tensor project(const Tensor& x, const Tensor& w, const Tensor& b,
               const LoraLayer* lora) {
  return lora ? lora_forward(x, w, b, *lora) : linear(x, w, b);
}

Tensor norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
            const BlockAdapters& a, Site s, bool enabled) {
  if (enabled) {
    auto it = a.norms.find(s);
    if (it != a.norms.end()) {
      return layernorm(x, add(gamma, it->second.gamma),
                       add(beta, it->second.beta));
    }
  }
  return layernorm(x, gamma, beta);
}

Tensor block_forward(const Tensor& x, const BlockWeights& blk,
                     const BackboneConfig& cfg, bool adapters) {
  const auto& ad = blk.adapters;
  const std::size_t heads = cfg.num_heads, dh = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor h = norm(x, blk.norm1_gamma, blk.norm1_beta, ad, Site::norm1, adapters);
  Tensor q = project(h, blk.wq, blk.bq, find_lora(ad, Site::query, adapters));
  Tensor k = project(h, blk.wk, blk.bk, find_lora(ad, Site::key, adapters));
  Tensor v = project(h, blk.wv, blk.bv, find_lora(ad, Site::value, adapters));

  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t hi = 0; hi < heads; ++hi) {
    Tensor qh = slice_cols(q, hi * dh, dh);
    Tensor kh = slice_cols(k, hi * dh, dh);
    Tensor vh = slice_cols(v, hi * dh, dh);
    Tensor att = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    head_out.push_back(matmul(att, vh));
  }
  Tensor merged = heads == 1 ? head_out.front() : concat_cols(head_out);
  Tensor o = project(merged, blk.wo, blk.bo,
                     find_lora(ad, Site::output_projection, adapters));
  Tensor x1 = add(x, o);

  Tensor h2 = norm(x1, blk.norm2_gamma, blk.norm2_beta, ad, Site::norm2, adapters);
  Tensor m = gelu(project(h2, blk.fc1_w, blk.fc1_b,
                          find_lora(ad, Site::mlp_fc1, adapters)));
  m = project(m, blk.fc2_w, blk.fc2_b, find_lora(ad, Site::mlp_fc2, adapters));
  return add(x1, m);
}

}  // namespace

BackboneConfig BackboneConfig::full_scale() {
  BackboneConfig c;
  c.image_size = 768;
  c.patch_size = 16;
  c.embed_dim = 1024;
  c.num_blocks = 24;
  c.num_heads = 16;
  c.mlp_ratio = 4.0;
  c.adapter_rank = 64;
  return c;
}

BackboneConfig BackboneConfig::tiny() {
  BackboneConfig c;
  c.image_size = 32;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.num_blocks = 2;
  c.num_heads = 2;
  c.mlp_ratio = 2.0;
  c.adapter_rank = 2;
  return c;
}

std::size_t BackboneConfig::mlp_hidden() const {
  return static_cast<std::size_t>(
      std::lround(mlp_ratio * static_cast<double>(embed_dim)));
}

void BackboneConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0)
    throw ConfigurationError("backbone: image_size " +
                             std::to_string(image_size) +
                             " not divisible by patch_size " +
                             std::to_string(patch_size));
  if (num_heads == 0 || embed_dim == 0 || embed_dim % num_heads != 0)
    throw ConfigurationError("backbone: embed_dim " + std::to_string(embed_dim) +
                             " not divisible by num_heads " +
                             std::to_string(num_heads));
  if (num_blocks == 0) throw ConfigurationError("backbone: num_blocks must be >= 1");
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0)
    throw ConfigurationError("backbone: mlp_ratio must be positive");
}

BackboneState BackboneState::init(const BackboneConfig& config,
                                  std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.embed_dim, hid = config.mlp_hidden();
  BackboneState s;
  s.config = config;
  s.patch_weight = normal_param({d, config.patch_dim()}, rng);
  s.patch_bias = const_param({d}, 0.0);
  s.position = normal_param({config.num_patches() + 1, d}, rng);
  s.cls = normal_param({d}, rng);
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    BlockWeights w;
    w.norm1_gamma = const_param({d}, 1.0);
    w.norm1_beta = const_param({d}, 0.0);
    w.wq = normal_param({d, d}, rng);
    w.bq = const_param({d}, 0.0);
    w.wk = normal_param({d, d}, rng);
    w.bk = const_param({d}, 0.0);
    w.wv = normal_param({d, d}, rng);
    w.bv = const_param({d}, 0.0);
    w.wo = normal_param({d, d}, rng);
    w.bo = const_param({d}, 0.0);
    w.norm2_gamma = const_param({d}, 1.0);
    w.norm2_beta = const_param({d}, 0.0);
    w.fc1_w = normal_param({hid, d}, rng);
    w.fc1_b = const_param({hid}, 0.0);
    w.fc2_w = normal_param({d, hid}, rng);
    w.fc2_b = const_param({d}, 0.0);
    s.blocks.push_back(std::move(w));
  }
  s.final_gamma = const_param({d}, 1.0);
  s.final_beta = const_param({d}, 0.0);
  s.plan = InjectionPlan::preset("none", config.num_blocks);
  s.config.adapter_rank = 0;
  return s;
}

std::vector<NamedTensor> BackboneState::weights() const {
  std::vector<NamedTensor> out = {{"backbone.patch_weight", patch_weight},
                                  {"backbone.patch_bias", patch_bias},
                                  {"backbone.position", position},
                                  {"backbone.cls", cls}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = "backbone.blocks." + std::to_string(b) + ".";
    const BlockWeights& w = blocks[b];
    out.insert(out.end(), {{p + "norm1_gamma", w.norm1_gamma},
                           {p + "norm1_beta", w.norm1_beta},
                           {p + "wq", w.wq},
                           {p + "bq", w.bq},
                           {p + "wk", w.wk},
                           {p + "bk", w.bk},
                           {p + "wv", w.wv},
                           {p + "bv", w.bv},
                           {p + "wo", w.wo},
                           {p + "bo", w.bo},
                           {p + "norm2_gamma", w.norm2_gamma},
                           {p + "norm2_beta", w.norm2_beta},
                           {p + "fc1_w", w.fc1_w},
                           {p + "fc1_b", w.fc1_b},
                           {p + "fc2_w", w.fc2_w},
                           {p + "fc2_b", w.fc2_b}});
  }
  out.emplace_back("backbone.final_gamma", final_gamma);
  out.emplace_back("backbone.final_beta", final_beta);
  return out;
}

std::vector<NamedTensor> BackboneState::adapter_weights() const {
  std::vector<NamedTensor> out;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = "adapters.blocks." + std::to_string(b) + ".";
    for (const auto& [site, layer] : blocks[b].adapters.lora) {
      out.emplace_back(p + site_name(site) + ".A", layer.a);
      out.emplace_back(p + site_name(site) + ".B", layer.b);
    }
    for (const auto& [site, delta] : blocks[b].adapters.norms) {
      out.emplace_back(p + site_name(site) + ".gamma", delta.gamma);
      out.emplace_back(p + site_name(site) + ".beta", delta.beta);
    }
  }
  return out;
}

std::size_t BackboneState::adapter_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : adapter_weights()) n += t.size();
  return n;
}

std::size_t BackboneState::weight_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : weights()) n += t.size();
  return n;
}

void set_backbone_trainable(BackboneState& state, bool trainable) {
  for (auto& [name, t] : state.weights()) {
    Tensor handle = t;
    handle.set_requires_grad(trainable);
  }
}

Tensor unfold_patches(const Tensor& image, std::size_t image_size,
                      std::size_t patch_size) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image_size ||
      image.dim(2) != image_size) {
    throw DimensionError("patchify: expected image [3x" +
                         std::to_string(image_size) + "x" +
                         std::to_string(image_size) + "], got " +
                         shape_str(image.shape()));
  }
  const std::size_t g = image_size / patch_size, p = patch_size;
  const std::size_t pd = 3 * p * p;
  const auto px = image.data();
  std::vector<double> out(g * g * pd);
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      double* row = out.data() + (gy * g + gx) * pd;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x) {
            row[(c * p + y) * p + x] =
                px[(c * image_size + gy * p + y) * image_size + gx * p + x];
          }
    }
  return Tensor({g * g, pd}, std::move(out));
}

Tensor patchify(const Tensor& image, const BackboneState& state) {
  const BackboneConfig& cfg = state.config;
  Tensor patches = unfold_patches(image, cfg.image_size, cfg.patch_size);
  Tensor tokens = linear(patches, state.patch_weight, state.patch_bias);
  return add(tokens, slice_rows(state.position, 1, cfg.num_patches()));
}

BackboneOutput forward(const Tensor& image, const BackboneState& state,
                       bool adapters_enabled) {
  const BackboneConfig& cfg = state.config;
  const std::size_t d = cfg.embed_dim;
  Tensor cls_row = add(reshape(state.cls, {1, d}), slice_rows(state.position, 0, 1));
  Tensor x = concat_rows({cls_row, patchify(image, state)});
  for (const BlockWeights& blk : state.blocks)
    x = block_forward(x, blk, cfg, adapters_enabled);
  x = layernorm(x, state.final_gamma, state.final_beta);

  BackboneOutput out;
  out.cls_token = reshape(slice_rows(x, 0, 1), {d});
  out.patch_tokens = slice_rows(x, 1, cfg.num_patches());
  out.grid_h = out.grid_w = cfg.grid();
  return out;
}

}  // namespace avfm
