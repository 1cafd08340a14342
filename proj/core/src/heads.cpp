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

#include "avfm/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "avfm/errors.hpp"
#include "avfm/inject.hpp"
#include "avfm/rng.hpp"

namespace avfm {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng, double gain = 2.0) {
  const double std_dev = std::sqrt(gain / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal() * std_dev;
  round_to_float32(v);
  return Tensor::parameter(std::move(shape), std::move(v));
}

UpsampleBlock make_block(std::size_t c_in, std::size_t c_out, Rng& rng) {
  UpsampleBlock b;
  b.conv_weight = he_normal({c_out, c_in, 3, 3}, c_in * 9, rng);
  b.conv_bias = Tensor::parameter({c_out}, std::vector<double>(c_out, 0.0));
  b.norm_gamma = Tensor::parameter({c_out}, std::vector<double>(c_out, 1.0));
  b.norm_beta = Tensor::parameter({c_out}, std::vector<double>(c_out, 0.0));
  b.groups = groupnorm_groups(c_out);
  return b;
}

Tensor run_block(const Tensor& x, const UpsampleBlock& b) {
  Tensor y = conv2d(x, b.conv_weight, b.conv_bias, 1);
  y = relu(groupnorm(y, b.groups, b.norm_gamma, b.norm_beta));
  return bilinear_resize(y, 2 * y.dim(1), 2 * y.dim(2));
}

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor deep_copy(const Tensor& t) { return t.clone(); }

}  // namespace

std::size_t groupnorm_groups(std::size_t channels) {
  for (std::size_t g : {8u, 4u, 2u}) {
    if (channels % g == 0 && channels / g >= 2) return g;
  }
  return 1;
}

DecoderState DecoderState::init(std::size_t embed_dim, std::uint64_t seed) {
  if (embed_dim < 4 || embed_dim % 4 != 0)
    throw ConfigurationError("decoder: embed_dim must be a positive multiple of 4");
  Rng rng(seed);
  const std::size_t c1 = embed_dim / 2, c2 = embed_dim / 4;
  DecoderState s;
  s.block1 = make_block(embed_dim, c1, rng);
  s.block2 = make_block(c1, c2, rng);
  s.final_weight = he_normal({2, c2, 3, 3}, c2 * 9, rng, 1.0);
  s.final_bias = Tensor::parameter({2}, {0.0, 0.0});
  return s;
}

std::vector<NamedTensor> DecoderState::weights() const {
  return {{"decoder.block1.conv_weight", block1.conv_weight},
          {"decoder.block1.conv_bias", block1.conv_bias},
          {"decoder.block1.norm_gamma", block1.norm_gamma},
          {"decoder.block1.norm_beta", block1.norm_beta},
          {"decoder.block2.conv_weight", block2.conv_weight},
          {"decoder.block2.conv_bias", block2.conv_bias},
          {"decoder.block2.norm_gamma", block2.norm_gamma},
          {"decoder.block2.norm_beta", block2.norm_beta},
          {"decoder.final_weight", final_weight},
          {"decoder.final_bias", final_bias}};
}

ScoreHeadState ScoreHeadState::init(std::size_t embed_dim) {
  return {Tensor::parameter({embed_dim}, std::vector<double>(embed_dim, 0.0)),
          Tensor::parameter({1}, {0.0})};
}

std::vector<NamedTensor> ScoreHeadState::weights() const {
  return {{"score.weight", weight}, {"score.bias", bias}};
}

Tensor reshape_tokens(const BackboneOutput& out) {
  const Tensor& tokens = out.patch_tokens;
  if (tokens.rank() != 2 || tokens.dim(0) != out.grid_h * out.grid_w) {
    throw DimensionError("reshape_tokens: " + shape_str(tokens.shape()) +
                         " tokens do not fill grid " +
                         std::to_string(out.grid_h) + "x" +
                         std::to_string(out.grid_w));
  }
  return reshape(transpose(tokens), {tokens.dim(1), out.grid_h, out.grid_w});
}

DecodedMaps decode(const Tensor& features, const DecoderState& state,
                   std::size_t out_h, std::size_t out_w) {
  Tensor y = run_block(features, state.block1);
  y = run_block(y, state.block2);
  y = conv2d(y, state.final_weight, state.final_bias, 1);
  y = bilinear_resize(y, out_h, out_w);
  Tensor flat = reshape(y, {2, out_h * out_w});
  return {reshape(slice_rows(flat, 0, 1), {out_h, out_w}),
          reshape(slice_rows(flat, 1, 1), {out_h, out_w})};
}

Tensor score_logit(const Tensor& cls, const ScoreHeadState& head) {
  return add(dot(head.weight, cls), head.bias);
}

double score_image(const Tensor& cls, const ScoreHeadState& head) {
  return sigmoid_scalar(score_logit(cls, head).item());
}

ModelState ModelState::create(const BackboneConfig& config,
                              const std::string& plan_name,
                              std::uint64_t backbone_seed, std::uint64_t seed) {
  return create(config, InjectionPlan::preset(plan_name, config.num_blocks),
                backbone_seed, seed);
}

ModelState ModelState::create(const BackboneConfig& config, const InjectionPlan& plan,
                              std::uint64_t backbone_seed, std::uint64_t seed) {
  ModelState m;
  m.backbone = BackboneState::init(config, backbone_seed);
  Rng adapter_rng(mix_seed(seed, 1));
  m.backbone = inject(std::move(m.backbone), plan, config.adapter_rank, adapter_rng);
  m.decoder = DecoderState::init(config.embed_dim, mix_seed(seed, 2));
  m.score_head = ScoreHeadState::init(config.embed_dim);
  return m;
}

std::vector<NamedTensor> ModelState::named_tensors() const {
  std::vector<NamedTensor> out = backbone.weights();
  for (auto& nt : backbone.adapter_weights()) out.push_back(nt);
  for (auto& nt : decoder.weights()) out.push_back(nt);
  for (auto& nt : score_head.weights()) out.push_back(nt);
  return out;
}

std::vector<Tensor> ModelState::trainable(bool include_backbone) const {
  std::vector<Tensor> out;
  if (include_backbone)
    for (auto& [n, t] : backbone.weights()) out.push_back(t);
  for (auto& [n, t] : backbone.adapter_weights()) out.push_back(t);
  for (auto& [n, t] : decoder.weights()) out.push_back(t);
  for (auto& [n, t] : score_head.weights()) out.push_back(t);
  return out;
}

std::size_t ModelState::head_parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : decoder.weights()) n += t.size();
  for (auto& [name, t] : score_head.weights()) n += t.size();
  return n;
}

ModelState ModelState::clone() const {
  ModelState m = *this;
  BackboneState& b = m.backbone;
  b.patch_weight = deep_copy(b.patch_weight);
  b.patch_bias = deep_copy(b.patch_bias);
  b.position = deep_copy(b.position);
  b.cls = deep_copy(b.cls);
  for (BlockWeights& w : b.blocks) {
    for (Tensor* t : {&w.norm1_gamma, &w.norm1_beta, &w.wq, &w.bq, &w.wk,
                      &w.bk, &w.wv, &w.bv, &w.wo, &w.bo, &w.norm2_gamma,
                      &w.norm2_beta, &w.fc1_w, &w.fc1_b, &w.fc2_w, &w.fc2_b})
      *t = deep_copy(*t);
    for (auto& [s, l] : w.adapters.lora) {
      l.a = deep_copy(l.a);
      l.b = deep_copy(l.b);
    }
    for (auto& [s, nd] : w.adapters.norms) {
      nd.gamma = deep_copy(nd.gamma);
      nd.beta = deep_copy(nd.beta);
    }
  }
  b.final_gamma = deep_copy(b.final_gamma);
  b.final_beta = deep_copy(b.final_beta);
  DecoderState& d = m.decoder;
  for (UpsampleBlock* blk : {&d.block1, &d.block2}) {
    blk->conv_weight = deep_copy(blk->conv_weight);
    blk->conv_bias = deep_copy(blk->conv_bias);
    blk->norm_gamma = deep_copy(blk->norm_gamma);
    blk->norm_beta = deep_copy(blk->norm_beta);
  }
  d.final_weight = deep_copy(d.final_weight);
  d.final_bias = deep_copy(d.final_bias);
  m.score_head.weight = deep_copy(m.score_head.weight);
  m.score_head.bias = deep_copy(m.score_head.bias);
  return m;
}

ForwardResult forward_model(const Tensor& image, const ModelState& model,
                            bool adapters_enabled) {
  const BackboneConfig& cfg = model.backbone.config;
  BackboneOutput out = forward(image, model.backbone, adapters_enabled);
  DecodedMaps maps = decode(reshape_tokens(out), model.decoder, cfg.image_size,
                            cfg.image_size);
  return {maps.map_logits, maps.confidence,
          score_logit(out.cls_token, model.score_head)};
}

Prediction to_prediction(const ForwardResult& fr) {
  const auto z = fr.map_logits.data();
  std::vector<double> p(z.size());
  // Strictly inside (0,1) even where the logistic saturates.
  const double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  for (std::size_t i = 0; i < z.size(); ++i)
    p[i] = std::clamp(sigmoid_scalar(z[i]), lo, hi);
  Prediction pred;
  pred.anomaly_map = Tensor(fr.map_logits.shape(), std::move(p));
  pred.confidence_raw = fr.confidence.detach();
  pred.image_score = sigmoid_scalar(fr.score_logit.item());
  return pred;
}

Prediction predict(const Tensor& image, const ModelState& model) {
  return to_prediction(forward_model(image, model));
}

}  // namespace avfm
