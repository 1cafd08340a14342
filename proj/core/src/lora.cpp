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

#include "avfm/lora.hpp"

#include <algorithm>
#include <set>

#include "avfm/errors.hpp"
#include "avfm/inject.hpp"

namespace avfm {

namespace {

struct SiteEntry {
  Site site;
  const char* name;
};

constexpr SiteEntry kSites[] = {
    {Site::query, "query"},
    {Site::key, "key"},
    {Site::value, "value"},
    {Site::output_projection, "output_projection"},
    {Site::mlp_fc1, "mlp_fc1"},
    {Site::mlp_fc2, "mlp_fc2"},
    {Site::norm1, "norm1"},
    {Site::norm2, "norm2"},
};

std::vector<Site> preset_sites(const std::string& name) {
  if (name == "qv_proj")
    return {Site::query, Site::value, Site::output_projection};
  if (name == "qkv_proj")
    return {Site::query, Site::key, Site::value, Site::output_projection};
  if (name == "all_norms") return {Site::norm1, Site::norm2};
  if (name == "all_linears")
    return {Site::query,   Site::key,     Site::value,
            Site::output_projection, Site::mlp_fc1, Site::mlp_fc2};
  if (name == "none") return {};
  throw ConfigurationError("unknown injection plan '" + name + "'");
}

// (d_in, d_out) of a linear site.
std::pair<std::size_t, std::size_t> site_extents(const BackboneConfig& cfg,
                                                 Site s) {
  const std::size_t d = cfg.embed_dim;
  switch (s) {
    case Site::mlp_fc1:
      return {d, cfg.mlp_hidden()};
    case Site::mlp_fc2:
      return {cfg.mlp_hidden(), d};
    default:
      return {d, d};
  }
}

}  // namespace

std::string site_name(Site s) {
  for (const auto& e : kSites)
    if (e.site == s) return e.name;
  return "?";
}

Site site_from_name(const std::string& name) {
  for (const auto& e : kSites)
    if (name == e.name) return e.site;
  throw ConfigurationError("unknown injection site '" + name + "'");
}

bool is_norm_site(Site s) { return s == Site::norm1 || s == Site::norm2; }

LoraLayer LoraLayer::create(std::size_t d_in, std::size_t d_out,
                            std::size_t rank, Rng& rng) {
  if (rank == 0) throw ConfigurationError("lora: rank must be >= 1");
  std::vector<double> a(rank * d_in);
  for (double& v : a) v = rng.truncated_normal(0.02);
  round_to_float32(a);
  LoraLayer layer;
  layer.a = Tensor::parameter({rank, d_in}, std::move(a));
  layer.b = Tensor::parameter({d_out, rank}, std::vector<double>(d_out * rank));
  layer.rank = rank;
  layer.scale = 1.0 / static_cast<double>(rank);
  return layer;
}

InjectionPlan InjectionPlan::preset(const std::string& name,
                                    std::size_t num_blocks) {
  return InjectionPlan(
      name, std::vector<std::vector<Site>>(num_blocks, preset_sites(name)));
}

std::vector<std::string> InjectionPlan::preset_names() {
  return {"qv_proj", "qkv_proj", "all_norms", "all_linears", "none"};
}

Tensor lora_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                    const LoraLayer& lora) {
  const std::size_t d_out = weight.dim(0), d_in = weight.dim(1);
  if (lora.a.shape() != Shape{lora.rank, d_in} ||
      lora.b.shape() != Shape{d_out, lora.rank}) {
    throw ConfigurationError("lora: adapter A" + shape_str(lora.a.shape()) +
                             " B" + shape_str(lora.b.shape()) + " rank " +
                             std::to_string(lora.rank) +
                             " does not fit weight " +
                             shape_str(weight.shape()));
  }
  Tensor base = linear(x, weight, bias);
  Tensor delta = linear(linear(x, lora.a, Tensor{}), lora.b, Tensor{});
  return add(base, scale(delta, lora.scale));
}

BackboneState inject(BackboneState state, const InjectionPlan& plan,
                     std::size_t rank, Rng& rng) {
  const BackboneConfig& cfg = state.config;
  if (plan.num_blocks() != cfg.num_blocks) {
    throw ConfigurationError("inject: plan covers " +
                             std::to_string(plan.num_blocks()) +
                             " blocks, backbone has " +
                             std::to_string(cfg.num_blocks));
  }
  for (std::size_t bi = 0; bi < cfg.num_blocks; ++bi) {
    BlockAdapters& adapters = state.blocks[bi].adapters;
    std::set<Site> seen;
    for (Site s : plan.sites(bi)) {
      if (!seen.insert(s).second || adapters.lora.count(s) ||
          adapters.norms.count(s)) {
        throw ConfigurationError("inject: duplicate injection at block " +
                                 std::to_string(bi) + " site " + site_name(s));
      }
      if (rank == 0) continue;
      if (is_norm_site(s)) {
        const std::size_t d = cfg.embed_dim;
        adapters.norms[s] = NormDelta{Tensor::parameter({d}, std::vector<double>(d)),
                                      Tensor::parameter({d}, std::vector<double>(d))};
      } else {
        const auto [d_in, d_out] = site_extents(cfg, s);
        adapters.lora[s] = LoraLayer::create(d_in, d_out, rank, rng);
      }
    }
  }
  state.plan = plan;
  state.config.adapter_rank = rank;
  return state;
}

std::size_t expected_adapter_census(const BackboneConfig& config,
                                    const InjectionPlan& plan,
                                    std::size_t rank) {
  if (rank == 0) return 0;
  std::size_t total = 0;
  for (std::size_t bi = 0; bi < plan.num_blocks(); ++bi) {
    for (Site s : plan.sites(bi)) {
      if (is_norm_site(s)) {
        total += 2 * config.embed_dim;
      } else {
        const auto [d_in, d_out] = site_extents(config, s);
        total += rank * (d_in + d_out);
      }
    }
  }
  return total;
}

}  // namespace avfm
