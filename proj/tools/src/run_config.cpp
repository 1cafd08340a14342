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

#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "avfm/errors.hpp"
#include "avfm/lora.hpp"
#include "avfm/rng.hpp"
#include "json.hpp"

namespace avfm::cli {

namespace {

using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

// Reads fields of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigurationError("config: '" + path_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key))
        throw ConfigurationError("config: unknown key '" + where(key) + "'");
  }

  template <typename T>
  void get(const std::string& key, T& dst) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      dst = it->template get<T>();
    } catch (const Json::exception&) {
      throw ConfigurationError("config: '" + where(key) + "' has the wrong type");
    }
  }

  /// Nested object, or nullptr when absent.
  const Json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_backbone(const Json& j, BackboneConfig& c) {
  Section s(j, "backbone");
  s.get("image_size", c.image_size);
  s.get("patch_size", c.patch_size);
  s.get("embed_dim", c.embed_dim);
  s.get("num_blocks", c.num_blocks);
  s.get("num_heads", c.num_heads);
  s.get("mlp_ratio", c.mlp_ratio);
  s.get("adapter_rank", c.adapter_rank);
}

void read_gen(const Json& j, DataSection& d) {
  Section s(j, "gen");
  GeneratorConfig& g = d.generator;
  s.get("n", d.n);
  s.get("train_tags", d.train_tags);
  s.get("eval_tags", d.eval_tags);
  s.get("split", d.split);
  s.get("threshold", g.threshold);
  s.get("forced_fail", g.forced_fail_prob);
  s.get("amplitude_min", g.amplitude_min);
  s.get("amplitude_max", g.amplitude_max);
  s.get("coverage_min", g.coverage.min);
  s.get("coverage_max", g.coverage.max);
  s.get("filtering", g.filtering);
  s.get("foreground_selection", g.foreground_selection);
  s.get("attempt_factor", g.attempt_factor);
  std::string extractor = g.extractor == ExtractorKind::backbone ? "backbone" : "raw";
  s.get("extractor", extractor);
  if (extractor == "backbone")
    g.extractor = ExtractorKind::backbone;
  else if (extractor == "raw")
    g.extractor = ExtractorKind::raw_pixels;
  else
    throw ConfigurationError("config: gen.extractor must be 'backbone' or 'raw', got '" +
                             extractor + "'");
}

void read_train(const Json& j, TrainConfig& t) {
  Section s(j, "train");
  s.get("iterations", t.iterations);
  s.get("batch_size", t.batch_size);
  s.get("lr", t.lr);
  s.get("weight_decay", t.weight_decay);
  s.get("beta1", t.beta1);
  s.get("beta2", t.beta2);
  s.get("eps", t.eps);
  s.get("grad_clip", t.grad_clip);
  s.get("freeze_backbone", t.freeze_backbone);
  s.get("warmup_steps", t.warmup_steps);
  if (const Json* l = s.child("loss")) {
    Section ls(*l, "train.loss");
    ls.get("beta", t.loss.beta);
    ls.get("alpha_conf", t.loss.alpha_conf);
    ls.get("focal_gamma", t.loss.focal_gamma);
    ls.get("use_confidence", t.loss.use_confidence);
  }
}

}  // namespace

void RunConfig::validate() const {
  backbone.validate();
  InjectionPlan::preset(plan, backbone.num_blocks);
  gen.generator.validate();
  train.validate();
  if (gen.n < 1) throw ConfigurationError("config: gen.n must be >= 1");
  if (gen.split != "train" && gen.split != "eval")
    throw ConfigurationError("config: gen.split must be 'train' or 'eval', got '" + gen.split + "'");
  if (gen.generator.image_size != backbone.image_size)
    throw ConfigurationError("config: image size of the generator and backbone differ");
  if (workers < 1) throw ConfigurationError("config: workers must be >= 1");
  if (eval.options.smoothing_sigma < 0)
    throw ConfigurationError("config: eval.smoothing_sigma must be >= 0");
  if (finetune.shots < 1) throw ConfigurationError("config: finetune.shots must be >= 1");
}

RunConfig parse_run_config(const std::string& json_text, RunConfig cfg) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw ConfigurationError(std::string("config: invalid JSON: ") + e.what());
  }
  {
    Section s(j, "");
    s.get("seed", cfg.seed);
    s.get("workers", cfg.workers);
    s.get("out", cfg.out);
    s.get("data", cfg.data);
    s.get("checkpoint", cfg.checkpoint);
    s.get("plan", cfg.plan);
    if (const Json* b = s.child("backbone")) read_backbone(*b, cfg.backbone);
    if (const Json* g = s.child("gen")) read_gen(*g, cfg.gen);
    if (const Json* t = s.child("train")) read_train(*t, cfg.train);
    if (const Json* e = s.child("eval")) {
      Section es(*e, "eval");
      es.get("smoothing_sigma", cfg.eval.options.smoothing_sigma);
      es.get("roc_points", cfg.eval.options.roc_points);
      es.get("save_maps", cfg.eval.save_maps);
    }
    if (const Json* f = s.child("finetune")) {
      Section fs(*f, "finetune");
      fs.get("checkpoint", cfg.finetune.checkpoint);
      fs.get("shots", cfg.finetune.shots);
      fs.get("iterations", cfg.finetune.iterations);
    }
    if (const Json* w = s.child("sweep")) {
      Section ws(*w, "sweep");
      ws.get("knob", cfg.sweep.knob);
      ws.get("values", cfg.sweep.values);
      ws.get("n_eval", cfg.sweep.n_eval);
    }
  }
  cfg.gen.generator.image_size = cfg.backbone.image_size;
  return cfg;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_run_config(os.str(), std::move(base));
}

std::string run_config_to_json(const RunConfig& c) {
  const GeneratorConfig& g = c.gen.generator;
  const TrainConfig& t = c.train;
  OJson j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["out"] = c.out;
  j["data"] = c.data;
  j["checkpoint"] = c.checkpoint;
  j["plan"] = c.plan;
  j["backbone"] = {{"image_size", c.backbone.image_size}, {"patch_size", c.backbone.patch_size},
                   {"embed_dim", c.backbone.embed_dim},   {"num_blocks", c.backbone.num_blocks},
                   {"num_heads", c.backbone.num_heads},   {"mlp_ratio", c.backbone.mlp_ratio},
                   {"adapter_rank", c.backbone.adapter_rank}};
  j["gen"] = {{"n", c.gen.n},
              {"train_tags", c.gen.train_tags},
              {"eval_tags", c.gen.eval_tags},
              {"split", c.gen.split},
              {"threshold", g.threshold},
              {"forced_fail", g.forced_fail_prob},
              {"amplitude_min", g.amplitude_min},
              {"amplitude_max", g.amplitude_max},
              {"coverage_min", g.coverage.min},
              {"coverage_max", g.coverage.max},
              {"filtering", g.filtering},
              {"foreground_selection", g.foreground_selection},
              {"attempt_factor", g.attempt_factor},
              {"extractor", g.extractor == ExtractorKind::backbone ? "backbone" : "raw"}};
  j["train"] = {{"iterations", t.iterations},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"grad_clip", t.grad_clip},
                {"freeze_backbone", t.freeze_backbone},
                {"warmup_steps", t.warmup_steps},
                {"loss",
                 {{"beta", t.loss.beta},
                  {"alpha_conf", t.loss.alpha_conf},
                  {"focal_gamma", t.loss.focal_gamma},
                  {"use_confidence", t.loss.use_confidence}}}};
  j["eval"] = {{"smoothing_sigma", c.eval.options.smoothing_sigma},
               {"roc_points", c.eval.options.roc_points},
               {"save_maps", c.eval.save_maps}};
  j["finetune"] = {{"checkpoint", c.finetune.checkpoint},
                   {"shots", c.finetune.shots},
                   {"iterations", c.finetune.iterations}};
  j["sweep"] = {{"knob", c.sweep.knob}, {"values", c.sweep.values}, {"n_eval", c.sweep.n_eval}};
  return j.dump(2) + "\n";
}

std::uint64_t stream_seed(const RunConfig& cfg, SeedStream s) {
  return mix_seed(cfg.seed, static_cast<std::uint64_t>(s));
}

}  // namespace avfm::cli
