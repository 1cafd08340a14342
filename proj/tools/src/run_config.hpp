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
#include "avfm/datagen.hpp"
#include "avfm/metrics.hpp"
#include "avfm/trainer.hpp"

namespace avfm::cli {

struct DataSection {
  std::size_t n = 512;
  std::size_t train_tags = 6;
  std::size_t eval_tags = 2;
  std::string split = "train";  // "train" or "eval" half of the class split
  GeneratorConfig generator;
};

struct EvalSection {
  EvalOptions options;
  bool save_maps = false;
};

struct FinetuneSection {
  std::string checkpoint;  // empty: zero-shot training
  std::size_t shots = 4;
  std::size_t iterations = 50;
};

struct SweepSection {
  std::string knob = "threshold";
  std::vector<double> values;  // empty: the knob's default grid
  std::size_t n_eval = 256;
};

/// Everything a command needs. Every command-line flag has a field here.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out = "out";
  std::string data;        // dataset directory read by train and eval
  std::string checkpoint;  // checkpoint read by eval and infer
  BackboneConfig backbone;
  std::string plan = "qv_proj";
  DataSection gen;
  TrainConfig train;
  EvalSection eval;
  FinetuneSection finetune;
  SweepSection sweep;

  void validate() const;
};

/// Overlays the keys present in `json_text` onto `base`. Unknown keys and
/// ill-typed values throw ConfigurationError naming the key path.
RunConfig parse_run_config(const std::string& json_text, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});
/// Fully resolved configuration; parsing it reproduces `cfg`.
std::string run_config_to_json(const RunConfig& cfg);

/// Seed streams shared by gen, train, eval and sweep so separate commands
/// reproduce one end-to-end run.
enum class SeedStream : std::uint64_t {
  backbone = 0,
  split = 1,
  train_data = 2,
  eval_data = 3,
  heads = 4,
  training = 5,
};
std::uint64_t stream_seed(const RunConfig& cfg, SeedStream s);

}  // namespace avfm::cli
