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
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "avfm/datagen.hpp"
#include "avfm/heads.hpp"
#include "avfm/losses.hpp"
#include "avfm/tensor.hpp"

namespace avfm {

struct TrainConfig {
  std::size_t iterations = 500;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global-norm clip, 0 disables
  std::uint64_t seed = 0;
  bool freeze_backbone = true;
  std::size_t warmup_steps = 0;  // masked-patch reconstruction before training
  LossConfig loss;

  /// Full-scale recipe: batch 32.
  static TrainConfig full_scale();
  void validate() const;
};

/// Decoupled-weight-decay Adam over a fixed parameter list. Parameters are
/// rounded to binary32 after every step.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, const TrainConfig& cfg);

  /// Applies one update from the gradients currently held by the parameters.
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, wd_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

struct Checkpoint {
  ModelState model;
  TrainConfig train;
  std::size_t iteration = 0;
  std::string rng_state;

  /// Adapter, decoder and score-head parameter counts as stored in the header.
  std::size_t adapter_parameters() const;
  std::size_t trainable_parameters() const;
};

/// Receives the batch-mean loss breakdown after each iteration.
using StepCallback = std::function<void(std::size_t step, const LossBreakdown&)>;

/// Joint training of adapters, decoder and score head (and the backbone when
/// not frozen). Each draw picks a triplet uniformly and its normal or
/// anomalous half with probability ½. Throws NonFiniteLossError naming the
/// iteration and sample ids.
Checkpoint train_zero_shot(const ModelState& init, const Dataset& data,
                           const TrainConfig& cfg, const StepCallback& on_step = {});

/// Continues training on normal images only (zero masks, label 0), with the
/// same trainable set. Throws ContractError for an empty image list.
Checkpoint finetune_few_shot(const Checkpoint& ckpt, const std::vector<Tensor>& normal_images,
                             std::size_t iterations = 50, const StepCallback& on_step = {});

/// Self-supervised warm-up of the backbone: reconstruct masked patches from
/// the final tokens through a linear probe. Returns the mean loss per step.
std::vector<double> warmup_backbone(BackboneState& backbone, const std::vector<Tensor>& images,
                                    std::size_t steps, double lr, std::uint64_t seed);

/// Loss-log CSV header and row in the training-log format.
std::string loss_csv_header();
std::string loss_csv_row(std::size_t step, const LossBreakdown& b);

/// "AVFM" | u32 version | u32 header length | JSON header | f32 arrays.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// The JSON header of a checkpoint file.
std::string read_checkpoint_header(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace avfm
