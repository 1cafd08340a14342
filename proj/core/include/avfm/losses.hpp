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

#include "avfm/heads.hpp"
#include "avfm/tensor.hpp"

namespace avfm {

/// Probabilities are clipped to [kProbClip, 1 - kProbClip] inside logs.
inline constexpr double kProbClip = 1e-7;

struct LossConfig {
  double beta = 5.0;          // focal weight in the base segmentation loss
  double alpha_conf = 0.1;    // confidence regulariser
  double focal_gamma = 2.0;
  bool use_confidence = true; // false: plain mean base loss (ablation)

  void validate() const;
};

struct LossBreakdown {
  double l1 = 0;
  double focal_pixel = 0;
  double l_base = 0;
  double l_seg = 0;
  double l_img = 0;
  double total = 0;
};

/// Mean of −(1−p_t)^γ·ln p_t. Throws DomainError for prob outside (0,1).
double focal(const Tensor& prob, const Tensor& target, double gamma);
/// Mean absolute difference.
double l1(const Tensor& map, const Tensor& target);
/// l1 + β·focal.
double base_seg_loss(const Tensor& map_prob, const Tensor& m_gt,
                     const LossConfig& cfg);
/// Per-pixel |p − m| + β·focal_pixel, i.e. base_seg_loss before reduction.
Tensor base_seg_loss_map(const Tensor& map_prob, const Tensor& m_gt,
                         const LossConfig& cfg);
/// Mean of base·C − α·ln C with C = 1 + eᶜ.
double confidence_weighted_loss(const Tensor& per_pixel_base, const Tensor& c,
                                double alpha_conf);
/// Focal loss on a single score.
double image_loss(double score, int label, double gamma);

/// Differentiable segmentation term from map logits and raw confidence.
Tensor segmentation_loss(const Tensor& map_logits, const Tensor& confidence,
                         const Tensor& m_gt, const LossConfig& cfg);
/// Differentiable image term from the score logit.
Tensor image_focal_loss(const Tensor& score_logit, int label, double gamma);

struct TotalLoss {
  Tensor value;  // scalar, on the active tape when recording
  LossBreakdown breakdown;
};

TotalLoss total_loss(const ForwardResult& pred, const Tensor& m_gt, int label,
                     const LossConfig& cfg);

}  // namespace avfm
