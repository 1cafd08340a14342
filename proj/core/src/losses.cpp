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

#include "avfm/losses.hpp"

#include <algorithm>
#include <cmath>

#include "avfm/errors.hpp"

namespace avfm {

namespace {

double clip_prob(double p) { return std::clamp(p, kProbClip, 1.0 - kProbClip); }

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ln(1 + eᶜ)
double softplus(double c) {
  return std::max(c, 0.0) + std::log1p(std::exp(-std::fabs(c)));
}

bool is_positive(double target) { return target > 0.5; }

// Focal term on an already clipped probability.
double focal_term(double pc, bool positive, double gamma) {
  const double pt = positive ? pc : 1.0 - pc;
  return -std::pow(1.0 - pt, gamma) * std::log(pt);
}

// d focal / d pc.
double focal_slope(double pc, bool positive, double gamma) {
  const double pt = positive ? pc : 1.0 - pc;
  double d = -std::pow(1.0 - pt, gamma) / pt;
  if (gamma != 0.0) d += gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt);
  return positive ? d : -d;
}

void check_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
}

void check_open_unit(const char* op, std::span<const double> p) {
  for (double v : p) {
    if (!(v > 0.0 && v < 1.0))
      throw DomainError(std::string(op) + ": probability " + std::to_string(v) +
                        " outside (0,1)");
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigurationError("loss: beta must be > 0");
  if (!(alpha_conf >= 0.0)) throw ConfigurationError("loss: alpha_conf must be >= 0");
  if (!(focal_gamma >= 0.0)) throw ConfigurationError("loss: focal_gamma must be >= 0");
}

double focal(const Tensor& prob, const Tensor& target, double gamma) {
  check_same("focal", prob, target);
  check_open_unit("focal", prob.data());
  const auto p = prob.data(), t = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    s += focal_term(clip_prob(p[i]), is_positive(t[i]), gamma);
  return s / static_cast<double>(p.size());
}

double l1(const Tensor& map, const Tensor& target) {
  check_same("l1", map, target);
  const auto p = map.data(), t = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

double base_seg_loss(const Tensor& map_prob, const Tensor& m_gt,
                     const LossConfig& cfg) {
  return l1(map_prob, m_gt) + cfg.beta * focal(map_prob, m_gt, cfg.focal_gamma);
}

Tensor base_seg_loss_map(const Tensor& map_prob, const Tensor& m_gt,
                         const LossConfig& cfg) {
  check_same("base_seg_loss_map", map_prob, m_gt);
  check_open_unit("base_seg_loss_map", map_prob.data());
  const auto p = map_prob.data(), t = m_gt.data();
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    out[i] = std::fabs(p[i] - t[i]) +
             cfg.beta * focal_term(clip_prob(p[i]), is_positive(t[i]),
                                   cfg.focal_gamma);
  return Tensor(map_prob.shape(), std::move(out));
}

double confidence_weighted_loss(const Tensor& per_pixel_base, const Tensor& c,
                                double alpha_conf) {
  check_same("confidence_weighted_loss", per_pixel_base, c);
  const auto b = per_pixel_base.data(), cv = c.data();
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i)
    s += b[i] * (1.0 + std::exp(cv[i])) - alpha_conf * softplus(cv[i]);
  return s / static_cast<double>(b.size());
}

double image_loss(double score, int label, double gamma) {
  if (!(score > 0.0 && score < 1.0))
    throw DomainError("image_loss: score " + std::to_string(score) +
                      " outside (0,1)");
  return focal_term(clip_prob(score), label != 0, gamma);
}

Tensor segmentation_loss(const Tensor& map_logits, const Tensor& confidence,
                         const Tensor& m_gt, const LossConfig& cfg) {
  check_same("segmentation_loss", map_logits, m_gt);
  check_same("segmentation_loss", map_logits, confidence);
  const auto z = map_logits.data(), c = confidence.data(), t = m_gt.data();
  const std::size_t n = z.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  // Per-pixel partials of the integrand wrt z and c.
  std::vector<double> dz(n), dc(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = logistic(z[i]);
    const double pc = clip_prob(p);
    const bool pos = is_positive(t[i]);
    const double base =
        std::fabs(p - t[i]) + cfg.beta * focal_term(pc, pos, cfg.focal_gamma);
    double dbase_dp = (p > t[i]) ? 1.0 : (p < t[i] ? -1.0 : 0.0);
    if (p > kProbClip && p < 1.0 - kProbClip)
      dbase_dp += cfg.beta * focal_slope(pc, pos, cfg.focal_gamma);
    const double dp_dz = p * (1.0 - p);
    if (cfg.use_confidence) {
      const double weight = 1.0 + std::exp(c[i]);
      total += base * weight - cfg.alpha_conf * softplus(c[i]);
      dz[i] = weight * dbase_dp * dp_dz * inv_n;
      dc[i] = (std::exp(c[i]) * base - cfg.alpha_conf * logistic(c[i])) * inv_n;
    } else {
      total += base;
      dz[i] = dbase_dp * dp_dz * inv_n;
      dc[i] = 0.0;
    }
  }
  Tensor out = Tensor::scalar(total * inv_n);
  return record_op(std::move(out), {map_logits, confidence},
                   [map_logits, confidence, dz = std::move(dz),
                    dc = std::move(dc)](std::span<const double> g) {
                     if (map_logits.requires_grad()) {
                       auto gz = map_logits.grad_buffer();
                       for (std::size_t i = 0; i < dz.size(); ++i) gz[i] += g[0] * dz[i];
                     }
                     if (confidence.requires_grad()) {
                       auto gc = confidence.grad_buffer();
                       for (std::size_t i = 0; i < dc.size(); ++i) gc[i] += g[0] * dc[i];
                     }
                   });
}

Tensor image_focal_loss(const Tensor& score_logit, int label, double gamma) {
  const double s = score_logit.item();
  const double p = logistic(s);
  const double pc = clip_prob(p);
  const bool pos = label != 0;
  const double value = focal_term(pc, pos, gamma);
  double slope = 0.0;
  if (p > kProbClip && p < 1.0 - kProbClip)
    slope = focal_slope(pc, pos, gamma) * p * (1.0 - p);
  return record_op(Tensor::scalar(value), {score_logit},
                   [score_logit, slope](std::span<const double> g) {
                     score_logit.grad_buffer()[0] += g[0] * slope;
                   });
}

TotalLoss total_loss(const ForwardResult& pred, const Tensor& m_gt, int label,
                     const LossConfig& cfg) {
  for (double v : m_gt.data()) {
    if (v != 0.0 && v != 1.0)
      throw DomainError("total_loss: ground-truth mask must be binary");
  }
  Tensor seg = segmentation_loss(pred.map_logits, pred.confidence, m_gt, cfg);
  Tensor img = image_focal_loss(pred.score_logit, label, cfg.focal_gamma);
  TotalLoss out;
  out.value = add(seg, img);

  const auto z = pred.map_logits.data(), t = m_gt.data();
  double s_l1 = 0.0, s_focal = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = logistic(z[i]);
    s_l1 += std::fabs(p - t[i]);
    s_focal += focal_term(clip_prob(p), is_positive(t[i]), cfg.focal_gamma);
  }
  const double n = static_cast<double>(z.size());
  LossBreakdown& b = out.breakdown;
  b.l1 = s_l1 / n;
  b.focal_pixel = s_focal / n;
  b.l_base = b.l1 + cfg.beta * b.focal_pixel;
  b.l_seg = seg.item();
  b.l_img = img.item();
  b.total = out.value.item();
  return out;
}

}  // namespace avfm
