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
#include <optional>
#include <string>
#include <vector>

#include "avfm/heads.hpp"
#include "avfm/tensor.hpp"

namespace avfm {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 0 or 1

  void add(double score, int label) {
    scores.push_back(score);
    labels.push_back(label);
  }
  std::size_t size() const { return scores.size(); }
  std::size_t positives() const;
  std::size_t negatives() const { return size() - positives(); }
};

/// Mann–Whitney AUROC with ties counted ½, via rank sums.
double auroc(const ScoredSet& s);
/// Best F1 over thresholds at every distinct score (positive iff score ≥ t).
double f1_max(const ScoredSet& s);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};
/// One point per distinct score, from the highest threshold down; evenly
/// thinned to at most `max_points` when non-zero.
std::vector<RocPoint> roc_curve(const ScoredSet& s, std::size_t max_points = 0);

/// Metrics over one slice of an evaluation; a metric is empty when it is
/// undefined for the slice, with the reason in `errors`.
struct SliceMetrics {
  std::optional<double> image_auroc, image_f1max, pixel_auroc, pixel_f1max;
  std::size_t images = 0, anomalous_images = 0;
  std::size_t pixels = 0, anomalous_pixels = 0;
  std::vector<std::string> errors;

  bool complete() const {
    return image_auroc && image_f1max && pixel_auroc && pixel_f1max;
  }
};

struct MetricsReport {
  SliceMetrics overall;
  std::map<std::string, SliceMetrics> per_class;
  std::vector<RocPoint> image_roc, pixel_roc;
};

/// One evaluated image: model outputs next to ground truth.
struct ScoredImage {
  std::size_t id = 0;
  std::string class_tag;
  int label = 0;
  double image_score = 0.0;
  std::vector<double> anomaly_map;  // row-major, image resolution
  std::vector<double> mask;         // 0/1, same length
};

struct EvalSample {
  std::size_t id = 0;
  std::string class_tag;
  int label = 0;
  Tensor image;  // [3×H×W]
  Tensor mask;   // [H×W]
};

struct EvalOptions {
  double smoothing_sigma = 0.0;  // Gaussian blur of anomaly maps, 0 = off
  std::size_t workers = 1;
  std::size_t roc_points = 2000;
};

/// Pools every pixel of every image into one set (and per class).
MetricsReport compute_report(const std::vector<ScoredImage>& images,
                             std::size_t roc_points = 2000);

std::vector<ScoredImage> score_samples(const ModelState& model,
                                       const std::vector<EvalSample>& samples,
                                       const EvalOptions& opts = {});

MetricsReport evaluate_dataset(const ModelState& model,
                               const std::vector<EvalSample>& samples,
                               const EvalOptions& opts = {});

/// In-place separable Gaussian blur of an h×w map.
void gaussian_blur(std::vector<double>& map, std::size_t h, std::size_t w,
                   double sigma);

std::string report_to_json(const MetricsReport& r);
/// Aligned columns: class, img_auroc, img_f1, px_auroc, px_f1.
std::string report_to_table(const MetricsReport& r);
/// level,threshold,fpr,tpr
std::string roc_to_csv(const MetricsReport& r);

}  // namespace avfm
