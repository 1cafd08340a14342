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
#include <map>
#include <string>
#include <vector>

#include "avfm/backbone.hpp"
#include "avfm/rng.hpp"
#include "avfm/tensor.hpp"
#include "avfm/vocabulary.hpp"

namespace avfm {

/// Procedural analogue of a text prompt: which object on which background.
struct SceneSpec {
  std::string object_tag;
  std::string texture_tag;
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
};

struct Scene {
  Tensor image;    // [3×H×W], 8-bit levels in [0,1]
  Tensor fg_mask;  // [H×W], exact rasterised foreground
};

/// Foreground coverage bounds as fractions of the image area.
struct CoverageRange {
  double min = 0.10;
  double max = 0.60;
};

/// Deterministic in the spec. Throws VocabularyError for unknown tags.
Scene generate_normal(const SceneSpec& spec, const Vocabulary& vocab,
                      CoverageRange coverage = {});

/// Defect rectangle: centre (x, y) and extents (w, h) as sampled, and the
/// inclusive pixel bounds after clipping to the image.
struct RegionR {
  int x = 0, y = 0;
  int w = 0, h = 0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains(int px, int py) const {
    return px >= x0 && px <= x1 && py >= y0 && py <= y1;
  }
};

/// Clips [x − w/2, x + w/2] × [y − h/2, y + h/2] to a width × height image.
RegionR make_region(int x, int y, int w, int h, int width, int height);

struct RegionRanges {
  int w_min = 50, w_max = 350;
  int h_min = 50, h_max = 350;

  /// The 1024-pixel anchor ranges scaled linearly to `image_size`.
  static RegionRanges scaled(std::size_t image_size);
};

/// Centre uniform over foreground pixels, extents uniform integers.
/// Throws GenerationError on an empty foreground.
RegionR sample_region(const Tensor& fg_mask, const RegionRanges& ranges, Rng& rng);

enum class DefectFamily { color_shift, texture_swap, scratch, occluding_blob, erosion_speckle };

std::string family_name(DefectFamily f);
/// Keyword match on the anomaly tag, falling back to a hash of the tag.
DefectFamily defect_family(const std::string& anomaly_tag);

/// Blends a defect pattern into `region` with strength `amplitude` and a soft
/// border. Pixels outside the region are copied bit for bit; amplitude 0 or
/// `forced_fail` returns the input unchanged. The result is not quantised.
Tensor inpaint_defect(const Tensor& image, const Tensor& fg_mask,
                      const RegionR& region, const std::string& anomaly_tag,
                      double amplitude, bool forced_fail, Rng& rng);

/// Per-patch features used for filtering.
enum class ExtractorKind { backbone, raw_pixels };

struct FeatureExtractor {
  ExtractorKind kind = ExtractorKind::raw_pixels;
  std::size_t patch_size = 8;
  const BackboneState* backbone = nullptr;  // required for kind == backbone

  static FeatureExtractor raw(std::size_t patch_size);
  static FeatureExtractor from_backbone(const BackboneState& state);
  /// [N × feature dim] rows in patch order; raw patches are mean-centred.
  Tensor features(const Tensor& image) const;
};

/// 1 − cos(f, f_a) per patch, [gh×gw]. Two zero vectors give 0, one gives 1.
Tensor feature_distance_map(const FeatureExtractor& extractor, const Tensor& image,
                            const Tensor& anomalous);
/// Same, from precomputed features.
Tensor feature_distance_map(const Tensor& features, const Tensor& features_a,
                            std::size_t grid_h, std::size_t grid_w);

struct FilterResult {
  bool accepted = false;
  double distance_score = 0.0;  // max of the distance map
  Tensor mask;                  // [H×W], 0/1
};

/// Accept iff max(M_d) > T; the mask is (M_d > T) upsampled by nearest
/// neighbour.
FilterResult filter_and_mask(const Tensor& distance_map, double threshold,
                             std::size_t out_h, std::size_t out_w);

struct GeneratorConfig {
  std::size_t image_size = 64;
  CoverageRange coverage;
  double threshold = 0.3;
  double forced_fail_prob = 0.2;
  double amplitude_min = 0.15;  // log-uniform between min and max
  double amplitude_max = 0.9;
  bool filtering = true;             // false: accept everything, mask = R
  bool foreground_selection = true;  // false: centres drawn over the whole image
  ExtractorKind extractor = ExtractorKind::backbone;
  std::size_t workers = 1;
  std::size_t attempt_factor = 10;  // budget of attempts per requested sample

  void validate() const;
};

struct SampleTriplet {
  std::size_t id = 0;
  std::string object_tag, texture_tag, anomaly_tag;
  std::uint64_t seed = 0;
  Tensor normal;     // I
  Tensor anomalous;  // I_a
  Tensor mask;       // M
  Tensor fg_mask;
  RegionR region;
  double distance_score = 0.0;
  bool accepted = false;
  bool forced_fail = false;
  double amplitude = 0.0;
};

/// One attempt of the three-stage pipeline, fully determined by `seed`.
SampleTriplet generate_triplet(std::uint64_t seed, const std::vector<std::string>& objects,
                               const Vocabulary& vocab, const GeneratorConfig& cfg,
                               const FeatureExtractor& extractor);

struct DatasetStats {
  std::size_t requested = 0, accepted = 0, attempts = 0, rejected = 0;
  std::size_t forced_fail_attempts = 0, forced_fail_accepted = 0;
  double rejection_rate = 0.0;
  double avg_anomalous_area = 0.0;  // mean fraction of mask pixels
  std::vector<double> area_quantiles;  // min, 25%, median, 75%, max
  std::vector<std::size_t> area_histogram;  // 10 bins of width 1% of the image, last open
  std::map<std::string, std::size_t> object_counts, texture_counts, anomaly_counts;
};

struct Dataset {
  std::vector<SampleTriplet> samples;
  DatasetStats stats;
};

/// Attempts are seeded from `master_seed` and consumed in order until `n`
/// are accepted, so the result does not depend on the worker count. Throws
/// ConfigurationError when fewer than 1% of a 10·n budget are accepted.
Dataset generate_dataset(std::size_t n, const Vocabulary& vocab,
                         const std::vector<std::string>& objects,
                         const GeneratorConfig& cfg, const FeatureExtractor& extractor,
                         std::uint64_t master_seed);

/// Throws VocabularyError if any sample's object is in `held_out`.
void check_no_leakage(const Dataset& d, const std::vector<std::string>& held_out);

std::string stats_to_json(const DatasetStats& s);

/// meta.jsonl, normal/, anomalous/, mask/ and stats.json under `dir`.
void write_dataset(const Dataset& d, const std::filesystem::path& dir);
/// Reads images, masks and tags back; stats are not restored.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace avfm
