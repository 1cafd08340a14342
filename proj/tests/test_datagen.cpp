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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avfm/datagen.hpp"
#include "avfm/errors.hpp"

namespace avfm {
namespace {

namespace fs = std::filesystem;

const Vocabulary& vocab() { return Vocabulary::builtin(); }

SceneSpec spec(std::uint64_t seed) {
  return SceneSpec{vocab().objects[3], vocab().textures[5], seed, 64};
}

GeneratorConfig raw_config() {
  GeneratorConfig c;
  c.extractor = ExtractorKind::raw_pixels;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every file under `dir`, relative path → bytes.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("avfm_dg_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST(GenerateNormal, DeterministicAndSeedSensitive) {
  const Scene a = generate_normal(spec(1), vocab()), b = generate_normal(spec(1), vocab());
  const Scene c = generate_normal(spec(2), vocab());
  EXPECT_TRUE(std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin()));
  EXPECT_FALSE(std::equal(a.image.data().begin(), a.image.data().end(), c.image.data().begin()));
  EXPECT_THROW(generate_normal(SceneSpec{"nope", vocab().textures[0], 1, 64}, vocab()),
               VocabularyError);
  EXPECT_THROW(generate_normal(SceneSpec{vocab().objects[0], "nope", 1, 64}, vocab()),
               VocabularyError);
}

TEST(GenerateNormal, CoverageWithinConfiguredRangeOver1000Seeds) {
  const CoverageRange cov;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    SceneSpec sp{vocab().objects[s % vocab().objects.size()],
                 vocab().textures[s % vocab().textures.size()], s, 32};
    const Scene sc = generate_normal(sp, vocab(), cov);
    double on = 0;
    for (double v : sc.fg_mask.data()) {
      ASSERT_TRUE(v == 0.0 || v == 1.0);
      on += v;
    }
    const double frac = on / static_cast<double>(sc.fg_mask.size());
    ASSERT_GE(frac, cov.min) << s;
    ASSERT_LE(frac, cov.max) << s;
    for (double v : sc.image.data()) ASSERT_EQ(v, std::round(v * 255.0) / 255.0);
  }
}

TEST(Region, ClippingArithmetic) {
  const RegionR r = make_region(10, 10, 350, 350, 1024, 1024);
  EXPECT_EQ(r.x0, 0);
  EXPECT_EQ(r.y0, 0);
  EXPECT_EQ(r.x1, 185);
  EXPECT_EQ(r.y1, 185);
  const RegionR e = make_region(1020, 5, 20, 4, 1024, 1024);
  EXPECT_EQ(e.x1, 1023);
  EXPECT_EQ(e.y0, 3);
  EXPECT_EQ(e.y1, 7);
}

TEST(Region, RangesScaleFromTheReferenceResolution) {
  const RegionRanges full = RegionRanges::scaled(1024);
  EXPECT_EQ(full.w_min, 50);
  EXPECT_EQ(full.w_max, 350);
  EXPECT_EQ(full.h_min, 50);
  EXPECT_EQ(full.h_max, 350);
  const RegionRanges half = RegionRanges::scaled(512);
  EXPECT_EQ(half.w_min, 25);
  EXPECT_EQ(half.w_max, 175);
}

TEST(Region, SinglePositivePixelForcesTheCentre) {
  Tensor fg = Tensor::zeros({256, 256});
  fg.mutable_data()[200 * 256 + 100] = 1.0;
  Rng rng(1);
  const RegionRanges ranges = RegionRanges::scaled(256);
  for (int i = 0; i < 20; ++i) {
    const RegionR r = sample_region(fg, ranges, rng);
    EXPECT_EQ(r.x, 100);
    EXPECT_EQ(r.y, 200);
    EXPECT_GE(r.w, ranges.w_min);
    EXPECT_LE(r.w, ranges.w_max);
    EXPECT_GE(r.h, ranges.h_min);
    EXPECT_LE(r.h, ranges.h_max);
  }
  EXPECT_THROW(sample_region(Tensor::zeros({8, 8}), ranges, rng), GenerationError);
}

TEST(Region, CentresAreUniformOverForeground) {
  Tensor fg = Tensor::zeros({4, 4});
  fg.mutable_data()[1] = fg.mutable_data()[6] = fg.mutable_data()[15] = 1.0;
  Rng rng(2);
  std::map<int, int> hits;
  for (int i = 0; i < 3000; ++i) {
    const RegionR r = sample_region(fg, RegionRanges{1, 2, 1, 2}, rng);
    ++hits[r.y * 4 + r.x];
  }
  ASSERT_EQ(hits.size(), 3u);
  for (auto [k, n] : hits) EXPECT_NEAR(n, 1000, 120) << k;
}

TEST(Inpaint, OutsideRegionBitIdenticalAndTrivialCases) {
  const Scene sc = generate_normal(spec(3), vocab());
  const RegionR r = make_region(30, 28, 14, 10, 64, 64);
  for (const char* tag : {"scratch", "stain", "hole", "rust", "misprint"}) {
    Rng rng(4);
    const Tensor out = inpaint_defect(sc.image, sc.fg_mask, r, tag, 0.8, false, rng);
    bool changed = false;
    for (std::size_t c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          const std::size_t i = (c * 64 + y) * 64 + x;
          if (!r.contains(x, y)) ASSERT_EQ(out[i], sc.image[i]) << tag;
          else changed |= out[i] != sc.image[i];
        }
    EXPECT_TRUE(changed) << tag;
    Rng rng2(4);
    const Tensor same = inpaint_defect(sc.image, sc.fg_mask, r, tag, 0.8, true, rng2);
    EXPECT_TRUE(std::equal(same.data().begin(), same.data().end(), sc.image.data().begin()));
    const Tensor zero = inpaint_defect(sc.image, sc.fg_mask, r, tag, 0.0, false, rng2);
    EXPECT_TRUE(std::equal(zero.data().begin(), zero.data().end(), sc.image.data().begin()));
  }
}

TEST(Inpaint, DefectFamiliesAreKeyedByTag) {
  EXPECT_EQ(defect_family("scratch"), DefectFamily::scratch);
  EXPECT_EQ(defect_family("hole"), DefectFamily::occluding_blob);
  EXPECT_EQ(defect_family("stain"), DefectFamily::color_shift);
  EXPECT_EQ(defect_family("rust"), DefectFamily::erosion_speckle);
  // Unknown tags still land deterministically on some family.
  EXPECT_EQ(defect_family("zzq"), defect_family("zzq"));
}

TEST(DistanceMap, CosineExamples) {
  const Tensor f({4, 2}, {1, 0, 1, 1, 0, 0, 0, 0});
  const Tensor g({4, 2}, {0, 1, -1, -1, 0, 0, 3, 0});
  const Tensor d = feature_distance_map(f, g, 2, 2);
  EXPECT_NEAR(d[0], 1.0, 1e-15);  // orthogonal
  EXPECT_NEAR(d[1], 2.0, 1e-15);  // antiparallel
  EXPECT_EQ(d[2], 0.0);           // both zero
  EXPECT_EQ(d[3], 1.0);           // one zero
  EXPECT_THROW(feature_distance_map(f, g, 3, 2), DimensionError);
}

TEST(DistanceMap, IdenticalImagesGiveZero) {
  const Scene sc = generate_normal(spec(5), vocab());
  const BackboneState bb = BackboneState::init(BackboneConfig{}, 1);
  for (const FeatureExtractor& e : {FeatureExtractor::raw(8), FeatureExtractor::from_backbone(bb)}) {
    const Tensor d = feature_distance_map(e, sc.image, sc.image);
    EXPECT_EQ(d.shape(), (Shape{8, 8}));
    for (double v : d.data()) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(Filter, SingleCellAboveThreshold) {
  Tensor md = Tensor::zeros({4, 4});
  md.mutable_data()[1 * 4 + 2] = 0.9;
  const FilterResult r = filter_and_mask(md, 0.3, 16, 16);
  EXPECT_TRUE(r.accepted);
  EXPECT_EQ(r.distance_score, 0.9);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      EXPECT_EQ(r.mask[y * 16 + x], (y / 4 == 1 && x / 4 == 2) ? 1.0 : 0.0);
  const FilterResult none = filter_and_mask(Tensor::zeros({4, 4}), 0.3, 16, 16);
  EXPECT_FALSE(none.accepted);
  EXPECT_EQ(none.distance_score, 0.0);
  for (double v : none.mask.data()) EXPECT_EQ(v, 0.0);
  // Acceptance is strict.
  md.mutable_data()[6] = 0.3;
  EXPECT_FALSE(filter_and_mask(md, 0.9, 16, 16).accepted);
}

TEST(Filter, DistanceNonDecreasingInAmplitudeWithRawFeatures) {
  const FeatureExtractor raw = FeatureExtractor::raw(8);
  for (std::uint64_t s = 10; s < 16; ++s) {
    const Scene sc = generate_normal(spec(s), vocab());
    Rng pick(s);
    const RegionR r = sample_region(sc.fg_mask, RegionRanges::scaled(64), pick);
    for (const char* tag : {"scratch", "stain", "hole", "rust"}) {
      double prev = -1.0;
      for (int k = 0; k <= 9; ++k) {
        const double amp = 0.1 * (k + 1);
        Rng rng(99);
        const Tensor a = inpaint_defect(sc.image, sc.fg_mask, r, tag, amp, false, rng);
        const Tensor d = feature_distance_map(raw, sc.image, a);
        const double D = *std::max_element(d.data().begin(), d.data().end());
        EXPECT_GE(D, prev - 1e-12) << "seed " << s << " tag " << tag << " amp " << amp;
        prev = D;
      }
    }
  }
}

TEST(Triplet, InvariantsOverManySeeds) {
  GeneratorConfig cfg = raw_config();
  cfg.forced_fail_prob = 0.3;
  const FeatureExtractor raw = FeatureExtractor::raw(8);
  std::size_t forced = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const SampleTriplet t = generate_triplet(s, vocab().objects, vocab(), cfg, raw);
    EXPECT_EQ(t.accepted, t.distance_score > cfg.threshold);
    EXPECT_TRUE(t.fg_mask[t.region.y * 64 + t.region.x] == 1.0);
    if (t.forced_fail) {
      ++forced;
      EXPECT_FALSE(t.accepted);
      EXPECT_EQ(t.distance_score, 0.0);
    }
    // Mask confined to the patch cells that intersect R.
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (t.mask[y * 64 + x] > 0.5) {
          ASSERT_GE(x / 8, t.region.x0 / 8);
          ASSERT_LE(x / 8, t.region.x1 / 8);
          ASSERT_GE(y / 8, t.region.y0 / 8);
          ASSERT_LE(y / 8, t.region.y1 / 8);
        }
  }
  EXPECT_GT(forced, 30u);
}

TEST(Triplet, UnfilteredMaskIsTheRegion) {
  GeneratorConfig cfg = raw_config();
  cfg.filtering = false;
  const SampleTriplet t = generate_triplet(7, vocab().objects, vocab(), cfg, FeatureExtractor::raw(8));
  EXPECT_TRUE(t.accepted);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) EXPECT_EQ(t.mask[y * 64 + x], t.region.contains(x, y) ? 1.0 : 0.0);
}

TEST(Dataset, DeterministicAcrossWorkerCounts) {
  GeneratorConfig cfg = raw_config();
  const std::vector<std::string> objs(vocab().objects.begin(), vocab().objects.begin() + 4);
  const FeatureExtractor raw = FeatureExtractor::raw(8);
  const Dataset a = generate_dataset(12, vocab(), objs, cfg, raw, 42);
  cfg.workers = 3;
  const Dataset b = generate_dataset(12, vocab(), objs, cfg, raw, 42);
  ASSERT_EQ(a.samples.size(), 12u);
  ASSERT_EQ(b.samples.size(), 12u);
  EXPECT_EQ(a.stats.attempts, b.stats.attempts);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(a.samples[i].seed, b.samples[i].seed);
    EXPECT_EQ(a.samples[i].id, i);
    EXPECT_TRUE(std::equal(a.samples[i].anomalous.data().begin(), a.samples[i].anomalous.data().end(),
                           b.samples[i].anomalous.data().begin()));
    EXPECT_TRUE(a.samples[i].accepted);
    EXPECT_TRUE(std::find(objs.begin(), objs.end(), a.samples[i].object_tag) != objs.end());
  }
  EXPECT_EQ(stats_to_json(a.stats), stats_to_json(b.stats));
}

TEST(Dataset, StatsAreConsistent) {
  const std::vector<std::string> objs(vocab().objects.begin(), vocab().objects.begin() + 3);
  const Dataset d = generate_dataset(10, vocab(), objs, raw_config(), FeatureExtractor::raw(8), 5);
  const DatasetStats& s = d.stats;
  EXPECT_EQ(s.accepted, 10u);
  EXPECT_EQ(s.rejected, s.attempts - s.accepted);
  EXPECT_DOUBLE_EQ(s.rejection_rate, static_cast<double>(s.rejected) / s.attempts);
  double area = 0;
  for (const SampleTriplet& t : d.samples) {
    double on = 0;
    for (double v : t.mask.data()) on += v;
    area += on / static_cast<double>(t.mask.size());
  }
  EXPECT_NEAR(s.avg_anomalous_area, area / 10.0, 1e-12);
  std::size_t hist = 0, objects = 0;
  for (auto n : s.area_histogram) hist += n;
  for (auto& [k, n] : s.object_counts) objects += n;
  EXPECT_EQ(hist, 10u);
  EXPECT_EQ(objects, 10u);
  ASSERT_EQ(s.area_quantiles.size(), 5u);
  EXPECT_TRUE(std::is_sorted(s.area_quantiles.begin(), s.area_quantiles.end()));
}

TEST(Dataset, UnreachableThresholdIsAConfigurationError) {
  GeneratorConfig cfg = raw_config();
  cfg.threshold = 1.99;
  cfg.amplitude_min = cfg.amplitude_max = 0.01;
  EXPECT_THROW(generate_dataset(2, vocab(), {vocab().objects[0]}, cfg, FeatureExtractor::raw(8), 1),
               ConfigurationError);
  cfg = raw_config();
  cfg.forced_fail_prob = 1.0;
  EXPECT_THROW(generate_dataset(2, vocab(), {vocab().objects[0]}, cfg, FeatureExtractor::raw(8), 1),
               ConfigurationError);
}

TEST(Dataset, LeakageCheck) {
  const std::vector<std::string> objs = {vocab().objects[0], vocab().objects[1]};
  const Dataset d = generate_dataset(4, vocab(), objs, raw_config(), FeatureExtractor::raw(8), 3);
  EXPECT_NO_THROW(check_no_leakage(d, {vocab().objects[2]}));
  EXPECT_THROW(check_no_leakage(d, {d.samples[0].object_tag}), VocabularyError);
}

TEST_F(TempDir, WriteReadRoundTripAndLayout) {
  const std::vector<std::string> objs(vocab().objects.begin(), vocab().objects.begin() + 2);
  const Dataset d = generate_dataset(5, vocab(), objs, raw_config(), FeatureExtractor::raw(8), 9);
  write_dataset(d, dir_);
  for (const char* f : {"meta.jsonl", "stats.json", "normal/000000.png", "anomalous/000004.png",
                        "mask/000002.png"})
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;

  std::ifstream meta(dir_ / "meta.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(meta, line)) {
    const auto j = nlohmann::json::parse(line);
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    std::sort(keys.begin(), keys.end());
    EXPECT_EQ(keys, (std::vector<std::string>{"D", "accepted", "anomaly", "forced_fail", "id",
                                              "object", "region", "seed", "texture"}));
    EXPECT_EQ(j["id"].get<std::size_t>(), n);
    EXPECT_EQ(j["seed"].get<std::uint64_t>(), d.samples[n].seed);
    ++n;
  }
  EXPECT_EQ(n, 5u);

  const Dataset back = read_dataset(dir_);
  ASSERT_EQ(back.samples.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    const SampleTriplet &a = d.samples[i], &b = back.samples[i];
    EXPECT_EQ(a.object_tag, b.object_tag);
    EXPECT_EQ(a.anomaly_tag, b.anomaly_tag);
    EXPECT_EQ(a.region.x, b.region.x);
    EXPECT_EQ(a.region.w, b.region.w);
    EXPECT_TRUE(std::equal(a.normal.data().begin(), a.normal.data().end(), b.normal.data().begin()));
    EXPECT_TRUE(std::equal(a.anomalous.data().begin(), a.anomalous.data().end(),
                           b.anomalous.data().begin()));
    EXPECT_TRUE(std::equal(a.mask.data().begin(), a.mask.data().end(), b.mask.data().begin()));
  }

  // Writing again is byte-identical.
  const auto first = tree(dir_);
  fs::remove_all(dir_);
  write_dataset(d, dir_);
  EXPECT_EQ(tree(dir_), first);
}

TEST_F(TempDir, MissingDirectoryIsIoError) {
  EXPECT_THROW(read_dataset(dir_ / "absent"), IoError);
}

}  // namespace
}  // namespace avfm
