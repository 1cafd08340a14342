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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "avfm/errors.hpp"
#include "avfm/inject.hpp"
#include "avfm/trainer.hpp"
#include "support/models.hpp"

namespace avfm {
namespace {

namespace fs = std::filesystem;

// Triplets on the tiny configuration: the anomalous half brightens the mask rectangle.
Dataset tiny_dataset(std::size_t n, std::uint64_t seed) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    auto [image, mask] = testing::tiny_example(seed + i);
    SampleTriplet t;
    t.id = i;
    t.object_tag = "obj";
    t.normal = image;
    std::vector<double> a(image.data().begin(), image.data().end());
    const std::size_t hw = mask.size();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < hw; ++p)
        if (mask[p] > 0.5) a[c * hw + p] = c == 0 ? 1.0 : 0.0;
    t.anomalous = Tensor(image.shape(), std::move(a));
    t.mask = mask;
    t.accepted = true;
    d.samples.push_back(std::move(t));
  }
  return d;
}

TrainConfig quick_config(std::size_t iterations) {
  TrainConfig c;
  c.iterations = iterations;
  c.batch_size = 2;
  c.lr = 1e-3;
  c.seed = 3;
  return c;
}

std::vector<double> flatten(const ModelState& m) {
  std::vector<double> out;
  for (auto& [name, t] : m.named_tensors()) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

class TempFile : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = fs::temp_directory_path() /
            ("avfm_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
  }
  void TearDown() override { fs::remove(path_); }
  std::string bytes() const {
    std::ifstream in(path_, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }
  void put(const std::string& b) const { std::ofstream(path_, std::ios::binary) << b; }
  fs::path path_;
};

TEST(AdamW, HandSteppedTraceOnTwoParameters) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  Tensor w = Tensor::parameter({2}, {1.0, -2.0});
  AdamW opt({w}, cfg);
  const double grads[3][2] = {{0.5, -1.0}, {0.25, 2.0}, {-0.5, 0.0}};
  // Reference trace in plain scalars.
  double ref[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 3; ++t) {
    w.zero_grad();
    w.grad_buffer()[0] = grads[t - 1][0];
    w.grad_buffer()[1] = grads[t - 1][1];
    opt.step();
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] = static_cast<float>(ref[i] * (1 - 0.1 * 0.01) - 0.1 * mh / (std::sqrt(vh) + 1e-8));
      EXPECT_EQ(w[i], ref[i]) << "step " << t << " entry " << i;
    }
  }
  // First step by hand: decay 1 → 0.999, then one lr-sized move against the gradient sign.
  EXPECT_EQ(opt.steps(), 3u);
  Tensor x = Tensor::parameter({1}, {1.0});
  AdamW one({x}, cfg);
  x.grad_buffer()[0] = 0.5;
  one.step();
  EXPECT_NEAR(x[0], 0.899, 1e-6);
}

TEST(AdamW, ZeroGradientAndZeroDecayIsANoOp) {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  Tensor w = Tensor::parameter({3}, {0.5, -0.25, 2.0});
  AdamW opt({w}, cfg);
  for (int i = 0; i < 5; ++i) {
    opt.zero_grad();
    opt.step();
  }
  EXPECT_EQ(w[0], 0.5);
  EXPECT_EQ(w[1], -0.25);
  EXPECT_EQ(w[2], 2.0);
}

TEST(AdamW, DescendsOnASquare) {
  TrainConfig cfg;
  cfg.lr = 0.05;
  Tensor x = Tensor::parameter({1}, {1.0});
  AdamW opt({x}, cfg);
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    opt.zero_grad();
    GradTape tape;
    Tensor loss;
    {
      GradTape::Recording rec(tape);
      loss = sum(mul(x, x));
    }
    backward(tape, loss);
    opt.step();
    EXPECT_LT(std::fabs(x[0]), prev);
    prev = std::fabs(x[0]);
  }
}

TEST(ClipGradNorm, ScalesToTheBound) {
  Tensor a = Tensor::parameter({1}, {0.0}), b = Tensor::parameter({1}, {0.0});
  a.grad_buffer()[0] = 3.0;
  b.grad_buffer()[0] = 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm({a, b}, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm({a, b}, 10.0), 1.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
}

TEST(TrainConfig, DefaultsAndValidation) {
  const TrainConfig d;
  EXPECT_EQ(d.iterations, 500u);
  EXPECT_EQ(d.lr, 1e-4);
  EXPECT_EQ(d.batch_size, 8u);
  EXPECT_EQ(TrainConfig::full_scale().batch_size, 32u);
  EXPECT_EQ(TrainConfig::full_scale().iterations, 500u);
  TrainConfig c;
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigurationError);
  c = TrainConfig{};
  c.iterations = 0;
  EXPECT_THROW(c.validate(), ConfigurationError);
}

TEST(TrainZeroShot, OverfitsAFixedFourSampleBatch) {
  const ModelState init = ModelState::create(BackboneConfig::tiny(), "qv_proj", 1, 2);
  const Dataset d = tiny_dataset(4, 10);
  TrainConfig cfg = quick_config(50);
  cfg.batch_size = 4;
  std::vector<double> losses;
  train_zero_shot(init, d, cfg, [&](std::size_t, const LossBreakdown& b) { losses.push_back(b.total); });
  ASSERT_EQ(losses.size(), 50u);
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += losses[i];
    tail += losses[45 + i];
  }
  EXPECT_LE(tail, 0.5 * head) << "first " << head / 5 << " last " << tail / 5;
}

TEST(TrainZeroShot, BitReproducibleAndBackboneFrozen) {
  const ModelState init = ModelState::create(BackboneConfig::tiny(), "qv_proj", 1, 2);
  const Dataset d = tiny_dataset(3, 20);
  std::vector<double> la, lb;
  const Checkpoint a = train_zero_shot(init, d, quick_config(6),
                                       [&](std::size_t, const LossBreakdown& b) { la.push_back(b.total); });
  const Checkpoint b = train_zero_shot(init, d, quick_config(6),
                                       [&](std::size_t, const LossBreakdown& b) { lb.push_back(b.total); });
  EXPECT_EQ(la, lb);
  EXPECT_EQ(flatten(a.model), flatten(b.model));
  EXPECT_EQ(a.rng_state, b.rng_state);
  EXPECT_EQ(a.iteration, 6u);

  const auto before = init.backbone.weights(), after = a.model.backbone.weights();
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_TRUE(std::equal(before[i].second.data().begin(), before[i].second.data().end(),
                           after[i].second.data().begin()))
        << before[i].first;
  // The adapters did move, and the initial state was left alone.
  EXPECT_NE(flatten(a.model), flatten(init));
  EXPECT_EQ(flatten(init), flatten(ModelState::create(BackboneConfig::tiny(), "qv_proj", 1, 2)));
}

TEST(TrainZeroShot, UnfrozenBackboneMoves) {
  const ModelState init = ModelState::create(BackboneConfig::tiny(), "none", 1, 2);
  TrainConfig cfg = quick_config(2);
  cfg.freeze_backbone = false;
  const Checkpoint c = train_zero_shot(init, tiny_dataset(2, 30), cfg);
  EXPECT_NE(flatten(c.model), flatten(init));
  EXPECT_GT(c.trainable_parameters(), init.backbone.weight_parameter_count());
}

TEST(TrainZeroShot, ContractErrors) {
  const ModelState bare = ModelState::create(BackboneConfig::tiny(), "none", 1, 2);
  EXPECT_THROW(train_zero_shot(bare, tiny_dataset(2, 1), quick_config(1)), ContractError);
  const ModelState m = ModelState::create(BackboneConfig::tiny(), "qv_proj", 1, 2);
  EXPECT_THROW(train_zero_shot(m, Dataset{}, quick_config(1)), ContractError);
}

TEST(TrainZeroShot, NonFiniteLossNamesIterationAndSamples) {
  const ModelState m = ModelState::create(BackboneConfig::tiny(), "qv_proj", 1, 2);
  Dataset d = tiny_dataset(1, 40);
  d.samples[0].normal.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  d.samples[0].anomalous.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_zero_shot(m, d, quick_config(2));
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("iteration"), std::string::npos) << what;
    EXPECT_NE(what.find("0"), std::string::npos) << what;
  }
}

TEST(Census, TrainableCountIsAdaptersPlusHeads) {
  const ModelState init = ModelState::create(BackboneConfig::tiny(), "qv_proj", 1, 2);
  const Checkpoint c = train_zero_shot(init, tiny_dataset(1, 50), quick_config(1));
  std::size_t heads = 0;
  for (auto& [n, t] : init.decoder.weights()) heads += t.size();
  for (auto& [n, t] : init.score_head.weights()) heads += t.size();
  const std::size_t adapters =
      expected_adapter_census(init.backbone.config, init.backbone.plan, init.backbone.config.adapter_rank);
  EXPECT_EQ(c.adapter_parameters(), adapters);
  EXPECT_EQ(c.trainable_parameters(), adapters + heads);
}

TEST(FinetuneFewShot, ZeroIterationsEmptyListAndContinuation) {
  const ModelState init = ModelState::create(BackboneConfig::tiny(), "qv_proj", 1, 2);
  const Checkpoint c = train_zero_shot(init, tiny_dataset(2, 60), quick_config(3));
  const std::vector<Tensor> shots = {testing::tiny_example(70).first, testing::tiny_example(71).first};
  const Checkpoint same = finetune_few_shot(c, shots, 0);
  EXPECT_EQ(flatten(same.model), flatten(c.model));
  EXPECT_EQ(same.iteration, c.iteration);
  EXPECT_THROW(finetune_few_shot(c, {}, 5), ContractError);

  std::vector<double> seg;
  const Checkpoint f = finetune_few_shot(c, shots, 4, [&](std::size_t, const LossBreakdown& b) {
    seg.push_back(b.l_seg);
  });
  EXPECT_EQ(f.iteration, c.iteration + 4);
  EXPECT_EQ(seg.size(), 4u);
  EXPECT_NE(flatten(f.model), flatten(c.model));
  const auto bb0 = c.model.backbone.weights(), bb1 = f.model.backbone.weights();
  for (std::size_t i = 0; i < bb0.size(); ++i)
    EXPECT_TRUE(std::equal(bb0[i].second.data().begin(), bb0[i].second.data().end(),
                           bb1[i].second.data().begin()));
  // Deterministic continuation.
  EXPECT_EQ(flatten(finetune_few_shot(c, shots, 4).model), flatten(f.model));
}

TEST(Warmup, ReducesReconstructionLossAndKeepsBackboneFrozen) {
  BackboneState bb = BackboneState::init(BackboneConfig::tiny(), 5);
  std::vector<Tensor> images;
  for (int i = 0; i < 4; ++i) images.push_back(testing::tiny_example(80 + i).first);
  const std::vector<double> losses = warmup_backbone(bb, images, 30, 1e-3, 9);
  ASSERT_EQ(losses.size(), 30u);
  EXPECT_LT(losses.back(), losses.front());
  for (auto& [n, t] : bb.weights()) EXPECT_FALSE(t.requires_grad()) << n;
}

TEST(LossCsv, HeaderAndRow) {
  EXPECT_EQ(loss_csv_header(), "step,l1,focal_pixel,l_seg,l_img,total\n");
  LossBreakdown b;
  b.l1 = 0.5;
  b.total = 2.0;
  const std::string row = loss_csv_row(7, b);
  EXPECT_EQ(row.rfind("7,", 0), 0u);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 5);
  EXPECT_EQ(row.back(), '\n');
}

TEST_F(TempFile, SaveLoadRoundTripIsBitExact) {
  const ModelState init = ModelState::create(BackboneConfig::tiny(), "qv_proj", 1, 2);
  const Checkpoint c = train_zero_shot(init, tiny_dataset(2, 90), quick_config(3));
  save_checkpoint(c, path_);
  const Checkpoint back = load_checkpoint(path_);
  EXPECT_EQ(flatten(back.model), flatten(c.model));
  EXPECT_EQ(back.iteration, c.iteration);
  EXPECT_EQ(back.rng_state, c.rng_state);
  EXPECT_EQ(back.train.lr, c.train.lr);
  const Tensor img = testing::tiny_example(91).first;
  const Prediction p0 = predict(img, c.model), p1 = predict(img, back.model);
  EXPECT_EQ(p0.image_score, p1.image_score);
  for (std::size_t i = 0; i < p0.anomaly_map.size(); ++i)
    ASSERT_EQ(p0.anomaly_map[i], p1.anomaly_map[i]);

  const auto header = nlohmann::json::parse(read_checkpoint_header(path_));
  EXPECT_EQ(header["census"]["adapters"].get<std::size_t>(),
            expected_adapter_census(c.model.backbone.config, c.model.backbone.plan,
                                    c.model.backbone.config.adapter_rank));
  EXPECT_EQ(header["census"]["trainable"].get<std::size_t>(), c.trainable_parameters());
  EXPECT_EQ(header["plan"]["name"], "qv_proj");

  // Saving the loaded checkpoint reproduces the file.
  const std::string first = bytes();
  save_checkpoint(back, path_);
  EXPECT_EQ(bytes(), first);
}

TEST_F(TempFile, CorruptFilesAreLoadErrors) {
  const ModelState init = ModelState::create(BackboneConfig::tiny(), "qv_proj", 1, 2);
  Checkpoint c;
  c.model = init.clone();
  save_checkpoint(c, path_);
  const std::string good = bytes();

  std::string bad = good;
  bad[0] = 'X';
  put(bad);
  EXPECT_THROW(load_checkpoint(path_), LoadError);

  bad = good;
  bad[4] = static_cast<char>(kCheckpointVersion + 1);
  put(bad);
  EXPECT_THROW(load_checkpoint(path_), LoadError);

  put(good.substr(0, good.size() - 3));
  try {
    load_checkpoint(path_);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }

  put(good + "x");
  EXPECT_THROW(load_checkpoint(path_), LoadError);
  put(good.substr(0, 6));
  EXPECT_THROW(load_checkpoint(path_), LoadError);
  fs::remove(path_);
  EXPECT_THROW(load_checkpoint(path_), IoError);
}

}  // namespace
}  // namespace avfm
