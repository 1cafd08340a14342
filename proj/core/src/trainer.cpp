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

#include "avfm/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "avfm/errors.hpp"
#include "avfm/inject.hpp"
#include "avfm/rng.hpp"
#include "json.hpp"

namespace avfm {

namespace {

using Json = nlohmann::ordered_json;

struct Example {
  const Tensor* image;
  const Tensor* mask;
  int label;
  std::size_t id;  // sample id, for diagnostics
};

using Draw = std::function<Example(Rng&)>;

void set_trainable(ModelState& model, bool freeze_backbone) {
  set_backbone_trainable(model.backbone, !freeze_backbone);
  for (Tensor& t : model.trainable(false)) t.set_requires_grad(true);
}

void check_adapters(const ModelState& model, bool freeze_backbone) {
  if (freeze_backbone && model.backbone.adapter_parameter_count() == 0)
    throw ContractError("training: a frozen backbone needs injected adapters");
}

Checkpoint run_training(const ModelState& init, const Draw& draw, const TrainConfig& cfg,
                        Rng rng, std::size_t start_iteration, const StepCallback& on_step) {
  cfg.validate();
  check_adapters(init, cfg.freeze_backbone);
  Checkpoint out;
  out.model = init.clone();
  out.train = cfg;
  set_trainable(out.model, cfg.freeze_backbone);
  AdamW opt(out.model.trainable(!cfg.freeze_backbone), cfg);
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    LossBreakdown mean;
    std::vector<std::size_t> ids;
    opt.zero_grad();
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Example ex = draw(rng);
      ids.push_back(ex.id);
      GradTape tape;
      TotalLoss loss;
      Tensor scaled;
      {
        GradTape::Recording rec(tape);
        ForwardResult fr = forward_model(*ex.image, out.model);
        loss = total_loss(fr, *ex.mask, ex.label, cfg.loss);
        scaled = scale(loss.value, inv_b);
      }
      if (!std::isfinite(loss.breakdown.total)) {
        std::ostringstream os;
        os << "non-finite loss at iteration " << start_iteration + it + 1 << ", batch ids [";
        for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
        os << "]";
        throw NonFiniteLossError(os.str());
      }
      backward(tape, scaled);
      const LossBreakdown& l = loss.breakdown;
      mean.l1 += l.l1 * inv_b;
      mean.focal_pixel += l.focal_pixel * inv_b;
      mean.l_base += l.l_base * inv_b;
      mean.l_seg += l.l_seg * inv_b;
      mean.l_img += l.l_img * inv_b;
      mean.total += l.total * inv_b;
    }
    if (cfg.grad_clip > 0) clip_grad_norm(opt.params(), cfg.grad_clip);
    opt.step();
    if (on_step) on_step(start_iteration + it + 1, mean);
  }
  opt.zero_grad();
  out.iteration = start_iteration + cfg.iterations;
  out.rng_state = rng.state();
  return out;
}

Json config_json(const BackboneConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},   {"num_blocks", c.num_blocks},
          {"num_heads", c.num_heads},   {"mlp_ratio", c.mlp_ratio},
          {"adapter_rank", c.adapter_rank}};
}

Json train_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed},
          {"freeze_backbone", c.freeze_backbone},
          {"warmup_steps", c.warmup_steps},
          {"loss",
           {{"beta", c.loss.beta},
            {"alpha_conf", c.loss.alpha_conf},
            {"focal_gamma", c.loss.focal_gamma},
            {"use_confidence", c.loss.use_confidence}}}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.iterations = j.at("iterations");
  c.batch_size = j.at("batch_size");
  c.lr = j.at("lr");
  c.weight_decay = j.at("weight_decay");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.eps = j.at("eps");
  c.grad_clip = j.at("grad_clip");
  c.seed = j.at("seed");
  c.freeze_backbone = j.at("freeze_backbone");
  c.warmup_steps = j.at("warmup_steps");
  const auto& l = j.at("loss");
  c.loss.beta = l.at("beta");
  c.loss.alpha_conf = l.at("alpha_conf");
  c.loss.focal_gamma = l.at("focal_gamma");
  c.loss.use_confidence = l.at("use_confidence");
  return c;
}

std::size_t count(const std::vector<NamedTensor>& ts) {
  std::size_t n = 0;
  for (const auto& [name, t] : ts) n += t.size();
  return n;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Validates framing and returns the header text and the payload offset.
std::pair<std::string, std::size_t> split_checkpoint(const std::string& bytes,
                                                     const std::string& where) {
  if (bytes.size() < 12)
    throw LoadError(where + ": truncated at byte " + std::to_string(bytes.size()) +
                    ", need 12 bytes of framing");
  if (bytes.compare(0, 4, "AVFM") != 0) throw LoadError(where + ": bad magic at offset 0");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion)
    throw LoadError(where + ": format version " + std::to_string(version) + " at offset 4, expected " +
                    std::to_string(kCheckpointVersion));
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (12 + static_cast<std::size_t>(header_len) > bytes.size())
    throw LoadError(where + ": header of " + std::to_string(header_len) +
                    " bytes at offset 12 runs past end of file (" + std::to_string(bytes.size()) +
                    " bytes)");
  return {bytes.substr(12, header_len), 12 + static_cast<std::size_t>(header_len)};
}

}  // namespace

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.batch_size = 32;
  return c;
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigurationError("train: iterations must be >= 1");
  if (batch_size < 1) throw ConfigurationError("train: batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigurationError("train: lr must be > 0");
  if (!(weight_decay >= 0)) throw ConfigurationError("train: weight_decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
    throw ConfigurationError("train: adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigurationError("train: eps must be > 0");
  if (!(grad_clip >= 0)) throw ConfigurationError("train: grad_clip must be >= 0");
  loss.validate();
}

AdamW::AdamW(std::vector<Tensor> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      lr_(cfg.lr),
      wd_(cfg.weight_decay),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.eps) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m_[k][i] / c1, v_hat = v_[k][i] / c2;
      w[i] *= 1.0 - lr_ * wd_;
      w[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
    round_to_float32(w);
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double f = max_norm / norm;
    for (const Tensor& p : params)
      if (p.has_grad())
        for (double& g : p.grad_buffer()) g *= f;
  }
  return norm;
}

std::size_t Checkpoint::adapter_parameters() const {
  return model.backbone.adapter_parameter_count();
}

std::size_t Checkpoint::trainable_parameters() const {
  std::size_t n = adapter_parameters() + model.head_parameter_count();
  if (!train.freeze_backbone) n += model.backbone.weight_parameter_count();
  return n;
}

Checkpoint train_zero_shot(const ModelState& init, const Dataset& data, const TrainConfig& cfg,
                           const StepCallback& on_step) {
  if (data.samples.empty()) throw ContractError("train_zero_shot: empty dataset");
  const ModelState* start = &init;
  ModelState warmed;
  if (cfg.warmup_steps > 0) {
    warmed = init.clone();
    std::vector<Tensor> images;
    for (const SampleTriplet& t : data.samples) images.push_back(t.normal);
    warmup_backbone(warmed.backbone, images, cfg.warmup_steps, 1e-3, mix_seed(cfg.seed, 7));
    start = &warmed;
  }
  const Tensor zeros = Tensor::zeros(data.samples.front().mask.shape());
  const Draw draw = [&](Rng& rng) {
    const auto i = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(data.samples.size()) - 1));
    const SampleTriplet& t = data.samples[i];
    if (rng.bernoulli(0.5)) return Example{&t.anomalous, &t.mask, 1, t.id};
    return Example{&t.normal, &zeros, 0, t.id};
  };
  return run_training(*start, draw, cfg, Rng(cfg.seed), 0, on_step);
}

Checkpoint finetune_few_shot(const Checkpoint& ckpt, const std::vector<Tensor>& normal_images,
                             std::size_t iterations, const StepCallback& on_step) {
  if (normal_images.empty()) throw ContractError("finetune_few_shot: no normal images given");
  if (iterations == 0) {
    Checkpoint same = ckpt;
    same.model = ckpt.model.clone();
    return same;
  }
  TrainConfig cfg = ckpt.train;
  cfg.iterations = iterations;
  const Tensor zeros = Tensor::zeros({normal_images.front().dim(1), normal_images.front().dim(2)});
  const Draw draw = [&](Rng& rng) {
    const auto i = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(normal_images.size()) - 1));
    return Example{&normal_images[i], &zeros, 0, i};
  };
  Rng rng(cfg.seed);
  if (!ckpt.rng_state.empty()) rng.set_state(ckpt.rng_state);
  Checkpoint out = run_training(ckpt.model, draw, cfg, rng, ckpt.iteration, on_step);
  out.train = ckpt.train;
  return out;
}

std::vector<double> warmup_backbone(BackboneState& backbone, const std::vector<Tensor>& images,
                                    std::size_t steps, double lr, std::uint64_t seed) {
  if (images.empty()) throw ContractError("warmup_backbone: no images");
  const BackboneConfig& c = backbone.config;
  Rng rng(seed);
  std::vector<double> probe(c.patch_dim() * c.embed_dim);
  for (double& w : probe) w = rng.truncated_normal(0.02);
  Tensor probe_w = Tensor::parameter({c.patch_dim(), c.embed_dim}, std::move(probe));
  Tensor probe_b = Tensor::parameter({c.patch_dim()}, std::vector<double>(c.patch_dim(), 0.0));
  set_backbone_trainable(backbone, true);
  std::vector<Tensor> params;
  for (auto& [name, t] : backbone.weights()) params.push_back(t);
  params.push_back(probe_w);
  params.push_back(probe_b);
  TrainConfig oc;
  oc.lr = lr;
  oc.weight_decay = 0.0;
  AdamW opt(params, oc);

  const std::size_t n = c.num_patches(), p = c.patch_size, g = c.grid();
  std::vector<double> losses;
  for (std::size_t step = 0; step < steps; ++step) {
    const Tensor& img = images[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(images.size()) - 1))];
    std::vector<bool> hidden(n);
    for (std::size_t i = 0; i < n; ++i) hidden[i] = rng.bernoulli(0.5);
    std::vector<double> masked(img.data().begin(), img.data().end());
    for (std::size_t i = 0; i < n; ++i) {
      if (!hidden[i]) continue;
      const std::size_t gy = i / g, gx = i % g;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            masked[(ch * c.image_size + gy * p + y) * c.image_size + gx * p + x] = 0.0;
    }
    const Tensor target = unfold_patches(img, c.image_size, p);
    std::vector<double> weight(target.size(), 0.0);
    std::size_t hidden_count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (hidden[i]) {
        ++hidden_count;
        for (std::size_t k = 0; k < c.patch_dim(); ++k) weight[i * c.patch_dim() + k] = 1.0;
      }
    if (hidden_count == 0) continue;
    const double norm = 1.0 / static_cast<double>(hidden_count * c.patch_dim());
    for (double& w : weight) w *= norm;
    GradTape tape;
    Tensor loss;
    {
      GradTape::Recording rec(tape);
      const BackboneOutput out = forward(Tensor(img.shape(), std::move(masked)), backbone, false);
      const Tensor recon = linear(out.patch_tokens, probe_w, probe_b);
      const Tensor diff = sub(recon, target);
      loss = sum(mul(mul(diff, diff), Tensor(target.shape(), std::move(weight))));
    }
    opt.zero_grad();
    backward(tape, loss);
    opt.step();
    losses.push_back(loss.item());
  }
  opt.zero_grad();
  set_backbone_trainable(backbone, false);
  return losses;
}

std::string loss_csv_header() { return "step,l1,focal_pixel,l_seg,l_img,total\n"; }

std::string loss_csv_row(std::size_t step, const LossBreakdown& b) {
  std::ostringstream os;
  os << std::setprecision(10) << step << ',' << b.l1 << ',' << b.focal_pixel << ',' << b.l_seg
     << ',' << b.l_img << ',' << b.total << '\n';
  return os.str();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const ModelState& m = ckpt.model;
  const BackboneState& bb = m.backbone;
  Json sites = Json::array();
  for (std::size_t b = 0; b < bb.plan.num_blocks(); ++b) {
    Json block = Json::array();
    for (Site s : bb.plan.sites(b)) block.push_back(site_name(s));
    sites.push_back(block);
  }
  const auto tensors = m.named_tensors();
  Json list = Json::array();
  for (const auto& [name, t] : tensors) list.push_back({{"name", name}, {"shape", t.shape()}});
  Json header;
  header["backbone"] = config_json(bb.config);
  header["plan"] = {{"name", bb.plan.name()}, {"sites", sites}};
  header["train"] = train_json(ckpt.train);
  header["iteration"] = ckpt.iteration;
  header["rng_state"] = ckpt.rng_state;
  header["census"] = {{"backbone", bb.weight_parameter_count()},
                      {"adapters", bb.adapter_parameter_count()},
                      {"decoder", count(m.decoder.weights())},
                      {"score_head", count(m.score_head.weights())},
                      {"trainable", ckpt.trainable_parameters()},
                      {"total", count(tensors)}};
  header["tensors"] = list;
  const std::string text = header.dump();

  std::string bytes = "AVFM";
  put_u32(bytes, kCheckpointVersion);
  put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  for (const auto& [name, t] : tensors)
    for (double v : t.data()) {
      const auto f = static_cast<float>(v);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(bytes, u);
    }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_checkpoint_header(const std::filesystem::path& path) {
  return split_checkpoint(read_file(path), path.string()).first;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  const std::string bytes = read_file(path);
  const auto [text, payload] = split_checkpoint(bytes, where);
  Checkpoint ckpt;
  std::vector<std::pair<std::string, Shape>> listed;
  try {
    const auto h = nlohmann::json::parse(text);
    const auto& b = h.at("backbone");
    BackboneConfig cfg;
    cfg.image_size = b.at("image_size");
    cfg.patch_size = b.at("patch_size");
    cfg.embed_dim = b.at("embed_dim");
    cfg.num_blocks = b.at("num_blocks");
    cfg.num_heads = b.at("num_heads");
    cfg.mlp_ratio = b.at("mlp_ratio");
    cfg.adapter_rank = b.at("adapter_rank");
    cfg.validate();
    std::vector<std::vector<Site>> per_block;
    for (const auto& block : h.at("plan").at("sites")) {
      per_block.emplace_back();
      for (const auto& s : block) per_block.back().push_back(site_from_name(s.get<std::string>()));
    }
    const InjectionPlan plan(h.at("plan").at("name").get<std::string>(), std::move(per_block));
    ckpt.model = ModelState::create(cfg, plan, 0, 0);
    ckpt.train = train_from_json(h.at("train"));
    ckpt.iteration = h.at("iteration");
    ckpt.rng_state = h.at("rng_state");
    for (const auto& t : h.at("tensors"))
      listed.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(where + ": malformed header at offset 12: " + e.what());
  } catch (const Error& e) {
    throw LoadError(where + ": inconsistent header: " + e.what());
  }

  const auto tensors = ckpt.model.named_tensors();
  if (tensors.size() != listed.size())
    throw LoadError(where + ": header lists " + std::to_string(listed.size()) +
                    " tensors, architecture has " + std::to_string(tensors.size()));
  std::size_t offset = payload;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto& [name, t] = tensors[k];
    if (listed[k].first != name || listed[k].second != t.shape())
      throw LoadError(where + ": tensor " + std::to_string(k) + " is '" + listed[k].first + "' " +
                      shape_str(listed[k].second) + ", expected '" + name + "' " +
                      shape_str(t.shape()));
    const std::size_t need = 4 * t.size();
    if (offset + need > bytes.size())
      throw LoadError(where + ": truncated in tensor '" + name + "' at offset " +
                      std::to_string(offset) + ", need " + std::to_string(need) +
                      " bytes, file has " + std::to_string(bytes.size()));
    Tensor handle = t;
    auto dst = handle.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const std::uint32_t u = get_u32(bytes, offset + 4 * i);
      float f;
      std::memcpy(&f, &u, 4);
      dst[i] = static_cast<double>(f);
    }
    offset += need;
  }
  if (offset != bytes.size())
    throw LoadError(where + ": " + std::to_string(bytes.size() - offset) +
                    " unexpected trailing bytes at offset " + std::to_string(offset));
  return ckpt;
}

}  // namespace avfm
