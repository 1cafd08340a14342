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

#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "avfm/errors.hpp"
#include "avfm/image_io.hpp"
#include "avfm/protocol.hpp"
#include "avfm/vocabulary.hpp"
#include "json.hpp"

namespace avfm::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

void prepare_out(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw IoError("cannot create '" + cfg.out + "': " + ec.message());
  write_text(fs::path(cfg.out) / "config.json", run_config_to_json(cfg));
}

ClassSplit split_of(const RunConfig& cfg) {
  return ClassSplit::draw(Vocabulary::builtin(), cfg.gen.train_tags, cfg.gen.eval_tags,
                          stream_seed(cfg, SeedStream::split));
}

ModelState initial_model(const RunConfig& cfg) {
  return ModelState::create(cfg.backbone, cfg.plan, stream_seed(cfg, SeedStream::backbone),
                            stream_seed(cfg, SeedStream::heads));
}

GeneratorConfig generator_of(const RunConfig& cfg) {
  GeneratorConfig g = cfg.gen.generator;
  g.image_size = cfg.backbone.image_size;
  g.workers = cfg.workers;
  return g;
}

std::string require_path(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigurationError(std::string("missing ") + what);
  return value;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

}  // namespace

void cmd_gen(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  cfg.validate();
  const ClassSplit split = split_of(cfg);
  const bool train_half = cfg.gen.split == "train";
  const auto& objects = train_half ? split.train : split.eval;
  const ModelState model = initial_model(cfg);
  const GeneratorConfig g = generator_of(cfg);
  const FeatureExtractor extractor = g.extractor == ExtractorKind::backbone
                                         ? FeatureExtractor::from_backbone(model.backbone)
                                         : FeatureExtractor::raw(cfg.backbone.patch_size);
  log << "generating " << cfg.gen.n << " samples over " << objects.size() << " "
      << cfg.gen.split << " classes\n";
  const Dataset d = generate_dataset(
      cfg.gen.n, Vocabulary::builtin(), objects, g, extractor,
      stream_seed(cfg, train_half ? SeedStream::train_data : SeedStream::eval_data));
  check_no_leakage(d, train_half ? split.eval : split.train);
  prepare_out(cfg);
  write_dataset(d, cfg.out);
  out << nlohmann::json::parse(stats_to_json(d.stats)).dump() << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  cfg.validate();
  const Dataset d = read_dataset(require_path(cfg.data, "dataset directory (--data)"));
  prepare_out(cfg);
  std::ofstream csv(fs::path(cfg.out) / "loss.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write loss.csv under '" + cfg.out + "'");
  csv << loss_csv_header();
  LossBreakdown last;
  const StepCallback on_step = [&](std::size_t step, const LossBreakdown& b) {
    csv << loss_csv_row(step, b);
    last = b;
    if (step % 50 == 0) log << "step " << step << " loss " << b.total << "\n";
  };

  Checkpoint ckpt;
  if (!cfg.finetune.checkpoint.empty()) {
    const Checkpoint base = load_checkpoint(cfg.finetune.checkpoint);
    std::vector<Tensor> normals;
    for (const SampleTriplet& t : d.samples) {
      if (normals.size() == cfg.finetune.shots) break;
      normals.push_back(t.normal);
    }
    log << "finetuning on " << normals.size() << " normal images\n";
    ckpt = finetune_few_shot(base, normals, cfg.finetune.iterations, on_step);
  } else {
    TrainConfig t = cfg.train;
    t.seed = stream_seed(cfg, SeedStream::training);
    ckpt = train_zero_shot(initial_model(cfg), d, t, on_step);
  }
  const fs::path path = fs::path(cfg.out) / "checkpoint.avfm";
  save_checkpoint(ckpt, path);
  nlohmann::ordered_json summary = {{"checkpoint", path.string()},
                                    {"iteration", ckpt.iteration},
                                    {"final_loss", last.total},
                                    {"trainable_parameters", ckpt.trainable_parameters()}};
  out << summary.dump() << "\n";
}

void cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  cfg.validate();
  const Checkpoint ckpt = load_checkpoint(require_path(cfg.checkpoint, "checkpoint (--checkpoint)"));
  const Dataset d = read_dataset(require_path(cfg.data, "dataset directory (--data)"));
  const std::vector<EvalSample> samples = eval_samples_from(d);
  EvalOptions opts = cfg.eval.options;
  opts.workers = cfg.workers;
  log << "evaluating " << samples.size() << " images\n";
  const std::vector<ScoredImage> scored = score_samples(ckpt.model, samples, opts);
  const MetricsReport r = compute_report(scored, opts.roc_points);

  prepare_out(cfg);
  const fs::path dir(cfg.out);
  write_text(dir / "report.json", report_to_json(r));
  write_text(dir / "report.txt", report_to_table(r));
  write_text(dir / "roc_points.csv", roc_to_csv(r));
  if (cfg.eval.save_maps) {
    fs::create_directories(dir / "maps");
    for (std::size_t i = 0; i < scored.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.png", scored[i].id);
      const Shape shape = samples[i].mask.shape();
      write_png_gray16(dir / "maps" / name, Tensor(shape, scored[i].anomaly_map));
    }
  }
  out << report_to_table(r);
  if (!r.overall.errors.empty()) {
    std::string msg = "undefined metrics on this evaluation set:";
    for (const std::string& e : r.overall.errors) msg += " " + e + ";";
    throw UndefinedMetricError(msg);
  }
}

void cmd_infer(const RunConfig& cfg, const fs::path& image, std::ostream& out,
               std::ostream& log) {
  const Checkpoint ckpt = load_checkpoint(require_path(cfg.checkpoint, "checkpoint (--checkpoint)"));
  const Tensor img = read_png_rgb(image);
  const std::size_t size = ckpt.model.backbone.config.image_size;
  if (img.dim(1) != size || img.dim(2) != size)
    throw ConfigurationError("infer: image is " + std::to_string(img.dim(2)) + "x" +
                             std::to_string(img.dim(1)) + ", the model expects " +
                             std::to_string(size) + "x" + std::to_string(size));
  const Prediction p = predict(img, ckpt.model);
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw IoError("cannot create '" + cfg.out + "': " + ec.message());
  const fs::path map_path = fs::path(cfg.out) / (image.stem().string() + "_map.png");
  write_png_gray16(map_path, p.anomaly_map);
  log << "wrote " << map_path.string() << "\n";
  out << std::fixed << std::setprecision(9) << p.image_score << "\n";
}

std::vector<double> default_sweep_grid(const std::string& knob) {
  if (knob == "threshold") return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  if (knob == "rank") return {32, 64, 128};
  if (knob == "n_images") return {100, 500, 1000};
  if (knob == "n_object_tags") return {1, 3, 6};
  throw ConfigurationError("sweep: unknown knob '" + knob +
                           "' (expected threshold, rank, n_images or n_object_tags)");
}

void cmd_sweep(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  cfg.validate();
  const std::string& knob = cfg.sweep.knob;
  const std::vector<double> grid =
      cfg.sweep.values.empty() ? default_sweep_grid(knob) : cfg.sweep.values;
  default_sweep_grid(knob);  // rejects unknown knobs when values are given
  prepare_out(cfg);

  std::ostringstream csv;
  csv << "knob,value,rejection_rate,avg_anomalous_area,img_auroc,img_f1max,px_auroc,px_f1max\n";
  out << csv.str();
  for (double v : grid) {
    ProtocolConfig p;
    p.backbone = cfg.backbone;
    p.plan = cfg.plan;
    p.n_train = cfg.gen.n;
    p.n_eval = cfg.sweep.n_eval;
    p.train_tags = cfg.gen.train_tags;
    p.eval_tags = cfg.gen.eval_tags;
    p.train_data = generator_of(cfg);
    p.eval_data = generator_of(cfg);
    p.train = cfg.train;
    p.eval = cfg.eval.options;
    p.eval.workers = cfg.workers;
    p.seed = cfg.seed;
    const auto as_count = [&](double x) {
      if (!(x >= 1) || x != std::floor(x))
        throw ConfigurationError("sweep: " + knob + " values must be positive integers");
      return static_cast<std::size_t>(x);
    };
    if (knob == "threshold")
      p.train_data.threshold = v;
    else if (knob == "rank")
      p.backbone.adapter_rank = as_count(v);
    else if (knob == "n_images")
      p.n_train = as_count(v);
    else
      p.train_tags = as_count(v);
    log << "sweep " << knob << "=" << v << "\n";
    const ProtocolRun run = run_protocol(p);
    std::ostringstream row;
    row << knob << ',' << v << ',' << std::setprecision(10) << run.train_set.stats.rejection_rate
        << ',' << run.train_set.stats.avg_anomalous_area << ',' << fmt(run.result.overall.image_auroc)
        << ',' << fmt(run.result.overall.image_f1max) << ',' << fmt(run.result.overall.pixel_auroc)
        << ',' << fmt(run.result.overall.pixel_f1max) << '\n';
    out << row.str() << std::flush;
    csv << row.str();
  }
  write_text(fs::path(cfg.out) / "sweep.csv", csv.str());
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigurationError*>(&e) || dynamic_cast<const VocabularyError*>(&e))
    return kConfigError;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const LoadError*>(&e)) return kIoError;
  if (dynamic_cast<const NonFiniteLossError*>(&e)) return kNonFiniteLoss;
  if (dynamic_cast<const UndefinedMetricError*>(&e)) return kUndefinedMetric;
  return kFailure;
}

}  // namespace avfm::cli
