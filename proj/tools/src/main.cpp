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

// avfm: generate synthetic anomaly data, train, evaluate, infer and sweep.

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "avfm/errors.hpp"
#include "commands.hpp"

namespace {

using avfm::cli::RunConfig;

template <typename T>
void overlay(const std::optional<T>& flag, T& dst) {
  if (flag) dst = *flag;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot anomaly detection on procedurally generated data"};
  app.require_subcommand(1);

  std::optional<std::string> config_path, out, data, checkpoint, split, extractor, plan, finetune,
      knob;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, n, train_tags, eval_tags, iterations, batch, rank, warmup,
      shots, finetune_iterations, n_eval;
  std::optional<double> threshold, forced_fail, amp_min, amp_max, lr, weight_decay, grad_clip,
      smoothing;
  std::vector<double> values;
  std::string image;

  app.add_option("--config", config_path, "JSON run configuration; flags override it");
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--out", out, "Output directory");
  app.add_option("--workers", workers, "Worker threads for generation and scoring");
  auto* print_config =
      app.add_flag("--print-config", "Print the resolved configuration and exit");

  auto* gen = app.add_subcommand("gen", "Generate a synthetic triplet dataset");
  gen->add_option("--n", n, "Accepted samples to generate");
  gen->add_option("--split", split, "Class half to draw objects from: train or eval");
  gen->add_option("--train-tags", train_tags, "Object tags in the training half");
  gen->add_option("--eval-tags", eval_tags, "Object tags in the held-out half");
  gen->add_option("--threshold", threshold, "Filtering threshold on the distance score");
  gen->add_option("--forced-fail", forced_fail, "Probability of an unchanged anomalous image");
  gen->add_option("--amplitude-min", amp_min, "Lower bound of the defect strength");
  gen->add_option("--amplitude-max", amp_max, "Upper bound of the defect strength");
  gen->add_option("--extractor", extractor, "Filtering features: backbone or raw");
  auto* no_filter = gen->add_flag("--no-filtering", "Accept every sample, mask = region");
  auto* no_fg = gen->add_flag("--no-foreground-selection", "Sample regions over the whole image");

  auto* train = app.add_subcommand("train", "Train adapters and heads on a dataset");
  train->add_option("--data", data, "Dataset directory");
  train->add_option("--iterations", iterations, "Optimiser steps");
  train->add_option("--batch", batch, "Images per step");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
  train->add_option("--grad-clip", grad_clip, "Global gradient-norm clip, 0 disables");
  train->add_option("--plan", plan, "Adapter layout: qv_proj, qkv_proj, all_norms, all_linears, none");
  train->add_option("--rank", rank, "Adapter rank");
  train->add_option("--warmup-steps", warmup, "Backbone warm-up steps before training");
  auto* unfreeze = train->add_flag("--unfreeze-backbone", "Train backbone weights too");
  train->add_option("--finetune", finetune, "Checkpoint to finetune on normal images");
  train->add_option("--shots", shots, "Normal images used for finetuning");
  train->add_option("--finetune-iterations", finetune_iterations, "Finetuning steps");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--data", data, "Dataset directory");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file");
  eval->add_option("--smoothing", smoothing, "Gaussian sigma applied to anomaly maps");
  auto* save_maps = eval->add_flag("--save-maps", "Write 16-bit anomaly-map PNGs");

  auto* infer = app.add_subcommand("infer", "Score one image");
  infer->add_option("image", image, "PNG image")->required();
  infer->add_option("--checkpoint", checkpoint, "Checkpoint file");

  auto* sweep = app.add_subcommand("sweep", "Rerun the pipeline over a grid of one knob");
  sweep->add_option("--knob", knob, "threshold, rank, n_images or n_object_tags");
  sweep->add_option("--values", values, "Grid values (default: the knob's grid)");
  sweep->add_option("--n", n, "Training samples per grid point");
  sweep->add_option("--n-eval", n_eval, "Held-out samples per grid point");
  sweep->add_option("--iterations", iterations, "Optimiser steps per grid point");

  for (CLI::App* sub : {gen, train, eval, infer, sweep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return avfm::cli::kConfigError;
  }

  try {
    RunConfig cfg;
    if (config_path) cfg = avfm::cli::load_run_config(*config_path);
    overlay(seed, cfg.seed);
    overlay(out, cfg.out);
    overlay(workers, cfg.workers);
    overlay(data, cfg.data);
    overlay(checkpoint, cfg.checkpoint);
    overlay(n, cfg.gen.n);
    overlay(split, cfg.gen.split);
    overlay(train_tags, cfg.gen.train_tags);
    overlay(eval_tags, cfg.gen.eval_tags);
    overlay(threshold, cfg.gen.generator.threshold);
    overlay(forced_fail, cfg.gen.generator.forced_fail_prob);
    overlay(amp_min, cfg.gen.generator.amplitude_min);
    overlay(amp_max, cfg.gen.generator.amplitude_max);
    if (extractor) {
      if (*extractor == "backbone")
        cfg.gen.generator.extractor = avfm::ExtractorKind::backbone;
      else if (*extractor == "raw")
        cfg.gen.generator.extractor = avfm::ExtractorKind::raw_pixels;
      else
        throw avfm::ConfigurationError("--extractor must be backbone or raw");
    }
    if (no_filter->count()) cfg.gen.generator.filtering = false;
    if (no_fg->count()) cfg.gen.generator.foreground_selection = false;
    overlay(iterations, cfg.train.iterations);
    overlay(batch, cfg.train.batch_size);
    overlay(lr, cfg.train.lr);
    overlay(weight_decay, cfg.train.weight_decay);
    overlay(grad_clip, cfg.train.grad_clip);
    overlay(plan, cfg.plan);
    overlay(rank, cfg.backbone.adapter_rank);
    overlay(warmup, cfg.train.warmup_steps);
    if (unfreeze->count()) cfg.train.freeze_backbone = false;
    overlay(finetune, cfg.finetune.checkpoint);
    overlay(shots, cfg.finetune.shots);
    overlay(finetune_iterations, cfg.finetune.iterations);
    overlay(smoothing, cfg.eval.options.smoothing_sigma);
    if (save_maps->count()) cfg.eval.save_maps = true;
    overlay(knob, cfg.sweep.knob);
    if (!values.empty()) cfg.sweep.values = values;
    overlay(n_eval, cfg.sweep.n_eval);
    cfg.gen.generator.image_size = cfg.backbone.image_size;

    if (print_config->count()) {
      cfg.validate();
      std::cout << avfm::cli::run_config_to_json(cfg);
      return avfm::cli::kOk;
    }
    if (gen->parsed()) avfm::cli::cmd_gen(cfg, std::cout, std::cerr);
    if (train->parsed()) avfm::cli::cmd_train(cfg, std::cout, std::cerr);
    if (eval->parsed()) avfm::cli::cmd_eval(cfg, std::cout, std::cerr);
    if (infer->parsed()) avfm::cli::cmd_infer(cfg, image, std::cout, std::cerr);
    if (sweep->parsed()) avfm::cli::cmd_sweep(cfg, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return avfm::cli::exit_code_for(e);
  }
  return avfm::cli::kOk;
}
