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

#include <exception>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace avfm::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kIoError = 3,
  kNonFiniteLoss = 4,
  kUndefinedMetric = 5,
};

/// Runs one stage. Results go to `out`, progress to `log`. Errors are thrown
/// as avfm exceptions; exit_code_for maps them.
void cmd_gen(const RunConfig& cfg, std::ostream& out, std::ostream& log);
void cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& log);
void cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& log);
void cmd_infer(const RunConfig& cfg, const std::filesystem::path& image, std::ostream& out,
               std::ostream& log);
void cmd_sweep(const RunConfig& cfg, std::ostream& out, std::ostream& log);

/// Default grid of a sweep knob; throws ConfigurationError for an unknown knob.
std::vector<double> default_sweep_grid(const std::string& knob);

int exit_code_for(const std::exception& e);

}  // namespace avfm::cli
