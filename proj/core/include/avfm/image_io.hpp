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

#include <filesystem>

#include "avfm/tensor.hpp"

namespace avfm {

/// Rounds every value in [0,1] to the nearest multiple of 1/255.
void quantize_8bit(std::span<double> values);

/// [3×H×W] in [0,1] → 8-bit RGB.
void write_png_rgb(const std::filesystem::path& path, const Tensor& image);
/// [H×W] → 8-bit grayscale; values > 0.5 become 255, the rest 0.
void write_png_mask(const std::filesystem::path& path, const Tensor& mask);
/// [H×W] in [0,1] → 16-bit grayscale scaled by 65535.
void write_png_gray16(const std::filesystem::path& path, const Tensor& map);

/// Any PNG → [3×H×W] in [0,1]. Throws IoError when unreadable.
Tensor read_png_rgb(const std::filesystem::path& path);
/// Any PNG → [H×W] in [0,1] (first channel, scaled by the bit depth).
Tensor read_png_gray(const std::filesystem::path& path);

}  // namespace avfm
