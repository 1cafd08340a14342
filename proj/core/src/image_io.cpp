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

#include "avfm/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "avfm/errors.hpp"

namespace avfm {

namespace {

std::uint16_t to_level(double v, double max_level) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * max_level));
}

// libpng's simplified API reports failures through the image struct, which
// keeps longjmp out of C++ frames.
template <typename Sample>
void write_png(const std::filesystem::path& path, std::size_t h, std::size_t w,
               png_uint_32 format, const std::vector<Sample>& samples) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, samples.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write '" + path.string() + "': " + msg);
  }
}

struct Decoded {
  std::size_t h = 0, w = 0;
  int channels = 0;
  double max_level = 255.0;
  std::vector<std::uint16_t> samples;
};

// Reads as 8-bit unless the file stores 16-bit samples.
Decoded read_png(const std::filesystem::path& path, bool rgb) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read '" + path.string() + "': " + img.message);
  const bool wide = (img.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  img.format = rgb ? (wide ? PNG_FORMAT_LINEAR_RGB : PNG_FORMAT_RGB)
                   : (wide ? PNG_FORMAT_LINEAR_Y : PNG_FORMAT_GRAY);
  Decoded d;
  d.h = img.height;
  d.w = img.width;
  d.channels = rgb ? 3 : 1;
  d.max_level = wide ? 65535.0 : 255.0;
  const std::size_t n = d.h * d.w * d.channels;
  bool ok;
  if (wide) {
    d.samples.resize(n);
    ok = png_image_finish_read(&img, nullptr, d.samples.data(), 0, nullptr);
  } else {
    std::vector<png_byte> bytes(n);
    ok = png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr);
    d.samples.assign(bytes.begin(), bytes.end());
  }
  if (!ok) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode '" + path.string() + "': " + msg);
  }
  return d;
}

}  // namespace

void quantize_8bit(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(to_level(v, 255.0)) / 255.0;
}

void write_png_rgb(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw DimensionError("write_png_rgb: expected [3xHxW], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::vector<png_byte> s(3 * plane);
  const auto v = image.data();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      s[3 * p + c] = static_cast<png_byte>(to_level(v[c * plane + p], 255.0));
  write_png(path, h, w, PNG_FORMAT_RGB, s);
}

void write_png_mask(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.rank() != 2)
    throw DimensionError("write_png_mask: expected [HxW], got " + shape_str(mask.shape()));
  std::vector<png_byte> s(mask.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = mask[i] > 0.5 ? 255 : 0;
  write_png(path, mask.dim(0), mask.dim(1), PNG_FORMAT_GRAY, s);
}

void write_png_gray16(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2)
    throw DimensionError("write_png_gray16: expected [HxW], got " + shape_str(map.shape()));
  std::vector<std::uint16_t> s(map.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = to_level(map[i], 65535.0);
  write_png(path, map.dim(0), map.dim(1), PNG_FORMAT_LINEAR_Y, s);
}

Tensor read_png_rgb(const std::filesystem::path& path) {
  const Decoded d = read_png(path, true);
  const std::size_t plane = d.h * d.w;
  std::vector<double> out(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      out[c * plane + p] = d.samples[3 * p + c] / d.max_level;
    }
  return Tensor({3, d.h, d.w}, std::move(out));
}

Tensor read_png_gray(const std::filesystem::path& path) {
  const Decoded d = read_png(path, false);
  std::vector<double> out(d.h * d.w);
  for (std::size_t p = 0; p < out.size(); ++p)
    out[p] = d.samples[p] / d.max_level;
  return Tensor({d.h, d.w}, std::move(out));
}

}  // namespace avfm
