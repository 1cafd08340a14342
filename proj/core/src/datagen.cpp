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

#include "avfm/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "avfm/errors.hpp"
#include "avfm/image_io.hpp"
#include "avfm/parallel.hpp"
#include "json.hpp"

namespace avfm {

namespace {

using Rgb = std::array<double, 3>;

enum class TextureFamily { gradient, value_noise, stripes, checker };
constexpr int kTextureFamilies = 4;

struct TextureParams {
  TextureFamily family = TextureFamily::gradient;
  Rgb c0{}, c1{};
  double scale = 8.0;  // cell or period in pixels
  double angle = 0.0;
  double phase = 0.0;
  std::uint64_t noise_seed = 0;
};

Rgb random_color(Rng& rng) {
  return {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
}

// Second colour at a visible distance from the first.
Rgb contrasting(const Rgb& c, Rng& rng) {
  Rgb out;
  for (int k = 0; k < 3; ++k) {
    const double delta = rng.uniform(0.15, 0.45);
    out[k] = c[k] + (c[k] > 0.5 ? -delta : delta);
  }
  return out;
}

// Class-level parameters from the tag, per-scene jitter from `scene`.
TextureParams texture_for_tag(const std::string& tag, std::size_t image_size, Rng& scene,
                              int avoid_family = -1) {
  Rng rng(tag_hash(tag));
  int family = static_cast<int>(rng.uniform_int(0, kTextureFamilies - 1));
  if (family == avoid_family) family = (family + 1) % kTextureFamilies;
  TextureParams p;
  p.family = static_cast<TextureFamily>(family);
  p.c0 = random_color(rng);
  p.c1 = contrasting(p.c0, rng);
  const double unit = static_cast<double>(image_size) / 64.0;
  p.scale = rng.uniform(4.0, 14.0) * unit;
  p.angle = rng.uniform(0.0, std::numbers::pi);
  for (int k = 0; k < 3; ++k) {
    p.c0[k] = std::clamp(p.c0[k] + scene.uniform(-0.04, 0.04), 0.0, 1.0);
    p.c1[k] = std::clamp(p.c1[k] + scene.uniform(-0.04, 0.04), 0.0, 1.0);
  }
  p.angle += scene.uniform(-0.2, 0.2);
  p.phase = scene.uniform(0.0, 1.0);
  p.noise_seed = scene.next_u64();
  return p;
}

TextureParams random_texture(std::size_t image_size, Rng& rng) {
  TextureParams p;
  p.family = static_cast<TextureFamily>(rng.uniform_int(0, kTextureFamilies - 1));
  p.c0 = random_color(rng);
  for (int k = 0; k < 3; ++k) p.c1[k] = p.c0[k] > 0.5 ? p.c0[k] - 0.6 : p.c0[k] + 0.6;
  p.scale = rng.uniform(2.0, 6.0) * static_cast<double>(image_size) / 64.0;
  p.angle = rng.uniform(0.0, std::numbers::pi);
  p.phase = rng.uniform(0.0, 1.0);
  p.noise_seed = rng.next_u64();
  return p;
}

double lattice_value(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t key = static_cast<std::uint64_t>(ix) * 0x9E3779B1ULL ^
                            static_cast<std::uint64_t>(iy) * 0x85EBCA77ULL;
  return static_cast<double>(mix_seed(seed, key) >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
  const double a = lattice_value(seed, ix, iy), b = lattice_value(seed, ix + 1, iy);
  const double c = lattice_value(seed, ix, iy + 1), d = lattice_value(seed, ix + 1, iy + 1);
  return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty;
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Rgb sample_texture(const TextureParams& p, double x, double y, double size) {
  const double ca = std::cos(p.angle), sa = std::sin(p.angle);
  const double u = x * ca + y * sa, v = -x * sa + y * ca;
  switch (p.family) {
    case TextureFamily::gradient:
      return mix(p.c0, p.c1, std::clamp(u / size + 0.5 * p.phase, 0.0, 1.0));
    case TextureFamily::value_noise: {
      const double n = 0.65 * value_noise(p.noise_seed, x / p.scale, y / p.scale) +
                       0.35 * value_noise(p.noise_seed ^ 1, 2.0 * x / p.scale, 2.0 * y / p.scale);
      return mix(p.c0, p.c1, n);
    }
    case TextureFamily::stripes: {
      const double s = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (u / p.scale + p.phase));
      return mix(p.c0, p.c1, s);
    }
    case TextureFamily::checker: {
      const auto i = static_cast<std::int64_t>(std::floor(u / p.scale + p.phase));
      const auto j = static_cast<std::int64_t>(std::floor(v / p.scale + p.phase));
      return ((i + j) & 1) ? p.c1 : p.c0;
    }
  }
  return p.c0;
}

// Star-shaped outline: a smooth blob or a polygon, class-specific harmonics.
struct Outline {
  bool polygon = false;
  double cx = 0, cy = 0, r0 = 1, rotation = 0;
  std::array<double, 3> harmonic_amp{}, harmonic_phase{};
  std::vector<double> vertex_radius;  // relative, polygon only

  bool inside(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    if (!polygon) {
      const double r = std::hypot(dx, dy);
      const double theta = std::atan2(dy, dx) - rotation;
      double rel = 1.0;
      for (int k = 0; k < 3; ++k)
        rel += harmonic_amp[k] * std::cos((k + 2) * theta + harmonic_phase[k]);
      return r <= r0 * rel;
    }
    // Even-odd crossing test on the vertex ring.
    const std::size_t n = vertex_radius.size();
    bool in = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const double ti = rotation + 2.0 * std::numbers::pi * i / n;
      const double tj = rotation + 2.0 * std::numbers::pi * j / n;
      const double xi = r0 * vertex_radius[i] * std::cos(ti), yi = r0 * vertex_radius[i] * std::sin(ti);
      const double xj = r0 * vertex_radius[j] * std::cos(tj), yj = r0 * vertex_radius[j] * std::sin(tj);
      if ((yi > dy) != (yj > dy) && dx < (xj - xi) * (dy - yi) / (yj - yi) + xi) in = !in;
    }
    return in;
  }
};

Outline outline_for_tag(const std::string& tag, std::size_t image_size, Rng& scene) {
  Rng rng(tag_hash(tag) ^ 0x5bd1e995ULL);
  Outline s;
  s.polygon = rng.bernoulli(0.4);
  for (int k = 0; k < 3; ++k) {
    s.harmonic_amp[k] = rng.uniform(0.0, 0.12);
    s.harmonic_phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  if (s.polygon) {
    const auto sides = static_cast<std::size_t>(rng.uniform_int(3, 8));
    s.vertex_radius.resize(sides);
    for (double& r : s.vertex_radius) r = rng.uniform(0.9, 1.1) * scene.uniform(0.9, 1.1);
  }
  const double size = static_cast<double>(image_size);
  s.cx = size * (0.5 + scene.uniform(-0.08, 0.08));
  s.cy = size * (0.5 + scene.uniform(-0.08, 0.08));
  s.rotation = scene.uniform(0.0, 2.0 * std::numbers::pi);
  return s;
}

std::vector<double> rasterise(const Outline& s, std::size_t size, double& coverage) {
  std::vector<double> mask(size * size, 0.0);
  std::size_t on = 0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      if (s.inside(x + 0.5, y + 0.5)) {
        mask[y * size + x] = 1.0;
        ++on;
      }
  coverage = static_cast<double>(on) / static_cast<double>(size * size);
  return mask;
}

// Keyword families; first match wins.
const std::vector<std::pair<DefectFamily, std::vector<std::string>>>& family_keywords() {
  static const std::vector<std::pair<DefectFamily, std::vector<std::string>>> table = {
      {DefectFamily::scratch,
       {"scratch", "crack", "split", "tear", "torn", "cut", "fractur", "broken", "chip", "snap"}},
      {DefectFamily::erosion_speckle,
       {"mold", "spot", "pit", "erod", "corro", "rot", "speck", "dust", "fray", "peel", "worn",
        "wear", "rust", "flak"}},
      {DefectFamily::occluding_blob,
       {"dent", "hole", "punctur", "missing", "bulg", "lump", "bruis", "blister", "bent",
        "deform", "leak", "swollen", "crush", "squash"}},
      {DefectFamily::color_shift,
       {"discolor", "stain", "fade", "oxidiz", "burn", "yellow", "tarnish", "bleach", "blacken",
        "overripe", "dirty", "smudge", "ink", "scorch", "dull"}},
      {DefectFamily::texture_swap,
       {"wrinkl", "textur", "uneven", "rough", "mush", "dried", "shrink", "warp", "lint", "pill"}},
  };
  return table;
}

// Distance-based weight that is 1 in the interior and falls off linearly
// over the outer band of the region.
double border_weight(const RegionR& r, int px, int py) {
  const int d = std::min({px - r.x0, r.x1 - px, py - r.y0, r.y1 - py}) + 1;
  const int extent = std::min(r.x1 - r.x0 + 1, r.y1 - r.y0 + 1);
  const int band = std::max(1, extent / 4);
  return std::min(1.0, static_cast<double>(d) / band);
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

}  // namespace

Scene generate_normal(const SceneSpec& spec, const Vocabulary& vocab, CoverageRange coverage) {
  if (!vocab.has_object(spec.object_tag))
    throw VocabularyError("unknown object tag '" + spec.object_tag + "'");
  if (!vocab.has_texture(spec.texture_tag))
    throw VocabularyError("unknown texture tag '" + spec.texture_tag + "'");
  if (spec.image_size < 8) throw ConfigurationError("scene: image_size must be >= 8");
  if (!(coverage.min > 0 && coverage.min < coverage.max && coverage.max < 1))
    throw ConfigurationError("scene: coverage range must satisfy 0 < min < max < 1");

  const std::size_t size = spec.image_size;
  const double area = static_cast<double>(size * size);
  Rng scene(spec.seed);
  const TextureParams bg = texture_for_tag(spec.texture_tag, size, scene);
  const TextureParams fg = texture_for_tag(spec.object_tag, size, scene,
                                           static_cast<int>(bg.family));
  Outline shape = outline_for_tag(spec.object_tag, size, scene);

  const double span = coverage.max - coverage.min;
  const double target = coverage.min + span * scene.uniform(0.1, 0.85);
  shape.r0 = std::sqrt(target * area / std::numbers::pi);
  double cov = 0.0;
  std::vector<double> mask;
  for (int iter = 0; iter < 40; ++iter) {
    mask = rasterise(shape, size, cov);
    if (cov >= coverage.min && cov <= coverage.max && std::fabs(cov - target) < 0.25 * span)
      break;
    shape.r0 *= std::sqrt(target / std::max(cov, 1.0 / area));
  }
  if (cov < coverage.min || cov > coverage.max)
    throw GenerationError("scene: foreground coverage " + std::to_string(cov) +
                          " outside the configured range");

  const double fsize = static_cast<double>(size);
  const double shade_dir = scene.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<double> img(3 * size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const std::size_t i = y * size + x;
      Rgb c;
      if (mask[i] > 0) {
        c = sample_texture(fg, px, py, fsize);
        // Directional shading so objects read as solid.
        const double t = ((px - shape.cx) * std::cos(shade_dir) +
                          (py - shape.cy) * std::sin(shade_dir)) / (2.0 * shape.r0);
        const double shade = 0.9 + 0.1 * std::clamp(t, -1.0, 1.0);
        for (double& v : c) v *= shade;
      } else {
        c = sample_texture(bg, px, py, fsize);
      }
      for (std::size_t k = 0; k < 3; ++k) img[k * size * size + i] = c[k];
    }
  quantize_8bit(img);
  return {Tensor({3, size, size}, std::move(img)), Tensor({size, size}, std::move(mask))};
}

RegionR make_region(int x, int y, int w, int h, int width, int height) {
  RegionR r;
  r.x = x;
  r.y = y;
  r.w = w;
  r.h = h;
  r.x0 = std::max(0, x - w / 2);
  r.x1 = std::min(width - 1, x + w / 2);
  r.y0 = std::max(0, y - h / 2);
  r.y1 = std::min(height - 1, y + h / 2);
  return r;
}

RegionRanges RegionRanges::scaled(std::size_t image_size) {
  const double f = static_cast<double>(image_size) / 1024.0;
  RegionRanges r;
  r.w_min = r.h_min = std::max(1, static_cast<int>(std::lround(50 * f)));
  r.w_max = r.h_max = std::max(r.w_min, static_cast<int>(std::lround(350 * f)));
  return r;
}

RegionR sample_region(const Tensor& fg_mask, const RegionRanges& ranges, Rng& rng) {
  if (fg_mask.rank() != 2) throw DimensionError("sample_region: mask must be [HxW]");
  if (ranges.w_min < 1 || ranges.h_min < 1 || ranges.w_min > ranges.w_max ||
      ranges.h_min > ranges.h_max)
    throw ConfigurationError("sample_region: invalid extent ranges");
  std::vector<std::size_t> positives;
  for (std::size_t i = 0; i < fg_mask.size(); ++i)
    if (fg_mask[i] > 0.5) positives.push_back(i);
  if (positives.empty()) throw GenerationError("sample_region: empty foreground");
  const auto pick = positives[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(positives.size()) - 1))];
  const auto width = static_cast<int>(fg_mask.dim(1));
  const auto height = static_cast<int>(fg_mask.dim(0));
  const int w = static_cast<int>(rng.uniform_int(ranges.w_min, ranges.w_max));
  const int h = static_cast<int>(rng.uniform_int(ranges.h_min, ranges.h_max));
  return make_region(static_cast<int>(pick % width), static_cast<int>(pick / width), w, h,
                     width, height);
}

std::string family_name(DefectFamily f) {
  switch (f) {
    case DefectFamily::color_shift: return "color_shift";
    case DefectFamily::texture_swap: return "texture_swap";
    case DefectFamily::scratch: return "scratch";
    case DefectFamily::occluding_blob: return "occluding_blob";
    case DefectFamily::erosion_speckle: return "erosion_speckle";
  }
  return "unknown";
}

DefectFamily defect_family(const std::string& anomaly_tag) {
  for (const auto& [family, words] : family_keywords())
    for (const std::string& w : words)
      if (anomaly_tag.find(w) != std::string::npos) return family;
  return static_cast<DefectFamily>(tag_hash(anomaly_tag) % 5);
}

Tensor inpaint_defect(const Tensor& image, const Tensor& fg_mask, const RegionR& region,
                      const std::string& anomaly_tag, double amplitude, bool forced_fail,
                      Rng& rng) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw DimensionError("inpaint_defect: image must be [3xHxW], got " + shape_str(image.shape()));
  const auto height = static_cast<int>(image.dim(1)), width = static_cast<int>(image.dim(2));
  if (fg_mask.shape() != Shape{image.dim(1), image.dim(2)})
    throw DimensionError("inpaint_defect: foreground mask extents differ from the image");
  if (region.x0 < 0 || region.y0 < 0 || region.x1 >= width || region.y1 >= height ||
      region.x0 > region.x1 || region.y0 > region.y1)
    throw ContractError("inpaint_defect: region outside the image");
  if (amplitude < 0 || amplitude > 1) throw DomainError("inpaint_defect: amplitude outside [0,1]");

  const DefectFamily family = defect_family(anomaly_tag);
  const std::size_t size = image.dim(1);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  // Pattern parameters are drawn before the early exit so every call consumes
  // the same random stream.
  Rgb shift;
  {
    double norm = 0;
    for (double& s : shift) {
      s = rng.normal();
      norm += s * s;
    }
    const double mag = rng.uniform(0.8, 1.2) / std::sqrt(std::max(norm, 1e-12));
    for (double& s : shift) s *= mag;
  }
  const TextureParams swap = random_texture(size, rng);
  const Rgb solid = random_color(rng);
  const bool bright = rng.bernoulli(0.5);
  const auto strokes = static_cast<int>(rng.uniform_int(1, 3));
  std::vector<std::array<double, 4>> segments(3);
  for (auto& s : segments)
    s = {rng.uniform(region.x0, region.x1 + 1.0), rng.uniform(region.y0, region.y1 + 1.0),
         rng.uniform(region.x0, region.x1 + 1.0), rng.uniform(region.y0, region.y1 + 1.0)};
  const double stroke_width = rng.uniform(1.5, 3.0);
  const double blob_rx = rng.uniform(0.3, 0.55) * (region.x1 - region.x0 + 1);
  const double blob_ry = rng.uniform(0.3, 0.55) * (region.y1 - region.y0 + 1);
  const std::uint64_t speckle_seed = rng.next_u64();
  const std::uint64_t modulation_seed = rng.next_u64();

  Tensor out = image.clone();
  if (forced_fail || amplitude == 0.0) return out;

  const auto src = image.data();
  auto dst = out.mutable_data();
  const double cx = 0.5 * (region.x0 + region.x1 + 1), cy = 0.5 * (region.y0 + region.y1 + 1);
  // Occluders contrast with what they cover.
  Rgb region_mean{};
  for (int py = region.y0; py <= region.y1; ++py)
    for (int px = region.x0; px <= region.x1; ++px)
      for (int k = 0; k < 3; ++k)
        region_mean[k] += src[k * plane + static_cast<std::size_t>(py) * width + px];
  const double count = static_cast<double>((region.x1 - region.x0 + 1) * (region.y1 - region.y0 + 1));
  for (double& m : region_mean) m /= count;
  for (int py = region.y0; py <= region.y1; ++py)
    for (int px = region.x0; px <= region.x1; ++px) {
      const double fx = px + 0.5, fy = py + 0.5;
      const std::size_t i = static_cast<std::size_t>(py) * width + px;
      const Rgb in{src[i], src[plane + i], src[2 * plane + i]};
      double w = border_weight(region, px, py);
      Rgb pattern = in;
      switch (family) {
        case DefectFamily::color_shift:
          w *= 0.75 + 0.25 * value_noise(modulation_seed, fx / 3.0, fy / 3.0);
          for (int k = 0; k < 3; ++k) pattern[k] = std::clamp(in[k] + shift[k], 0.0, 1.0);
          break;
        case DefectFamily::texture_swap:
          pattern = sample_texture(swap, fx, fy, static_cast<double>(size));
          break;
        case DefectFamily::scratch: {
          double d = 1e9;
          for (int s = 0; s < strokes; ++s)
            d = std::min(d, segment_distance(fx, fy, segments[s][0], segments[s][1],
                                             segments[s][2], segments[s][3]));
          w *= std::clamp(stroke_width - d + 0.5, 0.0, 1.0);
          pattern.fill(bright ? 0.95 : 0.05);
          break;
        }
        case DefectFamily::occluding_blob: {
          const double ex = (fx - cx) / std::max(blob_rx, 0.5), ey = (fy - cy) / std::max(blob_ry, 0.5);
          w *= std::clamp(1.5 * (1.0 - std::sqrt(ex * ex + ey * ey)) + 0.5, 0.0, 1.0);
          for (int k = 0; k < 3; ++k)
            pattern[k] = region_mean[k] > 0.5 ? 0.4 * solid[k] : 0.6 + 0.4 * solid[k];
          break;
        }
        case DefectFamily::erosion_speckle: {
          const double n = lattice_value(speckle_seed, px, py);
          w *= n < 0.6 ? 1.0 : (n < 0.75 ? 0.5 : 0.0);
          for (int k = 0; k < 3; ++k) pattern[k] = 0.1 * in[k] + 0.1 * solid[k];
          break;
        }
      }
      const double a = amplitude * w;
      for (int k = 0; k < 3; ++k) dst[k * plane + i] = in[k] + a * (pattern[k] - in[k]);
    }
  return out;
}

FeatureExtractor FeatureExtractor::raw(std::size_t patch_size) {
  FeatureExtractor e;
  e.kind = ExtractorKind::raw_pixels;
  e.patch_size = patch_size;
  return e;
}

FeatureExtractor FeatureExtractor::from_backbone(const BackboneState& state) {
  FeatureExtractor e;
  e.kind = ExtractorKind::backbone;
  e.patch_size = state.config.patch_size;
  e.backbone = &state;
  return e;
}

Tensor FeatureExtractor::features(const Tensor& image) const {
  if (kind == ExtractorKind::backbone) {
    if (!backbone) throw ConfigurationError("feature extractor: no backbone attached");
    return forward(image, *backbone, false).patch_tokens;
  }
  if (image.rank() != 3 || image.dim(1) != image.dim(2))
    throw DimensionError("feature extractor: expected a square [3xHxW] image");
  Tensor patches = unfold_patches(image, image.dim(1), patch_size);
  const std::size_t n = patches.dim(0), d = patches.dim(1);
  std::vector<double> v(patches.data().begin(), patches.data().end());
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0;
    for (std::size_t k = 0; k < d; ++k) m += v[i * d + k];
    m /= static_cast<double>(d);
    for (std::size_t k = 0; k < d; ++k) v[i * d + k] -= m;
  }
  return Tensor(patches.shape(), std::move(v));
}

Tensor feature_distance_map(const Tensor& features, const Tensor& features_a,
                            std::size_t grid_h, std::size_t grid_w) {
  if (features.shape() != features_a.shape() || features.rank() != 2 ||
      features.dim(0) != grid_h * grid_w)
    throw DimensionError("feature_distance_map: feature shapes " + shape_str(features.shape()) +
                         " and " + shape_str(features_a.shape()) + " do not match the grid");
  const std::size_t n = features.dim(0), d = features.dim(1);
  const auto f = features.data(), g = features_a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double fg = 0, ff = 0, gg = 0;
    for (std::size_t k = 0; k < d; ++k) {
      fg += f[i * d + k] * g[i * d + k];
      ff += f[i * d + k] * f[i * d + k];
      gg += g[i * d + k] * g[i * d + k];
    }
    if (ff == 0.0 || gg == 0.0) {
      out[i] = (ff == 0.0 && gg == 0.0) ? 0.0 : 1.0;
    } else {
      out[i] = std::clamp(1.0 - fg / std::sqrt(ff * gg), 0.0, 2.0);
    }
  }
  return Tensor({grid_h, grid_w}, std::move(out));
}

Tensor feature_distance_map(const FeatureExtractor& extractor, const Tensor& image,
                            const Tensor& anomalous) {
  if (image.shape() != anomalous.shape())
    throw DimensionError("feature_distance_map: image extents differ");
  const std::size_t grid = image.dim(1) / extractor.patch_size;
  Tensor f = extractor.features(image), fa = extractor.features(anomalous);
  if (extractor.kind == ExtractorKind::backbone) {
    // Tokens of an untrained transformer share a large common component;
    // both images are centred on the mean token of the normal image.
    const std::size_t n = f.dim(0), d = f.dim(1);
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) mu[k] += f[i * d + k] / static_cast<double>(n);
    auto centre = [&](const Tensor& t) {
      std::vector<double> v(t.data().begin(), t.data().end());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) v[i * d + k] -= mu[k];
      return Tensor(t.shape(), std::move(v));
    };
    f = centre(f);
    fa = centre(fa);
  }
  return feature_distance_map(f, fa, grid, grid);
}

FilterResult filter_and_mask(const Tensor& distance_map, double threshold, std::size_t out_h,
                             std::size_t out_w) {
  if (distance_map.rank() != 2 || distance_map.size() == 0)
    throw DimensionError("filter_and_mask: distance map must be a non-empty [ghxgw]");
  const std::size_t gh = distance_map.dim(0), gw = distance_map.dim(1);
  FilterResult r;
  r.distance_score = *std::max_element(distance_map.data().begin(), distance_map.data().end());
  r.accepted = r.distance_score > threshold;
  std::vector<double> m(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      m[y * out_w + x] = distance_map[(y * gh / out_h) * gw + x * gw / out_w] > threshold ? 1.0 : 0.0;
  r.mask = Tensor({out_h, out_w}, std::move(m));
  return r;
}

void GeneratorConfig::validate() const {
  if (image_size < 8) throw ConfigurationError("datagen: image_size must be >= 8");
  if (!(threshold >= 0.0 && threshold < 2.0))
    throw ConfigurationError("datagen: threshold must lie in [0, 2)");
  if (!(forced_fail_prob >= 0.0 && forced_fail_prob <= 1.0))
    throw ConfigurationError("datagen: forced_fail_prob must lie in [0, 1]");
  if (!(amplitude_min > 0.0 && amplitude_min <= amplitude_max && amplitude_max <= 1.0))
    throw ConfigurationError("datagen: need 0 < amplitude_min <= amplitude_max <= 1");
  if (!(coverage.min > 0 && coverage.min < coverage.max && coverage.max < 1))
    throw ConfigurationError("datagen: coverage range must satisfy 0 < min < max < 1");
  if (attempt_factor < 1) throw ConfigurationError("datagen: attempt_factor must be >= 1");
}

SampleTriplet generate_triplet(std::uint64_t seed, const std::vector<std::string>& objects,
                               const Vocabulary& vocab, const GeneratorConfig& cfg,
                               const FeatureExtractor& extractor) {
  if (objects.empty()) throw ConfigurationError("datagen: no object tags to draw from");
  Rng rng(seed);
  SampleTriplet t;
  t.seed = seed;
  t.object_tag = objects[rng.uniform_int(0, static_cast<std::int64_t>(objects.size()) - 1)];
  t.texture_tag = vocab.textures[rng.uniform_int(0, static_cast<std::int64_t>(vocab.textures.size()) - 1)];
  const auto& anomalies = vocab.anomalies(t.object_tag);
  t.anomaly_tag = anomalies[rng.uniform_int(0, static_cast<std::int64_t>(anomalies.size()) - 1)];

  const SceneSpec spec{t.object_tag, t.texture_tag, rng.next_u64(), cfg.image_size};
  Scene scene = generate_normal(spec, vocab, cfg.coverage);
  t.normal = scene.image;
  t.fg_mask = scene.fg_mask;

  const Tensor centres = cfg.foreground_selection
                             ? scene.fg_mask
                             : Tensor::full(scene.fg_mask.shape(), 1.0);
  t.region = sample_region(centres, RegionRanges::scaled(cfg.image_size), rng);
  t.forced_fail = rng.bernoulli(cfg.forced_fail_prob);
  t.amplitude = std::exp(rng.uniform(std::log(cfg.amplitude_min), std::log(cfg.amplitude_max)));
  Rng defect_rng(rng.next_u64());
  t.anomalous = inpaint_defect(t.normal, t.fg_mask, t.region, t.anomaly_tag, t.amplitude,
                               t.forced_fail, defect_rng);
  quantize_8bit(t.anomalous.mutable_data());

  const std::size_t size = cfg.image_size;
  const FilterResult fr = filter_and_mask(feature_distance_map(extractor, t.normal, t.anomalous),
                                          cfg.threshold, size, size);
  t.distance_score = fr.distance_score;
  if (cfg.filtering) {
    t.accepted = fr.accepted;
    t.mask = fr.mask;
  } else {
    t.accepted = true;
    std::vector<double> m(size * size, 0.0);
    for (int y = t.region.y0; y <= t.region.y1; ++y)
      for (int x = t.region.x0; x <= t.region.x1; ++x) m[y * size + x] = 1.0;
    t.mask = Tensor({size, size}, std::move(m));
  }
  return t;
}

namespace {

double mask_area(const Tensor& mask) {
  double on = 0;
  for (double v : mask.data()) on += v > 0.5 ? 1.0 : 0.0;
  return on / static_cast<double>(mask.size());
}

void finish_stats(DatasetStats& s, const std::vector<SampleTriplet>& samples) {
  s.accepted = samples.size();
  s.rejected = s.attempts - s.accepted;
  s.rejection_rate = s.attempts ? static_cast<double>(s.rejected) / s.attempts : 0.0;
  std::vector<double> areas;
  s.area_histogram.assign(10, 0);
  for (const SampleTriplet& t : samples) {
    const double a = mask_area(t.mask);
    areas.push_back(a);
    s.area_histogram[std::min<std::size_t>(9, static_cast<std::size_t>(a * 100.0))] += 1;
    ++s.object_counts[t.object_tag];
    ++s.texture_counts[t.texture_tag];
    ++s.anomaly_counts[t.anomaly_tag];
    if (t.forced_fail) ++s.forced_fail_accepted;
  }
  if (areas.empty()) return;
  double total = 0;
  for (double a : areas) total += a;
  s.avg_anomalous_area = total / static_cast<double>(areas.size());
  std::sort(areas.begin(), areas.end());
  s.area_quantiles.clear();
  for (double q : {0.0, 0.25, 0.5, 0.75, 1.0})
    s.area_quantiles.push_back(areas[static_cast<std::size_t>(q * (areas.size() - 1) + 0.5)]);
}

std::string padded_id(std::size_t id) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << id;
  return os.str();
}

}  // namespace

Dataset generate_dataset(std::size_t n, const Vocabulary& vocab,
                         const std::vector<std::string>& objects, const GeneratorConfig& cfg,
                         const FeatureExtractor& extractor, std::uint64_t master_seed) {
  if (n < 1) throw ConfigurationError("datagen: n must be >= 1");
  cfg.validate();
  for (const std::string& o : objects)
    if (!vocab.has_object(o)) throw VocabularyError("unknown object tag '" + o + "'");
  if (cfg.extractor == ExtractorKind::backbone && extractor.kind != ExtractorKind::backbone)
    throw ConfigurationError("datagen: backbone extractor requested but none supplied");

  Dataset d;
  d.stats.requested = n;
  const std::size_t budget = cfg.attempt_factor * n;
  const std::size_t hard_cap = 100 * budget;
  const std::size_t chunk = std::max<std::size_t>(16, 4 * cfg.workers);
  std::size_t next = 0;
  while (d.samples.size() < n) {
    if (next >= budget) {
      const double rate = static_cast<double>(d.samples.size()) / static_cast<double>(next);
      if (rate < 0.01 || next >= hard_cap)
        throw ConfigurationError("datagen: acceptance rate " + std::to_string(rate) + " after " +
                                 std::to_string(next) +
                                 " attempts; check the threshold and amplitude range");
    }
    std::vector<SampleTriplet> batch(chunk);
    parallel_for(chunk, cfg.workers, [&](std::size_t i) {
      batch[i] = generate_triplet(mix_seed(master_seed, next + i), objects, vocab, cfg, extractor);
    });
    for (SampleTriplet& t : batch) {
      ++d.stats.attempts;
      if (t.forced_fail) ++d.stats.forced_fail_attempts;
      if (t.accepted) {
        t.id = d.samples.size();
        d.samples.push_back(std::move(t));
        if (d.samples.size() == n) break;
      }
    }
    next += chunk;
  }
  finish_stats(d.stats, d.samples);
  return d;
}

void check_no_leakage(const Dataset& d, const std::vector<std::string>& held_out) {
  const std::set<std::string> banned(held_out.begin(), held_out.end());
  for (const SampleTriplet& t : d.samples)
    if (banned.count(t.object_tag))
      throw VocabularyError("held-out object '" + t.object_tag + "' leaked into sample " +
                            std::to_string(t.id));
}

std::string stats_to_json(const DatasetStats& s) {
  nlohmann::ordered_json j;
  j["requested"] = s.requested;
  j["accepted"] = s.accepted;
  j["attempts"] = s.attempts;
  j["rejected"] = s.rejected;
  j["rejection_rate"] = s.rejection_rate;
  j["forced_fail_attempts"] = s.forced_fail_attempts;
  j["forced_fail_accepted"] = s.forced_fail_accepted;
  j["avg_anomalous_area"] = s.avg_anomalous_area;
  if (s.area_quantiles.size() == 5) {
    j["area_quantiles"] = {{"min", s.area_quantiles[0]},    {"q25", s.area_quantiles[1]},
                           {"median", s.area_quantiles[2]}, {"q75", s.area_quantiles[3]},
                           {"max", s.area_quantiles[4]}};
  }
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < s.area_histogram.size(); ++b)
    hist.push_back({{"from", b / 100.0}, {"to", b + 1 == s.area_histogram.size() ? 1.0 : (b + 1) / 100.0},
                    {"count", s.area_histogram[b]}});
  j["area_histogram"] = hist;
  j["distinct_objects"] = s.object_counts.size();
  j["distinct_textures"] = s.texture_counts.size();
  j["distinct_anomalies"] = s.anomaly_counts.size();
  j["objects"] = s.object_counts;
  j["textures"] = s.texture_counts;
  j["anomalies"] = s.anomaly_counts;
  return j.dump(2) + "\n";
}

void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"normal", "anomalous", "mask"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create '" + (dir / sub).string() + "': " + ec.message());
  }
  std::ofstream meta(dir / "meta.jsonl", std::ios::binary);
  if (!meta) throw IoError("cannot write '" + (dir / "meta.jsonl").string() + "'");
  for (const SampleTriplet& t : d.samples) {
    nlohmann::ordered_json j;
    j["id"] = t.id;
    j["object"] = t.object_tag;
    j["texture"] = t.texture_tag;
    j["anomaly"] = t.anomaly_tag;
    j["region"] = {{"x", t.region.x}, {"y", t.region.y}, {"w", t.region.w}, {"h", t.region.h}};
    j["D"] = t.distance_score;
    j["accepted"] = t.accepted;
    j["forced_fail"] = t.forced_fail;
    j["seed"] = t.seed;
    meta << j.dump() << '\n';
    const std::string name = padded_id(t.id) + ".png";
    write_png_rgb(dir / "normal" / name, t.normal);
    write_png_rgb(dir / "anomalous" / name, t.anomalous);
    write_png_mask(dir / "mask" / name, t.mask);
  }
  if (!meta) throw IoError("failed writing '" + (dir / "meta.jsonl").string() + "'");
  std::ofstream stats(dir / "stats.json", std::ios::binary);
  stats << stats_to_json(d.stats);
  if (!stats) throw IoError("cannot write '" + (dir / "stats.json").string() + "'");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "meta.jsonl");
  if (!meta) throw IoError("cannot read '" + (dir / "meta.jsonl").string() + "'");
  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(meta, line)) {
    ++line_no;
    if (line.empty()) continue;
    SampleTriplet t;
    try {
      const auto j = nlohmann::json::parse(line);
      t.id = j.at("id").get<std::size_t>();
      t.object_tag = j.at("object").get<std::string>();
      t.texture_tag = j.at("texture").get<std::string>();
      t.anomaly_tag = j.at("anomaly").get<std::string>();
      const auto& r = j.at("region");
      t.region.x = r.at("x").get<int>();
      t.region.y = r.at("y").get<int>();
      t.region.w = r.at("w").get<int>();
      t.region.h = r.at("h").get<int>();
      t.distance_score = j.at("D").get<double>();
      t.accepted = j.at("accepted").get<bool>();
      t.forced_fail = j.at("forced_fail").get<bool>();
      t.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("meta.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::string name = padded_id(t.id) + ".png";
    t.normal = read_png_rgb(dir / "normal" / name);
    t.anomalous = read_png_rgb(dir / "anomalous" / name);
    t.mask = read_png_gray(dir / "mask" / name);
    const auto size = static_cast<int>(t.normal.dim(1));
    t.region = make_region(t.region.x, t.region.y, t.region.w, t.region.h, size, size);
    d.samples.push_back(std::move(t));
  }
  if (d.samples.empty()) throw IoError("dataset '" + dir.string() + "' has no samples");
  return d;
}

}  // namespace avfm
