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

#include "avfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "avfm/errors.hpp"
#include "avfm/parallel.hpp"
#include "json.hpp"

namespace avfm {

namespace {

void check_lengths(const ScoredSet& s) {
  if (s.scores.size() != s.labels.size())
    throw ContractError("scored set: " + std::to_string(s.scores.size()) +
                        " scores but " + std::to_string(s.labels.size()) +
                        " labels");
}

std::vector<std::size_t> order_by_score(const ScoredSet& s, bool descending) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (descending) {
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
      return s.scores[a] > s.scores[b];
    });
  } else {
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
      return s.scores[a] < s.scores[b];
    });
  }
  return idx;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

void add_image(SliceMetrics& m, ScoredSet& img, ScoredSet& px,
               const ScoredImage& s) {
  img.add(s.image_score, s.label);
  ++m.images;
  if (s.label) ++m.anomalous_images;
  for (std::size_t i = 0; i < s.anomaly_map.size(); ++i) {
    const int lab = s.mask[i] > 0.5 ? 1 : 0;
    px.add(s.anomaly_map[i], lab);
    m.anomalous_pixels += lab;
  }
  m.pixels += s.anomaly_map.size();
}

void finish_slice(SliceMetrics& m, const ScoredSet& img, const ScoredSet& px) {
  auto attempt = [&](std::optional<double>& dst, const char* what, auto&& fn,
                     const ScoredSet& set) {
    try {
      dst = fn(set);
    } catch (const UndefinedMetricError& e) {
      m.errors.push_back(std::string(what) + ": " + e.what());
    }
  };
  attempt(m.image_auroc, "image_auroc", auroc, img);
  attempt(m.image_f1max, "image_f1max", f1_max, img);
  attempt(m.pixel_auroc, "pixel_auroc", auroc, px);
  attempt(m.pixel_f1max, "pixel_f1max", f1_max, px);
}

nlohmann::json slice_json(const SliceMetrics& m) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"image_auroc", opt(m.image_auroc)},
          {"image_f1max", opt(m.image_f1max)},
          {"pixel_auroc", opt(m.pixel_auroc)},
          {"pixel_f1max", opt(m.pixel_f1max)},
          {"images", m.images},
          {"anomalous_images", m.anomalous_images},
          {"pixels", m.pixels},
          {"anomalous_pixels", m.anomalous_pixels},
          {"errors", m.errors}};
}

}  // namespace

std::size_t ScoredSet::positives() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
}

double auroc(const ScoredSet& s) {
  check_lengths(s);
  const std::size_t np = s.positives(), nn = s.negatives();
  if (np == 0 || nn == 0)
    throw UndefinedMetricError("AUROC needs both classes (positives=" +
                               std::to_string(np) + ", negatives=" +
                               std::to_string(nn) + ")");
  const auto idx = order_by_score(s, false);
  // Doubled ranks keep tie averages integral.
  std::int64_t twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i + 1;
    while (j < idx.size() && s.scores[idx[j]] == s.scores[idx[i]]) ++j;
    const auto twice_rank = static_cast<std::int64_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (s.labels[idx[k]]) twice_rank_sum += twice_rank;
    i = j;
  }
  const auto p = static_cast<std::int64_t>(np);
  const std::int64_t twice_u = twice_rank_sum - p * (p + 1);
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

double f1_max(const ScoredSet& s) {
  check_lengths(s);
  const std::size_t np = s.positives();
  if (np == 0) throw UndefinedMetricError("F1-max needs at least one positive");
  const auto idx = order_by_score(s, true);
  std::size_t tp = 0, fp = 0, i = 0;
  double best = 0.0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && s.scores[idx[j]] == s.scores[idx[i]]) {
      (s.labels[idx[j]] ? tp : fp) += 1;
      ++j;
    }
    const std::size_t fn = np - tp;
    const double f1 = static_cast<double>(2 * tp) /
                      static_cast<double>(2 * tp + fp + fn);
    best = std::max(best, f1);
    i = j;
  }
  return best;
}

std::vector<RocPoint> roc_curve(const ScoredSet& s, std::size_t max_points) {
  check_lengths(s);
  const std::size_t np = s.positives(), nn = s.negatives();
  if (np == 0 || nn == 0) return {};
  const auto idx = order_by_score(s, true);
  std::vector<RocPoint> pts;
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && s.scores[idx[j]] == s.scores[idx[i]]) {
      (s.labels[idx[j]] ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({s.scores[idx[i]], static_cast<double>(fp) / nn,
                   static_cast<double>(tp) / np});
    i = j;
  }
  if (max_points >= 2 && pts.size() > max_points) {
    std::vector<RocPoint> thin;
    thin.reserve(max_points);
    for (std::size_t k = 0; k < max_points; ++k)
      thin.push_back(pts[k * (pts.size() - 1) / (max_points - 1)]);
    pts = std::move(thin);
  }
  return pts;
}

MetricsReport compute_report(const std::vector<ScoredImage>& images,
                             std::size_t roc_points) {
  MetricsReport r;
  ScoredSet img, px;
  std::map<std::string, std::pair<ScoredSet, ScoredSet>> by_class;
  for (const ScoredImage& s : images) {
    if (s.anomaly_map.size() != s.mask.size())
      throw DimensionError("evaluation: anomaly map and mask sizes differ");
    add_image(r.overall, img, px, s);
    auto& [ci, cp] = by_class[s.class_tag];
    add_image(r.per_class[s.class_tag], ci, cp, s);
  }
  finish_slice(r.overall, img, px);
  for (auto& [tag, sets] : by_class)
    finish_slice(r.per_class[tag], sets.first, sets.second);
  r.image_roc = roc_curve(img, roc_points);
  r.pixel_roc = roc_curve(px, roc_points);
  return r;
}

void gaussian_blur(std::vector<double>& map, std::size_t h, std::size_t w,
                   double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    norm += kernel[k + radius];
  }
  for (double& k : kernel) k /= norm;
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  std::vector<double> tmp(map.size());
  const int H = static_cast<int>(h), W = static_cast<int>(w);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[k + radius] * map[y * W + clampi(x + k, W)];
      tmp[y * W + x] = acc;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[k + radius] * tmp[clampi(y + k, H) * W + x];
      map[y * W + x] = acc;
    }
}

std::vector<ScoredImage> score_samples(const ModelState& model,
                                       const std::vector<EvalSample>& samples,
                                       const EvalOptions& opts) {
  std::vector<ScoredImage> out(samples.size());
  parallel_for(samples.size(), opts.workers, [&](std::size_t i) {
    const EvalSample& s = samples[i];
    Prediction p = predict(s.image, model);
    ScoredImage& r = out[i];
    r.id = s.id;
    r.class_tag = s.class_tag;
    r.label = s.label;
    r.image_score = p.image_score;
    r.anomaly_map.assign(p.anomaly_map.data().begin(), p.anomaly_map.data().end());
    gaussian_blur(r.anomaly_map, p.anomaly_map.dim(0), p.anomaly_map.dim(1),
                  opts.smoothing_sigma);
    r.mask.assign(s.mask.data().begin(), s.mask.data().end());
  });
  return out;
}

MetricsReport evaluate_dataset(const ModelState& model,
                               const std::vector<EvalSample>& samples,
                               const EvalOptions& opts) {
  if (samples.empty()) throw ContractError("evaluate_dataset: empty dataset");
  return compute_report(score_samples(model, samples, opts), opts.roc_points);
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["overall"] = slice_json(r.overall);
  nlohmann::json pc = nlohmann::json::object();
  for (const auto& [tag, m] : r.per_class) pc[tag] = slice_json(m);
  j["per_class"] = pc;
  return j.dump(2) + "\n";
}

std::string report_to_table(const MetricsReport& r) {
  std::size_t width = 7;
  for (const auto& [tag, m] : r.per_class) width = std::max(width, tag.size());
  std::ostringstream os;
  auto row = [&](const std::string& name, const SliceMetrics& m) {
    os << std::left << std::setw(static_cast<int>(width)) << name;
    for (const auto& v : {m.image_auroc, m.image_f1max, m.pixel_auroc, m.pixel_f1max})
      os << "  " << std::right << std::setw(9) << fmt(v);
    os << '\n';
  };
  os << std::left << std::setw(static_cast<int>(width)) << "class";
  for (const char* h : {"img_auroc", "img_f1", "px_auroc", "px_f1"})
    os << "  " << std::right << std::setw(9) << h;
  os << '\n';
  for (const auto& [tag, m] : r.per_class) row(tag, m);
  row("overall", r.overall);
  return os.str();
}

std::string roc_to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "level,threshold,fpr,tpr\n" << std::setprecision(17);
  for (const auto& [level, pts] :
       {std::pair{"image", &r.image_roc}, std::pair{"pixel", &r.pixel_roc}}) {
    for (const RocPoint& p : *pts)
      os << level << ',' << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
  }
  return os.str();
}

}  // namespace avfm
