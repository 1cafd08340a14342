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

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace avfm {

/// Object, anomaly and background tags that drive the scene generator.
struct Vocabulary {
  std::vector<std::string> objects;
  std::vector<std::string> textures;
  std::map<std::string, std::vector<std::string>> anomalies_by_object;

  /// The shipped tag lists.
  static const Vocabulary& builtin();

  /// Throws VocabularyError if an object has no anomaly tags or a tag repeats.
  void validate() const;
  bool has_object(const std::string& tag) const;
  bool has_texture(const std::string& tag) const;
  const std::vector<std::string>& anomalies(const std::string& object) const;
  /// Distinct anomaly tags over all objects.
  std::size_t anomaly_count() const;
};

/// Disjoint object-tag sets for training and held-out evaluation.
struct ClassSplit {
  std::vector<std::string> train;
  std::vector<std::string> eval;

  /// `n_train` + `n_eval` distinct objects drawn without replacement; the
  /// held-out draw is the same for every `n_train`.
  static ClassSplit draw(const Vocabulary& vocab, std::size_t n_train,
                         std::size_t n_eval, std::uint64_t seed);
  /// Throws VocabularyError on an unknown tag or a shared tag.
  void validate(const Vocabulary& vocab) const;
};

/// FNV-1a; stable across platforms so tags map to the same parameters.
std::uint64_t tag_hash(const std::string& tag);

}  // namespace avfm
