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

#include <algorithm>
#include <set>

#include "avfm/errors.hpp"
#include "avfm/vocabulary.hpp"

namespace avfm {
namespace {

TEST(Vocabulary, BuiltinIsValidAndNonTrivial) {
  const Vocabulary& v = Vocabulary::builtin();
  EXPECT_NO_THROW(v.validate());
  EXPECT_GE(v.objects.size(), 8u);
  EXPECT_FALSE(v.textures.empty());
  for (const std::string& o : v.objects) {
    EXPECT_TRUE(v.has_object(o));
    EXPECT_FALSE(v.anomalies(o).empty()) << o;
  }
  std::set<std::string> distinct;
  for (const auto& [o, tags] : v.anomalies_by_object) distinct.insert(tags.begin(), tags.end());
  EXPECT_EQ(v.anomaly_count(), distinct.size());
  EXPECT_THROW(v.anomalies("no-such-object"), VocabularyError);
}

TEST(Vocabulary, ValidationCatchesBrokenLists) {
  Vocabulary v;
  v.objects = {"cup", "cup"};
  v.textures = {"wood"};
  v.anomalies_by_object = {{"cup", {"crack"}}};
  EXPECT_THROW(v.validate(), VocabularyError);
  v.objects = {"cup", "bolt"};
  EXPECT_THROW(v.validate(), VocabularyError);  // bolt has no anomalies
  v.anomalies_by_object["bolt"] = {"rust"};
  EXPECT_NO_THROW(v.validate());
}

TEST(TagHash, IsFnv1a64) {
  EXPECT_EQ(tag_hash(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(tag_hash("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(tag_hash("foobar"), 0x85944171f73967e8ull);
}

TEST(ClassSplit, DisjointSizedAndDeterministic) {
  const Vocabulary& v = Vocabulary::builtin();
  for (std::uint64_t seed : {0u, 1u, 77u}) {
    const ClassSplit s = ClassSplit::draw(v, 6, 2, seed);
    EXPECT_EQ(s.train.size(), 6u);
    EXPECT_EQ(s.eval.size(), 2u);
    EXPECT_NO_THROW(s.validate(v));
    for (const std::string& t : s.train)
      EXPECT_EQ(std::count(s.eval.begin(), s.eval.end(), t), 0);
    const ClassSplit again = ClassSplit::draw(v, 6, 2, seed);
    EXPECT_EQ(s.train, again.train);
    EXPECT_EQ(s.eval, again.eval);
  }
}

TEST(ClassSplit, HeldOutClassesIndependentOfTrainCount) {
  const Vocabulary& v = Vocabulary::builtin();
  const ClassSplit a = ClassSplit::draw(v, 1, 2, 5);
  const ClassSplit b = ClassSplit::draw(v, 6, 2, 5);
  EXPECT_EQ(a.eval, b.eval);
}

TEST(ClassSplit, RejectsImpossibleOrLeakySplits) {
  const Vocabulary& v = Vocabulary::builtin();
  EXPECT_THROW(ClassSplit::draw(v, 0, 2, 1), ConfigurationError);
  EXPECT_THROW(ClassSplit::draw(v, v.objects.size(), 1, 1), ConfigurationError);
  ClassSplit s = ClassSplit::draw(v, 3, 2, 1);
  s.eval.push_back(s.train.front());
  EXPECT_THROW(s.validate(v), VocabularyError);
  s = ClassSplit::draw(v, 3, 2, 1);
  s.train.push_back("not-a-tag");
  EXPECT_THROW(s.validate(v), VocabularyError);
}

}  // namespace
}  // namespace avfm
