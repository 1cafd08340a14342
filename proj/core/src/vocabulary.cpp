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

#include "avfm/vocabulary.hpp"

#include <algorithm>
#include <set>

#include "avfm/errors.hpp"
#include "avfm/rng.hpp"

namespace avfm {

namespace {

// Object tags with their anomaly tags, then background textures.
const std::vector<std::pair<std::string, std::vector<std::string>>>& object_table() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> table = {
      {"apple", {"bruised", "wrinkled", "rotten", "moldy", "dented", "discolored", "soft spots"}},
      {"apple slice", {"oxidized", "bruised", "dried out"}},
      {"asphalt", {"cracked", "pitted", "faded", "eroded", "oil-stained", "uneven"}},
      {"ball", {"deflated", "scuffed", "punctured", "faded", "cracked surface"}},
      {"banana", {"bruised", "overripe", "blackened", "split peel", "mushy", "spotted"}},
      {"battery", {"leaking", "corroded", "dented", "faded label"}},
      {"belt", {"cracked leather", "frayed edges", "worn holes", "peeling finish"}},
      {"bicycle", {"flat tire", "rusty chain", "scratched frame", "worn seat"}},
      {"board game", {"torn box", "missing pieces", "faded board", "bent cards"}},
      {"bread", {"stale", "moldy", "crumbling", "burnt", "hardened", "soggy"}},
      {"brushed aluminum", {"scratched", "dented", "stained", "faded", "oxidized", "pitted"}},
      {"butter", {"rancid", "melted", "discolored", "greasy residue", "hardened"}},
      {"car tire", {"bald tread", "cracked rubber", "punctured", "worn sidewall"}},
      {"carbon fiber", {"frayed", "chipped", "cracked", "delaminated", "scratched", "discolored"}},
      {"carrot", {"softened", "cracked", "dehydrated", "spotted", "moldy", "bent"}},
      {"chair", {"scratched wood", "stained cushion", "wobbly leg"}},
      {"chalkboard", {"scratched", "smudged", "cracked", "chipped", "stained", "uneven"}},
      {"cheese", {"moldy", "dried out", "cracked", "discolored", "sweating", "crumbly"}},
      {"chocolate bar", {"melted", "bloomed", "crumbled", "discolored"}},
      {"concrete", {"cracked", "pitted", "stained", "eroded", "chipped", "weathered"}},
      {"cookies", {"crumbled", "stale", "burnt", "moldy"}},
      {"cork", {"cracked", "crumbled", "stained", "dried out", "warped", "pitted"}},
      {"corrugated metal", {"dented", "rusted", "bent", "scratched", "corroded", "pitted"}},
      {"denim", {"frayed", "torn", "stained", "faded", "pilled", "worn"}},
      {"doll", {"torn clothing", "missing eye", "stained", "frayed hair", "loose limbs"}},
      {"drill", {"worn chuck", "scratched casing", "broken switch", "dented battery"}},
      {"egg", {"cracked", "leaking", "discolored shell", "dented", "rotten", "thin shell"}},
      {"fabric", {"frayed", "torn", "stained", "faded", "pilled", "snagged"}},
      {"fur", {"matted", "shedding", "stained", "torn", "faded", "dull"}},
      {"garden hose", {"cracked", "leaking", "kinked", "faded"}},
      {"garlic", {"sprouted", "dried out", "moldy"}},
      {"glasses", {"scratched lenses", "bent frame", "loose arms", "cloudy lenses"}},
      {"gloves", {"frayed fingers", "stretched out", "stained"}},
      {"grape", {"wrinkled", "moldy", "shriveled"}},
      {"grill", {"rusty grates", "blackened residue", "scratched body"}},
      {"hammer", {"rusty", "chipped", "bent", "dented", "scratched", "loose head"}},
      {"hat", {"faded color", "stretched", "frayed edges"}},
      {"headphones", {"frayed cable", "scratched ear cups", "loose padding"}},
      {"helmet", {"scratched shell", "cracked foam", "loose straps"}},
      {"hemp fabric", {"frayed", "torn", "faded", "pilled", "stained", "snagged"}},
      {"jacket", {"broken zipper", "faded color", "torn lining"}},
      {"jeans", {"worn knees", "frayed hem", "ripped pocket", "faded"}},
      {"key", {"bent", "worn teeth", "rusty", "scratched surface"}},
      {"kite", {"torn fabric", "bent frame", "frayed string", "missing tail"}},
      {"laminate", {"scratched", "chipped", "peeled", "bubbled", "stained", "warped"}},
      {"lamp", {"flickering", "scratched base", "broken switch"}},
      {"laptop", {"scratched casing", "cracked hinge", "faded keyboard keys"}},
      {"lettuce", {"wilting", "yellowing", "rotting"}},
      {"light bulb", {"burnt out", "cracked", "blackened", "loose filament"}},
      {"linen", {"wrinkled", "stained", "faded", "torn", "frayed", "pilled"}},
      {"mesh", {"frayed", "torn", "snagged", "discolored", "brittle", "stretched"}},
      {"milk carton", {"dented", "leaking", "stained", "faded label", "torn packaging"}},
      {"mirror", {"scratched", "chipped edge", "cloudy", "stained surface"}},
      {"onion", {"sprouted", "dried layers", "rotting"}},
      {"orange", {"dried skin", "moldy", "bruised", "discolored"}},
      {"paintbrush", {"frayed bristles", "stiffened bristles", "dried paint"}},
      {"paper", {"torn", "wrinkled", "stained", "yellowed", "brittle", "moldy"}},
      {"parquet flooring", {"scratched", "warped", "faded", "chipped", "stained", "dull"}},
      {"phone", {"cracked screen", "scratched back", "worn buttons"}},
      {"plastic", {"scratched", "cracked", "discolored", "warped", "brittle", "faded"}},
      {"pliers", {"rusty", "loose grip", "scratched", "chipped", "stiff joint"}},
      {"plywood", {"warped", "splintered", "chipped", "stained", "delaminated", "cracked"}},
      {"potato", {"sprouted", "rotting", "green spots", "wrinkled", "moldy", "soft spots"}},
      {"rake", {"bent tines", "rusty", "loose handle"}},
      {"rattan", {"splintered", "frayed", "cracked", "stained", "brittle", "discolored"}},
      {"rubber floor", {"cracked", "brittle", "discolored", "stiffened", "melted", "torn"}},
      {"saw", {"rusty blade", "dull teeth", "chipped handle", "bent blade"}},
      {"scarf", {"pilled fabric", "snagged threads", "stained"}},
      {"screwdriver", {"worn tip", "rusty", "scratched", "bent", "cracked handle"}},
      {"shoes", {"worn sole", "scuffed leather", "torn fabric", "faded color"}},
      {"shovel", {"rusty blade", "dented handle", "worn grip"}},
      {"smooth ceramic tile", {"chipped", "cracked", "stained", "crazed", "dull", "scratched"}},
      {"smooth glass", {"scratched", "cracked", "chipped", "foggy", "stained", "shattered"}},
      {"smooth metal", {"rusted", "scratched", "dented", "corroded", "pitted", "tarnished"}},
      {"smooth wood plank", {"cracked", "splintered", "warped", "knotted", "rotten", "scratched", "stained"}},
      {"socks", {"hole in toe", "stretched elastic", "faded"}},
      {"stainless steel", {"scratched", "dented", "stained", "scuffed", "fingerprinted", "corroded"}},
      {"stone tile", {"chipped", "cracked", "eroded", "stained", "pitted", "weathered"}},
      {"strawberry", {"moldy", "bruised", "shrinking"}},
      {"synthetic fiber", {"frayed", "torn", "stained", "faded", "pilled", "melted"}},
      {"table", {"scratched surface", "dented corner", "water stains"}},
      {"tape measure", {"cracked casing", "faded markings", "stuck mechanism"}},
      {"teddy bear", {"ripped seam", "matted fur", "faded color", "stained", "missing stuffing"}},
      {"tent", {"torn fabric", "bent poles", "moldy spots"}},
      {"tomato", {"soft spots", "cracked skin", "moldy"}},
      {"toy car", {"scratched paint", "missing wheel", "cracked body", "loose parts"}},
      {"TV remote", {"worn-out buttons", "cracked case", "faded labels"}},
      {"velvet", {"crushed", "faded", "stained", "pilled", "torn", "frayed"}},
      {"wallet", {"worn edges", "cracked leather", "faded color", "frayed stitching"}},
      {"wallpaper", {"peeled", "torn", "stained", "faded", "bubbled", "wrinkled"}},
      {"watch", {"scratched face", "broken strap", "faded markings", "cracked casing"}},
      {"whiteboard", {"scratched", "stained", "ghosting", "cracked", "faded", "dented"}},
      {"window", {"scratched glass", "cracked", "foggy"}},
      {"woven mat", {"frayed", "torn", "faded", "loose fibers", "stained", "worn"}},
      {"wrench", {"rusty", "scratched", "dented", "worn edges", "corroded"}},
      {"yo-yo", {"scratched", "cracked", "tangled string", "chipped edge"}},
  };
  return table;
}

const std::vector<std::string>& texture_table() {
  static const std::vector<std::string> table = {
      "asphalt", "bamboo", "brick", "brushed aluminum", "canvas",
      "carbon fiber", "ceramic", "chalkboard", "clouds", "concrete",
      "cork", "corrugated metal", "denim", "fabric", "fleece",
      "foam", "fur", "glass", "granite", "grass",
      "gravel", "hemp fabric", "ice", "laminate", "linen",
      "marble", "mesh", "metal", "mirror", "painted wall",
      "paper", "parquet flooring", "pebbles", "plastic", "plywood",
      "rattan", "rubber", "sand", "snow", "stainless steel",
      "stone", "synthetic fiber", "tarpaulin", "terrazzo", "tile",
      "velvet", "wallpaper", "whiteboard", "wire mesh", "woven mat",
  };
  return table;
}

}  // namespace

const Vocabulary& Vocabulary::builtin() {
  static const Vocabulary v = [] {
    Vocabulary out;
    for (const auto& [object, anomalies] : object_table()) {
      out.objects.push_back(object);
      out.anomalies_by_object[object] = anomalies;
    }
    out.textures = texture_table();
    out.validate();
    return out;
  }();
  return v;
}

void Vocabulary::validate() const {
  std::set<std::string> seen;
  for (const std::string& o : objects) {
    if (!seen.insert(o).second) throw VocabularyError("duplicate object tag '" + o + "'");
    auto it = anomalies_by_object.find(o);
    if (it == anomalies_by_object.end() || it->second.empty())
      throw VocabularyError("object '" + o + "' has no anomaly tags");
  }
  seen.clear();
  for (const std::string& t : textures)
    if (!seen.insert(t).second) throw VocabularyError("duplicate texture tag '" + t + "'");
  if (objects.empty() || textures.empty())
    throw VocabularyError("vocabulary needs at least one object and one texture");
}

bool Vocabulary::has_object(const std::string& tag) const {
  return anomalies_by_object.count(tag) != 0;
}

bool Vocabulary::has_texture(const std::string& tag) const {
  return std::find(textures.begin(), textures.end(), tag) != textures.end();
}

const std::vector<std::string>& Vocabulary::anomalies(const std::string& object) const {
  auto it = anomalies_by_object.find(object);
  if (it == anomalies_by_object.end())
    throw VocabularyError("unknown object tag '" + object + "'");
  return it->second;
}

std::size_t Vocabulary::anomaly_count() const {
  std::set<std::string> all;
  for (const auto& [o, list] : anomalies_by_object) all.insert(list.begin(), list.end());
  return all.size();
}

ClassSplit ClassSplit::draw(const Vocabulary& vocab, std::size_t n_train,
                            std::size_t n_eval, std::uint64_t seed) {
  if (n_train == 0 || n_eval == 0 || n_train + n_eval > vocab.objects.size())
    throw ConfigurationError("class split: need 1 <= n_train, n_eval and n_train + n_eval <= " +
                             std::to_string(vocab.objects.size()));
  std::vector<std::string> pool = vocab.objects;
  Rng rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < n_train + n_eval; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size() - 1)));
    std::swap(pool[i], pool[j]);
  }
  // Held-out classes come first so they do not depend on n_train.
  ClassSplit s;
  s.eval.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_eval));
  s.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_eval),
                 pool.begin() + static_cast<std::ptrdiff_t>(n_train + n_eval));
  return s;
}

void ClassSplit::validate(const Vocabulary& vocab) const {
  for (const auto* list : {&train, &eval})
    for (const std::string& t : *list)
      if (!vocab.has_object(t)) throw VocabularyError("unknown object tag '" + t + "'");
  for (const std::string& t : train)
    if (std::find(eval.begin(), eval.end(), t) != eval.end())
      throw VocabularyError("object tag '" + t + "' is in both the train and eval split");
}

std::uint64_t tag_hash(const std::string& tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace avfm
