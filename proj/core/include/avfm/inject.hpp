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

#include "avfm/backbone.hpp"
#include "avfm/lora.hpp"
#include "avfm/rng.hpp"

namespace avfm {

/// Wraps every planned site of `state` with a fresh adapter. Backbone
/// weights are shared, not modified. Rank 0 records the plan but adds
/// nothing. Throws ConfigurationError on an unknown or already-injected site.
BackboneState inject(BackboneState state, const InjectionPlan& plan,
                     std::size_t rank, Rng& rng);

/// Σ rank·(d_in + d_out) over low-rank sites plus 2·d per norm site.
std::size_t expected_adapter_census(const BackboneConfig& config,
                                    const InjectionPlan& plan,
                                    std::size_t rank);

}  // namespace avfm
