// Copyright 2026 The StitchLearn Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stitchlearn/sampling.hpp"

#include <stdexcept>

namespace stitchlearn {

std::string to_string(SamplerKind k) {
  return k == SamplerKind::kUniform ? "uniform" : "class_rebalanced";
}

SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "uniform" || s == "random" || s == "R") return SamplerKind::kUniform;
  if (s == "class_rebalanced" || s == "balanced" || s == "B") return SamplerKind::kClassRebalanced;
  throw std::invalid_argument("unknown sampler kind '" + s + "'");
}

ClassIndex::ClassIndex(std::span<const TokenBagSample> samples, std::size_t num_classes)
    : members_(num_classes) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Label& y = samples[i].noisy;
    for (std::size_t k = 0; k < num_classes && k < y.size(); ++k)
      if (y[k]) members_[k].push_back(i);
  }
}

BatchIndices BatchSampler::sample_batch(std::size_t num_samples, const ClassIndex& index,
                                        std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
  if (num_samples == 0) throw std::invalid_argument("sample_batch: empty dataset");
  BatchIndices out;
  out.sample_ids.reserve(batch_size);
  if (kind_ == SamplerKind::kUniform) {
    for (std::size_t s = 0; s < batch_size; ++s) out.sample_ids.push_back(uniform_index(rng_, num_samples));
    return out;
  }
  const std::size_t c = index.num_classes();
  for (std::size_t k = 0; k < c; ++k) {
    if (index.members(k).empty()) {
      throw std::invalid_argument("class_rebalanced sampling: class " + std::to_string(k) +
                                  " has no positive samples");
    }
  }
  out.provenance_class.reserve(batch_size);
  for (std::size_t s = 0; s < batch_size; ++s) {
    const std::size_t k = uniform_index(rng_, c);
    const auto members = index.members(k);
    out.sample_ids.push_back(members[uniform_index(rng_, members.size())]);
    out.provenance_class.push_back(k);
  }
  return out;
}

}  // namespace stitchlearn
