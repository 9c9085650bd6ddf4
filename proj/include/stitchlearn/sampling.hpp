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

#ifndef STITCHLEARN_SAMPLING_HPP_
#define STITCHLEARN_SAMPLING_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stitchlearn/rng.hpp"
#include "stitchlearn/synthgen.hpp"

namespace stitchlearn {

enum class SamplerKind : std::uint8_t { kUniform = 0, kClassRebalanced = 1 };

std::string to_string(SamplerKind k);
SamplerKind sampler_kind_from_string(const std::string& s);

// Positions (into the training vector) of the samples whose noisy label has
// class k set.
class ClassIndex {
 public:
  ClassIndex() = default;
  ClassIndex(std::span<const TokenBagSample> samples, std::size_t num_classes);

  std::size_t num_classes() const { return members_.size(); }
  std::span<const std::size_t> members(std::size_t k) const { return members_[k]; }

 private:
  std::vector<std::vector<std::size_t>> members_;
};

struct BatchIndices {
  std::vector<std::size_t> sample_ids;
  // Class each slot was drawn for; empty for uniform batches.
  std::vector<std::size_t> provenance_class;
};

// Draws with replacement. Uniform: every slot is uniform over the N samples.
// Class-rebalanced: every slot first draws a class uniformly from [0,C), then
// a sample uniformly from that class's noisy positives.
class BatchSampler {
 public:
  BatchSampler(SamplerKind kind, std::uint64_t seed) : kind_(kind), rng_(seed) {}

  SamplerKind kind() const { return kind_; }

  // Throws std::invalid_argument naming the class when a rebalanced draw
  // would need a class with no positives.
  BatchIndices sample_batch(std::size_t num_samples, const ClassIndex& index,
                            std::size_t batch_size);

  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

 private:
  SamplerKind kind_;
  Rng rng_;
};

}  // namespace stitchlearn

#endif  // STITCHLEARN_SAMPLING_HPP_
