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

#ifndef STITCHLEARN_RNG_HPP_
#define STITCHLEARN_RNG_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>

namespace stitchlearn {

using Rng = std::mt19937_64;

// splitmix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for stream `stream`, element `index` of a run seeded with `seed`.
// Per-element streams make results independent of processing order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(mix64(seed) ^ stream) ^ index);
}

// Stream identifiers.
namespace streams {
inline constexpr std::uint64_t kPrototypes = 0x70726f74;
inline constexpr std::uint64_t kTrainLabels = 0x74726c62;
inline constexpr std::uint64_t kTestLabels = 0x74736c62;
inline constexpr std::uint64_t kTokens = 0x746f6b6e;
inline constexpr std::uint64_t kCorrupt = 0x636f7270;
inline constexpr std::uint64_t kInit = 0x696e6974;
inline constexpr std::uint64_t kSamplerF = 0x73616d66;
inline constexpr std::uint64_t kSamplerG = 0x73616d67;
inline constexpr std::uint64_t kAugmentF = 0x61756766;
inline constexpr std::uint64_t kAugmentG = 0x61756767;
inline constexpr std::uint64_t kTrialNoise = 0x74726e73;
}  // namespace streams

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Draws an index from a discrete distribution given by `probs` (need not be
// normalised exactly; the last positive entry absorbs rounding).
inline std::size_t draw_categorical(Rng& rng, std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) total += p;
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    acc += probs[i];
    if (u < acc) return i;
  }
  return last_positive;
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
}

}  // namespace stitchlearn

#endif  // STITCHLEARN_RNG_HPP_
