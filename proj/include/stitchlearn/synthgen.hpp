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

// Synthetic long-tailed multi-label benchmark with co-occurrence-aware label
// noise.
//
// Generation
//   - Class k (rank order, 0 = most frequent) gets exactly
//     max(min_count, round(max_count * (k+1)^-pareto_exponent)) training
//     positives.
//   - Classes are split into `groups` by k % groups. Samples are built from
//     the remaining per-class quota: a primary class is drawn with
//     probability proportional to its remaining quota, then each same-group
//     class with quota left joins independently with probability
//     cooccur_prob. This hits the per-class counts exactly.
//   - A sample's tokens are one noisy copy of each positive class prototype
//     plus `background_tokens` isotropic noise tokens.
//   - The test set uses the same process with a flat per-class quota and keeps
//     clean labels.
//
// Corruption
//   T_ii = 1 - gamma and T_ij = gamma * N_ij / sum_{k != i} N_ik, from clean
//   co-occurrence counts. Each clean positive i independently draws a target
//   j ~ T_i; the noisy label is the set of drawn targets, so a flip removes
//   the source and adds the target.

#ifndef STITCHLEARN_SYNTHGEN_HPP_
#define STITCHLEARN_SYNTHGEN_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stitchlearn/numcore.hpp"

namespace stitchlearn {

using Label = std::vector<std::uint8_t>;

struct ClassSpec {
  std::size_t class_id = 0;
  Vec prototype;  // unit norm
  std::size_t target_count = 0;
  std::size_t group_id = 0;
};

struct TokenBagSample {
  std::size_t sample_id = 0;
  std::vector<Token> tokens;
  Label clean;
  Label noisy;
};

// Head: more than 100 training positives, medium: 20..100, tail: fewer than 20.
struct SubsetSplit {
  std::vector<std::size_t> head;
  std::vector<std::size_t> medium;
  std::vector<std::size_t> tail;
};

SubsetSplit split_by_count(std::span<const std::size_t> class_counts);

struct GeneratorConfig {
  std::size_t num_classes = 20;
  std::size_t dim = 32;
  double pareto_exponent = 2.0;
  std::size_t max_count = 775;
  std::size_t min_count = 4;
  std::size_t groups = 4;
  std::size_t background_tokens = 2;
  double token_noise_sigma = 0.5;
  double background_scale = 1.0;  // background tokens ~ N(0, scale^2/dim) per coordinate
  double cooccur_prob = 0.3;
  std::size_t test_per_class = 40;
  // Upper bound on the training set size, 0 = unbounded. Only used to reject
  // configurations where num_classes * min_count cannot fit.
  std::size_t max_train_samples = 0;
  std::uint64_t seed = 0;
};

struct DatasetBundle {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t noise_seed = 0;
  GeneratorConfig config;
  std::vector<ClassSpec> classes;
  std::vector<TokenBagSample> train;
  std::vector<TokenBagSample> test;
  SubsetSplit split;
};

// Analytic per-class training counts.
std::vector<std::size_t> class_count_formula(const GeneratorConfig& cfg);

// Clean dataset: noisy labels are initialised to the clean labels.
DatasetBundle generate_clean(const GeneratorConfig& cfg);

struct CoOccurrenceMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;  // row-major C x C

  std::uint64_t operator()(std::size_t i, std::size_t j) const { return counts[i * num_classes + j]; }
};

CoOccurrenceMatrix build_cooccurrence(std::span<const TokenBagSample> samples, bool use_clean);

struct TransitionMatrix {
  std::size_t num_classes = 0;
  double gamma = 0.0;
  std::vector<double> probs;  // row-major C x C

  double operator()(std::size_t i, std::size_t j) const { return probs[i * num_classes + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(probs).subspan(i * num_classes, num_classes);
  }
};

// Rows without any co-occurring class keep T_ii = 1.
TransitionMatrix build_transition(const CoOccurrenceMatrix& cooc, double gamma);
// Per-class noise rate hook; gamma_per_class.size() must equal C. The scalar
// `gamma` field of the result is the mean rate.
TransitionMatrix build_transition(const CoOccurrenceMatrix& cooc,
                                  std::span<const double> gamma_per_class);

// Rewrites `noisy` of every sample from its clean label. Each sample uses its
// own random stream keyed by (seed, sample_id); tokens are never read.
void corrupt(std::span<TokenBagSample> samples, const TransitionMatrix& t, std::uint64_t seed);

// Convenience: generate, build T from clean train co-occurrence, corrupt train.
DatasetBundle generate_noisy(const GeneratorConfig& cfg, double gamma, std::uint64_t noise_seed);

struct LabelShiftReport {
  std::vector<std::size_t> clean_counts;
  std::vector<std::size_t> noisy_counts;
  std::size_t flipped_positives = 0;  // clean positives missing from the noisy label
  std::size_t spurious_positives = 0; // noisy positives absent from the clean label
};

LabelShiftReport label_shift(std::span<const TokenBagSample> samples, std::size_t num_classes);

std::vector<std::size_t> positive_counts(std::span<const TokenBagSample> samples,
                                         std::size_t num_classes, bool use_clean);

}  // namespace stitchlearn

#endif  // STITCHLEARN_SYNTHGEN_HPP_
