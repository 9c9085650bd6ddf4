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

// Stitch-Up: synthesise one training sample from K samples that share a
// noisy class, with the label set to the union of the members' labels.
//
// Selection: the shared class k is uniform over the anchor's noisy
// positives; the K-1 partners are uniform, with replacement, over every
// training sample whose noisy label has k (the anchor included).
//
// Synthesis modes:
//   input_concat     the members' token bags are merged into one bag, which
//                    goes through backbone, lower and upper head layers.
//                    Token bags are this library's stand-in for images, so
//                    bag union plays the role of image concatenation.
//   feature_average  lower-head features of the members are averaged, then
//                    the upper head produces logits.
//   feature_concat   lower-head features are concatenated in member order and
//                    fed to an upper head of width K * d_f.

#ifndef STITCHLEARN_STITCHUP_HPP_
#define STITCHLEARN_STITCHUP_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stitchlearn/numcore.hpp"
#include "stitchlearn/rng.hpp"
#include "stitchlearn/sampling.hpp"
#include "stitchlearn/synthgen.hpp"

namespace stitchlearn {

enum class StitchMode : std::uint8_t { kOff = 0, kInputConcat = 1, kFeatureConcat = 2, kFeatureAverage = 3 };

std::string to_string(StitchMode m);
StitchMode stitch_mode_from_string(const std::string& s);

struct StitchConfig {
  StitchMode mode = StitchMode::kFeatureAverage;
  std::size_t k = 2;
  double p = 1.0;

  // k >= 2, p in [0,1]; feature_concat additionally requires p == 1 because
  // its upper head cannot take an unstitched sample during training.
  void validate() const;
  bool active() const { return mode != StitchMode::kOff && p > 0.0; }
};

struct CandidateSet {
  std::size_t anchor = 0;
  std::size_t shared_class = 0;
  std::vector<std::size_t> members;  // members[0] == anchor
};

CandidateSet select_candidates(std::size_t anchor, const Label& anchor_noisy, const ClassIndex& index,
                               std::size_t k, Rng& rng);

// Elementwise OR.
Label label_union(std::span<const Label> labels);

struct StitchedSample {
  bool stitched = false;
  std::optional<std::size_t> shared_class;
  std::vector<std::size_t> members;  // just the anchor when passed through
  Label label;                       // union of the members' noisy labels
};

// With probability cfg.p select + stitch; otherwise pass the anchor through.
StitchedSample maybe_stitch(std::size_t anchor, std::span<const TokenBagSample> train,
                            const ClassIndex& index, const StitchConfig& cfg, Rng& rng);

using TokenBagRef = const std::vector<Token>*;

struct StitchForward {
  StitchMode mode = StitchMode::kOff;
  std::size_t member_count = 0;
  std::size_t tiling = 1;  // > 1 when a single member feeds a concat-width head
  Vec combined;            // input of the upper head
  Vec logits;
  std::vector<Vec> hidden;         // backbone output per path
  std::vector<Vec> intermediates;  // lower-head output per path
  std::vector<BackboneCache> backbone_caches;
  std::vector<MlpCache> lower_caches;
  MlpCache upper_cache;
};

// One member (or mode off) runs the plain path. With a single member against a
// concat-width upper head the member's feature is tiled to fill the head, which
// matches the forced self-selection case. Throws ConfigError when the upper
// head width does not fit the mode.
StitchForward stitch_forward(std::span<const TokenBagRef> members, StitchMode mode,
                             const MlpParams& backbone, const BranchHead& head);

struct StitchGrads {
  std::vector<Vec> intermediate_grads;      // d/d lower-head output, per path
  std::vector<std::vector<Vec>> token_grads; // per member, only when requested
};

// Accumulates into the gradient blocks. For input_concat the merged-bag token
// gradients are split back to the members in bag order.
StitchGrads stitch_backward(const StitchForward& fwd, std::span<const TokenBagRef> members,
                            const MlpParams& backbone, const BranchHead& head,
                            std::span<const double> upstream_logits, MlpParams& backbone_grads,
                            BranchHead& head_grads, bool want_token_grads = false);

// Logits for a single unstitched sample (tiles for concat-width heads).
Vec single_logits(const std::vector<Token>& tokens, const MlpParams& backbone, const BranchHead& head);
// Same, from a precomputed backbone output.
Vec head_logits(std::span<const double> hidden, const BranchHead& head);

}  // namespace stitchlearn

#endif  // STITCHLEARN_STITCHUP_HPP_
