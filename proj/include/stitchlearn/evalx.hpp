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

// Ranking metrics and training-stream label-noise diagnostics.
//
// AP is non-interpolated: the mean, over positive samples, of precision at
// the rank where each positive is retrieved. Scores are ranked descending and
// ties go to the lower sample index. Classes without a positive test sample
// are left out of every mean (with a warning).
//
// Noise level of a consumed training sample (possibly stitched) is measured
// against the union of its members' clean labels, over the positions where
// either the consumed label or the clean union is positive.
//
// Reduced / introduced counts, per stitch application and class k:
//   before = number of members whose own label disagrees with its clean label at k
//   after  = K if the stitched label disagrees with the clean union at k, else 0
//   reduced += max(0, before - after), introduced += max(0, after - before)
// (the stitched label's gradient reaches every member through the synthesis).

#ifndef STITCHLEARN_EVALX_HPP_
#define STITCHLEARN_EVALX_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stitchlearn/numcore.hpp"
#include "stitchlearn/synthgen.hpp"

namespace stitchlearn {

// Throws std::invalid_argument when `labels` has no positive.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct ApResult {
  std::vector<std::optional<double>> per_class_ap;  // nullopt: no test positives
  double map_total = 0.0;
  std::optional<double> map_head;
  std::optional<double> map_medium;
  std::optional<double> map_tail;
  std::vector<std::string> warnings;
};

// scores[i][k] for test sample i and class k.
ApResult map_from_scores(std::span<const Vec> scores, std::span<const TokenBagSample> test,
                         const SubsetSplit& split);

struct NoiseLevelRecord {
  std::size_t iteration = 0;  // last iteration covered by the window
  std::string stream;         // "f", "g" or "all"
  double noise_total = 0.0;
  std::optional<double> noise_head;
  std::optional<double> noise_medium;
  std::optional<double> noise_tail;
  std::size_t samples = 0;
  std::size_t reduced_count = 0;
  std::size_t introduced_count = 0;
};

struct ConsumedSample {
  std::size_t stream = 0;               // 0 = f, 1 = g
  Label consumed;                       // label the model trained on
  std::vector<Label> member_labels;     // labels entering the union (one per member)
  std::vector<Label> member_clean;      // members' clean labels
  bool stitched = false;
};

class NoiseTracker {
 public:
  NoiseTracker() = default;
  NoiseTracker(std::size_t num_classes, SubsetSplit split, std::size_t window);

  void observe(const ConsumedSample& s);
  // Flushes one record per stream (plus "all") every `window` iterations.
  void end_iteration(std::size_t iteration);

  const std::vector<NoiseLevelRecord>& records() const { return records_; }
  std::size_t total_reduced() const { return total_reduced_; }
  std::size_t total_introduced() const { return total_introduced_; }

  struct Window {
    std::vector<std::size_t> positions;      // per class
    std::vector<std::size_t> disagreements;  // per class
    std::size_t samples = 0;
    std::size_t reduced = 0;
    std::size_t introduced = 0;
  };
  // Exposed for checkpointing.
  std::vector<Window>& windows() { return windows_; }
  std::vector<NoiseLevelRecord>& mutable_records() { return records_; }
  std::size_t& iterations_in_window() { return iters_in_window_; }
  std::size_t& total_reduced_ref() { return total_reduced_; }
  std::size_t& total_introduced_ref() { return total_introduced_; }

 private:
  NoiseLevelRecord make_record(const Window& w, std::size_t iteration, const std::string& name) const;

  std::size_t num_classes_ = 0;
  SubsetSplit split_;
  std::size_t window_ = 1;
  std::size_t iters_in_window_ = 0;
  std::vector<Window> windows_;  // index 0 = f, 1 = g
  std::vector<NoiseLevelRecord> records_;
  std::size_t total_reduced_ = 0;
  std::size_t total_introduced_ = 0;
};

// Per-application noise accounting (see file comment).
void stitch_noise_delta(std::span<const Label> member_labels, std::span<const Label> member_clean,
                        const Label& stitched, std::size_t& reduced, std::size_t& introduced);

// Batch form: `stream[t]` holds the samples consumed at iteration t.
std::vector<NoiseLevelRecord> noise_level(std::span<const std::vector<ConsumedSample>> stream,
                                          std::size_t num_classes, const SubsetSplit& split,
                                          std::size_t window);

}  // namespace stitchlearn

#endif  // STITCHLEARN_EVALX_HPP_
