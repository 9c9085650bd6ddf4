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

// Two-branch co-learning: a shared backbone with a uniform-sampling branch f
// and a class-rebalanced branch g, label correction by thresholded peer
// probabilities, and the tau-weighted logit ensemble for inference.
//
// One training iteration:
//   1. draw the f batch and the g batch from their samplers
//   2. plan augmentation per anchor (stitch or Mix-Up), sequentially
//   3. per sample: forward through the branch, pseudo-label every member with
//      the guiding head (peer for cross, own for self) on that member alone,
//      take the union of member labels as the target, loss, backward
//   4. one SGD step on all blocks (or Phi,f then Phi,g when sequential_update)
//
// Per-sample work runs in fixed chunks reduced in chunk order, so results do
// not depend on the worker count.

#ifndef STITCHLEARN_COLEARN_HPP_
#define STITCHLEARN_COLEARN_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stitchlearn/evalx.hpp"
#include "stitchlearn/losses.hpp"
#include "stitchlearn/numcore.hpp"
#include "stitchlearn/sampling.hpp"
#include "stitchlearn/stitchup.hpp"
#include "stitchlearn/synthgen.hpp"

namespace stitchlearn {

enum class PseudoLabelMode : std::uint8_t { kOff = 0, kSelf = 1, kCross = 2 };
std::string to_string(PseudoLabelMode m);
PseudoLabelMode pseudo_label_mode_from_string(const std::string& s);

struct PseudoLabelConfig {
  double alpha = 0.8;
  double beta = 0.2;
  PseudoLabelMode mode = PseudoLabelMode::kCross;
  std::size_t start_iter = 0;
  // 0 <= beta < alpha <= 1.
  void validate() const;
};

// 1 if q > alpha, 0 if q < beta, the noisy label otherwise.
std::uint8_t pseudo_label(double q, std::uint8_t noisy, const PseudoLabelConfig& cfg);
Label pseudo_label(std::span<const double> q, const Label& noisy, const PseudoLabelConfig& cfg);

// Labels every member from the guiding probabilities. Mode off returns the
// noisy labels unchanged. The per-member results are unioned by the caller
// when the sample is stitched.
std::vector<Label> cross_guide(std::span<const Vec> member_probs, std::span<const Label> member_noisy,
                               const PseudoLabelConfig& cfg);

struct ModelDims {
  std::size_t input_dim = 32;
  std::size_t backbone_hidden = 64;
  std::size_t backbone_out = 64;
  std::size_t head_hidden = 32;
  std::size_t num_classes = 20;
  // Upper-head input width multiplier (K for feature_concat, else 1).
  std::size_t concat_k = 1;
};

struct TwoBranchModel {
  ModelDims dims;
  MlpParams backbone;
  BranchHead head_f;
  BranchHead head_g;

  static TwoBranchModel init(const ModelDims& dims, std::uint64_t seed);
  // Fixed block order: backbone, f.lower, f.upper, g.lower, g.upper.
  std::array<MlpParams*, 5> blocks();
  std::array<const MlpParams*, 5> blocks() const;
  bool same_values(const TwoBranchModel& o) const;
};

struct BranchConfig {
  SamplerKind sampler = SamplerKind::kUniform;
  std::size_t batch = 32;
  LossKind loss = LossKind::kBce;
};

enum class AugmentKind : std::uint8_t { kStitch = 0, kMixup = 1 };
std::string to_string(AugmentKind a);
AugmentKind augment_kind_from_string(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 8;
  BranchConfig f{SamplerKind::kUniform, 32, LossKind::kBce};
  BranchConfig g{SamplerKind::kClassRebalanced, 256, LossKind::kDbFocal};
  // false: only branch f is trained; inference then uses f alone.
  bool two_branch = true;
  LrSchedule lr;
  StitchConfig stitch;
  AugmentKind augment = AugmentKind::kStitch;
  double mixup_alpha = 1.0;
  PseudoLabelConfig pl;
  double tau = 0.1;
  std::uint64_t seed = 0;
  ModelDims dims;  // input_dim / num_classes / concat_k are filled from the data and stitch mode
  LossSettings loss;  // class statistics are filled from the training labels
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t log_interval = 10;
  std::size_t noise_window = 10;
  bool eval_each_epoch = true;
  bool sequential_update = false;
  std::size_t threads = 1;  // 0 = read STITCHLEARN_THREADS, default 1
  // When set, stop after this many iterations (checkpoint / resume tests).
  std::optional<std::size_t> max_iterations;

  void validate() const;
  // tau used for evaluation (1 when single-branch).
  double effective_tau() const { return two_branch ? tau : 1.0; }
};

std::size_t iterations_per_epoch(std::size_t num_train, const TrainConfig& cfg);

// Canonical JSON of every setting that affects training numerics.
std::string config_fingerprint(const TrainConfig& cfg);

struct MetricRow {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_f = 0.0;
  double loss_g = 0.0;           // 0 when single-branch
  std::optional<double> noise;   // latest "all" window noise
  std::size_t reduced = 0;       // cumulative
  std::size_t introduced = 0;    // cumulative
  std::optional<double> map_total;
  std::optional<double> map_head;
  std::optional<double> map_medium;
  std::optional<double> map_tail;
  bool operator==(const MetricRow&) const = default;
};

struct TrainHistory {
  std::vector<MetricRow> rows;
  std::vector<NoiseLevelRecord> noise;
  std::size_t total_reduced = 0;
  std::size_t total_introduced = 0;
};

struct TrainResult {
  TwoBranchModel model;
  TrainHistory history;
  std::size_t iterations_done = 0;
  double tau = 0.1;
};

struct TrainOptions {
  // Written at every epoch end and at the end of training when non-empty.
  std::filesystem::path checkpoint_path;
  // Resume from this checkpoint (must match the config fingerprint).
  std::filesystem::path resume_from;
  // Optional per-stitch diagnostic sink (one line per stitched batch).
  std::ostream* stitch_log = nullptr;
};

TrainResult train(const DatasetBundle& data, const TrainConfig& cfg, const TrainOptions& opts = {});

// sigmoid(tau * f(Phi(x)) + (1 - tau) * g(Phi(x))).
Vec infer(const TwoBranchModel& model, const std::vector<Token>& tokens, double tau);
Vec ensemble_logits(const TwoBranchModel& model, const std::vector<Token>& tokens, double tau);

// Standalone model file: "STLMODL1", u32 version, dims, then the five
// parameter blocks in block order.
void save_model(const TwoBranchModel& model, const std::filesystem::path& path);
TwoBranchModel load_model(const std::filesystem::path& path);

ApResult map_report(const TwoBranchModel& model, std::span<const TokenBagSample> test,
                    const SubsetSplit& split, double tau);

// Per-branch backbone gradient pieces of one iteration, for tests: the
// gradient blocks after step 3 above, without updating anything.
struct IterationGrads {
  MlpParams backbone_f;  // backbone gradient from the f loss only
  MlpParams backbone_g;  // backbone gradient from the g loss only
  BranchHead head_f;
  BranchHead head_g;
  double loss_f = 0.0;
  double loss_g = 0.0;
};
// Runs steps 1-3 of iteration 0 from a freshly initialised model.
IterationGrads first_iteration_grads(const DatasetBundle& data, const TrainConfig& cfg);

}  // namespace stitchlearn

#endif  // STITCHLEARN_COLEARN_HPP_
