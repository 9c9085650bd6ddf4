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

// Multi-label losses on logits, each returning the value and its exact
// gradient with respect to the logits.
//
//   bce       -(1/C) sum_k [y log s(z) + (1-y) log(1 - s(z))]
//   focal     per-class BCE term times weighting * (1 - p_t)^focusing
//   db        -(1/C) sum_k rhat_k [y log s(z-nu) + (1/lambda)(1-y) log(1 - s(lambda(z-nu)))]
//               r_k    = (1/N_k) / sum_{j positive} (1/N_j)
//               rhat_k = theta + 1 / (1 + exp(-phi (r_k - mu)))
//               nu_k   = kappa log(1/p_k - 1)
//   db_focal  db with each log-term (after the 1/lambda scaling) focal-modulated,
//             p_t taken on the shifted / scaled logit of that term.
//
// Log-sigmoids are evaluated in logit space, so saturated logits stay finite.
// Targets are doubles in [0,1]; soft targets are accepted (Mix-Up). For the
// rebalancing weight a class counts as positive when its target is > 0.

#ifndef STITCHLEARN_LOSSES_HPP_
#define STITCHLEARN_LOSSES_HPP_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stitchlearn/numcore.hpp"
#include "stitchlearn/synthgen.hpp"

namespace stitchlearn {

struct LossOutput {
  double value = 0.0;
  Vec grad_logits;
};

struct FocalHyperParams {
  double focusing = 2.0;
  double weighting = 2.0;
};

// Preset values follow the usual DB-Focal reference configuration.
struct DbHyperParams {
  double lambda = 5.0;
  double theta = 0.1;
  double phi = 6.0;
  double mu = 0.3;
  double kappa = 0.05;
  std::vector<double> class_counts;  // N_k, each >= 1
  std::vector<double> class_priors;  // p_k = N_k / N
};

// Fills counts/priors from per-class positive counts over `num_samples`
// samples. Counts are floored at 1 so priors stay in (0,1).
void set_class_statistics(DbHyperParams& hp, std::span<const std::size_t> counts,
                          std::size_t num_samples);

Vec to_targets(const Label& y);

LossOutput bce(std::span<const double> z, std::span<const double> y);
LossOutput focal(std::span<const double> z, std::span<const double> y, const FocalHyperParams& hp);

struct RebalanceWeights {
  Vec r;
  Vec r_hat;
};

// Throws std::invalid_argument("undefined rebalancing denominator") without positives.
RebalanceWeights db_rebalance_weight(std::span<const double> y, std::span<const double> counts,
                                     double theta, double phi, double mu);

// Throws std::invalid_argument("degenerate prior") for p_k outside (0,1).
Vec db_class_bias(std::span<const double> priors, double kappa);

LossOutput db_loss(std::span<const double> z, std::span<const double> y, const DbHyperParams& hp,
                   const std::optional<FocalHyperParams>& focal_hp = std::nullopt);

enum class LossKind { kBce, kFocal, kDb, kDbFocal };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct LossSettings {
  DbHyperParams db;
  FocalHyperParams focal;
};

LossOutput evaluate_loss(LossKind kind, std::span<const double> z, std::span<const double> y,
                         const LossSettings& settings);

struct BranchBatch {
  std::span<const Vec> logits;
  std::span<const Vec> targets;
};

struct OverallLossOutput {
  double value = 0.0;
  double loss_f = 0.0;  // mean over the f batch (before weight)
  double loss_g = 0.0;
  std::vector<Vec> grad_f;  // d value / d logits, per sample
  std::vector<Vec> grad_g;
};

// value = weight_f * mean_i L_f(z_i, y_i) + weight_g * mean_i L_g(z'_i, y'_i).
// A zero weight drops that branch (its batch may then be empty); a branch with
// a nonzero weight and an empty batch throws.
OverallLossOutput overall_loss(const BranchBatch& f, const BranchBatch& g, LossKind kind_f,
                               LossKind kind_g, const LossSettings& settings,
                               double weight_f = 1.0, double weight_g = 1.0);

}  // namespace stitchlearn

#endif  // STITCHLEARN_LOSSES_HPP_
