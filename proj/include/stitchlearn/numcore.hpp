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

// Dense numerics for the token-bag network: a row-major matrix, affine+relu
// stacks with cached forward passes and exact reverse mode, SGD with momentum
// and the warm-up / step-decay learning-rate schedule.
//
// Network layout:
//   backbone  = mean-pool(tokens) -> affine+relu -> affine+relu
//   head      = lower (affine+relu) -> upper (affine, logits)
//
// All arithmetic is double precision.

#ifndef STITCHLEARN_NUMCORE_HPP_
#define STITCHLEARN_NUMCORE_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stitchlearn {

using Vec = std::vector<double>;
using Token = Vec;

// Raised for shape / configuration mistakes (mismatched widths, bad caches).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when an update would write non-finite values into the parameters.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec data_;
};

enum class Activation : std::uint8_t { kRelu = 0, kIdentity = 1 };

// weight is out_dim x in_dim.
struct Layer {
  DenseMatrix weight;
  Vec bias;
  Activation activation = Activation::kIdentity;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  bool operator==(const Layer&) const = default;
};

struct MlpParams {
  std::vector<Layer> layers;
  // Bumped by every optimizer update so that caches taken before the update
  // are rejected by backward.
  std::uint64_t generation = 0;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  std::size_t parameter_count() const;

  // Throws ConfigError unless adjacent layers chain and biases match.
  void validate() const;

  // Equality of weights, biases and activations. The generation counter is
  // bookkeeping and does not participate.
  bool same_values(const MlpParams& other) const { return layers == other.layers; }
};

// dims = {in, h1, ..., out}. Every layer but the last uses `hidden`; the last
// uses `last`. He-uniform weights, zero biases.
MlpParams make_mlp(std::span<const std::size_t> dims, Activation hidden, Activation last,
                   std::mt19937_64& rng);

// Same shape as `p`, all zeros. Used for gradients and momentum buffers.
MlpParams zeros_like(const MlpParams& p);

// dst += scale * src (shapes must match).
void add_scaled(MlpParams& dst, const MlpParams& src, double scale);

bool all_finite(const MlpParams& p);

struct MlpCache {
  std::uint64_t generation = 0;
  std::vector<Vec> inputs;  // input of each layer
  std::vector<Vec> pre;     // pre-activation of each layer
};

// Forward pass; fills `cache` when non-null.
Vec mlp_forward(const MlpParams& params, std::span<const double> input, MlpCache* cache);

// Reverse pass. Accumulates into `grads` (same shape as params) and returns
// d/d input when `want_input_grad`, otherwise an empty vector.
Vec mlp_backward(const MlpParams& params, const MlpCache& cache, std::span<const double> upstream,
                 MlpParams& grads, bool want_input_grad = true);

struct BackboneCache {
  std::size_t token_count = 0;
  MlpCache mlp;
};

struct BackboneOutput {
  Vec hidden;
  BackboneCache cache;
};

// Mean-pools the bag and runs the backbone layers. Throws std::invalid_argument
// ("degenerate sample") on an empty bag and ConfigError on a width mismatch.
BackboneOutput backbone_forward(std::span<const Token> tokens, const MlpParams& backbone);

// Same, but from an already pooled input (used by Mix-Up, which blends pooled bags).
BackboneOutput backbone_forward_pooled(std::span<const double> pooled, std::size_t token_count,
                                       const MlpParams& backbone);

// Mean-pool helper.
Vec mean_pool(std::span<const Token> tokens);

// Accumulates backbone parameter gradients; returns d/d pooled input. When
// `token_grads` is non-null it receives one gradient per token (the pooled
// gradient split equally).
Vec backbone_backward(const MlpParams& backbone, const BackboneCache& cache,
                      std::span<const double> upstream, MlpParams& grads,
                      std::vector<Vec>* token_grads = nullptr);

struct BranchHead {
  MlpParams lower;  // f1 / g1
  MlpParams upper;  // f2 / g2, produces logits

  bool same_values(const BranchHead& o) const {
    return lower.same_values(o.lower) && upper.same_values(o.upper);
  }
};

BranchHead zeros_like(const BranchHead& h);

struct BranchCache {
  MlpCache lower;
  MlpCache upper;
};

struct BranchOutput {
  Vec intermediate;
  Vec logits;
  BranchCache cache;
};

// intermediate = lower(hidden), logits = upper(intermediate).
BranchOutput branch_forward(std::span<const double> hidden, const BranchHead& head);

// Accumulates head gradients, returns d/d hidden.
Vec branch_backward(const BranchHead& head, const BranchCache& cache,
                    std::span<const double> upstream_logits, BranchHead& grads);

// ---------------------------------------------------------------------------
// Optimizer

struct OptimState {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // One buffer per parameter block, lazily zero-initialised on first step.
  std::vector<MlpParams> buffers;
};

// For each block b:
//   buffer <- momentum * buffer + (grad + weight_decay * param)
//   param  <- param - lr * buffer
// Every gradient is checked before anything is written; a non-finite entry
// throws DivergedError("diverged") and leaves params and state untouched.
void sgd_step(std::span<MlpParams* const> params, std::span<const MlpParams* const> grads,
              OptimState& state, double lr);

struct LrSchedule {
  double base_lr = 0.08;
  std::size_t warmup_iters = 100;
  double warmup_ratio = 1.0 / 3.0;
  std::vector<std::size_t> decay_epochs = {5, 7};
  double decay_factor = 0.1;
  std::size_t total_epochs = 8;
};

// Linear warm-up from base_lr*warmup_ratio at iter 0 to base_lr at
// iter == warmup_iters, times decay_factor^(#decay epochs <= epoch).
double lr_at(const LrSchedule& schedule, std::size_t iter, std::size_t epoch);

// Numerically stable logistic helpers.
double sigmoid(double x);
double log_sigmoid(double x);

}  // namespace stitchlearn

#endif  // STITCHLEARN_NUMCORE_HPP_
