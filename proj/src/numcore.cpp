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

#include "stitchlearn/numcore.hpp"

#include <algorithm>
#include <cmath>

namespace stitchlearn {

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void MlpParams::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.bias.size() != l.out_dim()) {
      throw ConfigError("layer " + std::to_string(i) + ": bias length " +
                        std::to_string(l.bias.size()) + " != out dim " +
                        std::to_string(l.out_dim()));
    }
    if (i > 0 && layers[i - 1].out_dim() != l.in_dim()) {
      throw ConfigError("layer " + std::to_string(i) + ": in dim " + std::to_string(l.in_dim()) +
                        " does not chain with previous out dim " +
                        std::to_string(layers[i - 1].out_dim()));
    }
  }
}

MlpParams make_mlp(std::span<const std::size_t> dims, Activation hidden, Activation last,
                   std::mt19937_64& rng) {
  if (dims.size() < 2) throw ConfigError("make_mlp: need at least input and output dims");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    l.weight = DenseMatrix(dims[i + 1], dims[i]);
    l.bias.assign(dims[i + 1], 0.0);
    l.activation = (i + 2 == dims.size()) ? last : hidden;
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[i]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& w : l.weight.data()) w = u(rng);
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpParams zeros_like(const MlpParams& p) {
  MlpParams z;
  z.layers.reserve(p.layers.size());
  for (const auto& l : p.layers) {
    Layer zl;
    zl.weight = DenseMatrix(l.weight.rows(), l.weight.cols());
    zl.bias.assign(l.bias.size(), 0.0);
    zl.activation = l.activation;
    z.layers.push_back(std::move(zl));
  }
  return z;
}

BranchHead zeros_like(const BranchHead& h) { return {zeros_like(h.lower), zeros_like(h.upper)}; }

void add_scaled(MlpParams& dst, const MlpParams& src, double scale) {
  if (dst.layers.size() != src.layers.size()) throw ConfigError("add_scaled: layer count mismatch");
  for (std::size_t i = 0; i < dst.layers.size(); ++i) {
    auto dw = dst.layers[i].weight.data();
    auto sw = src.layers[i].weight.data();
    if (dw.size() != sw.size() || dst.layers[i].bias.size() != src.layers[i].bias.size()) {
      throw ConfigError("add_scaled: shape mismatch at layer " + std::to_string(i));
    }
    for (std::size_t j = 0; j < dw.size(); ++j) dw[j] += scale * sw[j];
    for (std::size_t j = 0; j < dst.layers[i].bias.size(); ++j) {
      dst.layers[i].bias[j] += scale * src.layers[i].bias[j];
    }
  }
}

bool all_finite(const MlpParams& p) {
  for (const auto& l : p.layers) {
    for (double w : l.weight.data())
      if (!std::isfinite(w)) return false;
    for (double b : l.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

Vec mlp_forward(const MlpParams& params, std::span<const double> input, MlpCache* cache) {
  if (input.size() != params.in_dim()) {
    throw ConfigError("mlp_forward: input width " + std::to_string(input.size()) +
                      " != expected " + std::to_string(params.in_dim()));
  }
  if (cache) {
    cache->generation = params.generation;
    cache->inputs.resize(params.layers.size());
    cache->pre.resize(params.layers.size());
  }
  Vec x(input.begin(), input.end());
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const Layer& l = params.layers[li];
    Vec z(l.out_dim());
    for (std::size_t r = 0; r < l.out_dim(); ++r) {
      const auto w = l.weight.row(r);
      double acc = l.bias[r];
      for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * x[c];
      z[r] = acc;
    }
    Vec a = z;
    if (l.activation == Activation::kRelu) {
      for (double& v : a) v = v > 0.0 ? v : 0.0;
    }
    if (cache) {
      cache->inputs[li] = std::move(x);
      cache->pre[li] = std::move(z);
    }
    x = std::move(a);
  }
  return x;
}

Vec mlp_backward(const MlpParams& params, const MlpCache& cache, std::span<const double> upstream,
                 MlpParams& grads, bool want_input_grad) {
  if (cache.generation != params.generation) {
    throw ConfigError("mlp_backward: stale cache (parameters changed since forward)");
  }
  if (cache.inputs.size() != params.layers.size() || cache.pre.size() != params.layers.size()) {
    throw ConfigError("mlp_backward: cache does not match the layer stack");
  }
  if (grads.layers.size() != params.layers.size()) {
    throw ConfigError("mlp_backward: gradient shape mismatch");
  }
  if (upstream.size() != params.out_dim()) {
    throw ConfigError("mlp_backward: upstream width " + std::to_string(upstream.size()) +
                      " != output width " + std::to_string(params.out_dim()));
  }
  Vec g(upstream.begin(), upstream.end());
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const Layer& l = params.layers[li];
    Layer& gl = grads.layers[li];
    const Vec& x = cache.inputs[li];
    const Vec& z = cache.pre[li];
    if (z.size() != l.out_dim() || x.size() != l.in_dim()) {
      throw ConfigError("mlp_backward: cache shape mismatch at layer " + std::to_string(li));
    }
    if (l.activation == Activation::kRelu) {
      for (std::size_t r = 0; r < g.size(); ++r)
        if (!(z[r] > 0.0)) g[r] = 0.0;
    }
    for (std::size_t r = 0; r < l.out_dim(); ++r) {
      const double gr = g[r];
      gl.bias[r] += gr;
      if (gr == 0.0) continue;
      for (std::size_t c = 0; c < l.in_dim(); ++c) gl.weight(r, c) += gr * x[c];
    }
    if (li == 0 && !want_input_grad) return {};
    Vec gx(l.in_dim(), 0.0);
    for (std::size_t r = 0; r < l.out_dim(); ++r) {
      const double gr = g[r];
      if (gr == 0.0) continue;
      const auto w = l.weight.row(r);
      for (std::size_t c = 0; c < w.size(); ++c) gx[c] += gr * w[c];
    }
    g = std::move(gx);
  }
  return g;
}

Vec mean_pool(std::span<const Token> tokens) {
  if (tokens.empty()) throw std::invalid_argument("degenerate sample: empty token bag");
  const std::size_t d = tokens.front().size();
  Vec pooled(d, 0.0);
  for (const auto& t : tokens) {
    if (t.size() != d) throw ConfigError("mean_pool: ragged token widths");
    for (std::size_t i = 0; i < d; ++i) pooled[i] += t[i];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& v : pooled) v *= inv;
  return pooled;
}

BackboneOutput backbone_forward(std::span<const Token> tokens, const MlpParams& backbone) {
  Vec pooled = mean_pool(tokens);
  return backbone_forward_pooled(pooled, tokens.size(), backbone);
}

BackboneOutput backbone_forward_pooled(std::span<const double> pooled, std::size_t token_count,
                                       const MlpParams& backbone) {
  BackboneOutput out;
  out.cache.token_count = token_count;
  out.hidden = mlp_forward(backbone, pooled, &out.cache.mlp);
  return out;
}

Vec backbone_backward(const MlpParams& backbone, const BackboneCache& cache,
                      std::span<const double> upstream, MlpParams& grads,
                      std::vector<Vec>* token_grads) {
  const bool want = token_grads != nullptr;
  Vec g = mlp_backward(backbone, cache.mlp, upstream, grads, want);
  if (want) {
    if (cache.token_count == 0) throw ConfigError("backbone_backward: cache has no tokens");
    Vec per_token = g;
    const double inv = 1.0 / static_cast<double>(cache.token_count);
    for (double& v : per_token) v *= inv;
    token_grads->assign(cache.token_count, per_token);
  }
  return g;
}

BranchOutput branch_forward(std::span<const double> hidden, const BranchHead& head) {
  BranchOutput out;
  out.intermediate = mlp_forward(head.lower, hidden, &out.cache.lower);
  out.logits = mlp_forward(head.upper, out.intermediate, &out.cache.upper);
  return out;
}

Vec branch_backward(const BranchHead& head, const BranchCache& cache,
                    std::span<const double> upstream_logits, BranchHead& grads) {
  Vec g = mlp_backward(head.upper, cache.upper, upstream_logits, grads.upper);
  return mlp_backward(head.lower, cache.lower, g, grads.lower);
}

void sgd_step(std::span<MlpParams* const> params, std::span<const MlpParams* const> grads,
              OptimState& state, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
  if (params.size() != grads.size()) throw ConfigError("sgd_step: params/grads count mismatch");
  for (const MlpParams* g : grads) {
    if (!all_finite(*g)) throw DivergedError("diverged: non-finite gradient");
  }
  if (state.buffers.size() != params.size()) {
    state.buffers.clear();
    for (const MlpParams* p : params) state.buffers.push_back(zeros_like(*p));
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    MlpParams& p = *params[b];
    const MlpParams& g = *grads[b];
    MlpParams& buf = state.buffers[b];
    if (g.layers.size() != p.layers.size() || buf.layers.size() != p.layers.size()) {
      throw ConfigError("sgd_step: block shape mismatch");
    }
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
      auto update = [&](std::span<double> w, std::span<const double> gw, std::span<double> bw) {
        if (w.size() != gw.size() || w.size() != bw.size()) {
          throw ConfigError("sgd_step: layer shape mismatch");
        }
        for (std::size_t j = 0; j < w.size(); ++j) {
          bw[j] = state.momentum * bw[j] + (gw[j] + state.weight_decay * w[j]);
          w[j] -= lr * bw[j];
        }
      };
      update(p.layers[li].weight.data(), g.layers[li].weight.data(), buf.layers[li].weight.data());
      update(p.layers[li].bias, g.layers[li].bias, buf.layers[li].bias);
    }
    ++p.generation;
  }
}

double lr_at(const LrSchedule& s, std::size_t iter, std::size_t epoch) {
  double lr = s.base_lr;
  for (std::size_t e : s.decay_epochs)
    if (epoch >= e) lr *= s.decay_factor;
  if (iter < s.warmup_iters && s.warmup_iters > 0) {
    const double frac = static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
    lr *= s.warmup_ratio + (1.0 - s.warmup_ratio) * frac;
  }
  return lr;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  // log(1/(1+e^-x)) = -softplus(-x)
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace stitchlearn
