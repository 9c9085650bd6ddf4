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

#include "stitchlearn/stitchup.hpp"

#include <stdexcept>

namespace stitchlearn {

std::string to_string(StitchMode m) {
  switch (m) {
    case StitchMode::kOff: return "off";
    case StitchMode::kInputConcat: return "input_concat";
    case StitchMode::kFeatureConcat: return "feature_concat";
    case StitchMode::kFeatureAverage: return "feature_average";
  }
  return "?";
}

StitchMode stitch_mode_from_string(const std::string& s) {
  if (s == "off" || s == "none") return StitchMode::kOff;
  if (s == "input_concat") return StitchMode::kInputConcat;
  if (s == "feature_concat") return StitchMode::kFeatureConcat;
  if (s == "feature_average") return StitchMode::kFeatureAverage;
  throw std::invalid_argument("unknown stitch mode '" + s +
                              "' (expected off|input_concat|feature_concat|feature_average)");
}

void StitchConfig::validate() const {
  if (mode == StitchMode::kOff) return;
  if (k < 2) throw ConfigError("stitch.k must be >= 2");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("stitch.p must be in [0,1]");
  if (mode == StitchMode::kFeatureConcat && p != 1.0) {
    throw ConfigError(
        "stitch.mode = feature_concat requires stitch.p = 1 (a concat-width head cannot "
        "take passthrough samples)");
  }
}

CandidateSet select_candidates(std::size_t anchor, const Label& anchor_noisy, const ClassIndex& index,
                               std::size_t k, Rng& rng) {
  std::vector<std::size_t> positives;
  for (std::size_t c = 0; c < anchor_noisy.size(); ++c)
    if (anchor_noisy[c]) positives.push_back(c);
  if (positives.empty()) throw std::invalid_argument("select_candidates: anchor has no positives");
  CandidateSet set;
  set.anchor = anchor;
  set.shared_class = positives[uniform_index(rng, positives.size())];
  const auto pool = index.members(set.shared_class);
  if (pool.empty()) throw std::invalid_argument("select_candidates: class index is stale");
  set.members.reserve(k);
  set.members.push_back(anchor);
  for (std::size_t j = 1; j < k; ++j) set.members.push_back(pool[uniform_index(rng, pool.size())]);
  return set;
}

Label label_union(std::span<const Label> labels) {
  if (labels.empty()) return {};
  Label out(labels.front().size(), 0);
  for (const auto& y : labels) {
    if (y.size() != out.size()) throw std::invalid_argument("label_union: length mismatch");
    for (std::size_t k = 0; k < y.size(); ++k) out[k] = out[k] | y[k];
  }
  return out;
}

StitchedSample maybe_stitch(std::size_t anchor, std::span<const TokenBagSample> train,
                            const ClassIndex& index, const StitchConfig& cfg, Rng& rng) {
  StitchedSample out;
  const double u = uniform01(rng);
  if (cfg.mode == StitchMode::kOff || !(u < cfg.p)) {
    out.members = {anchor};
    out.label = train[anchor].noisy;
    return out;
  }
  auto set = select_candidates(anchor, train[anchor].noisy, index, cfg.k, rng);
  out.stitched = true;
  out.shared_class = set.shared_class;
  out.members = std::move(set.members);
  std::vector<Label> labels;
  labels.reserve(out.members.size());
  for (std::size_t m : out.members) labels.push_back(train[m].noisy);
  out.label = label_union(labels);
  return out;
}

StitchForward stitch_forward(std::span<const TokenBagRef> members, StitchMode mode,
                             const MlpParams& backbone, const BranchHead& head) {
  if (members.empty()) throw std::invalid_argument("stitch_forward: no members");
  if (mode == StitchMode::kOff && members.size() > 1) {
    throw ConfigError("stitch_forward: mode off takes exactly one member");
  }
  StitchForward f;
  f.mode = mode;
  f.member_count = members.size();

  std::vector<Token> merged;
  std::vector<std::span<const Token>> paths;
  if (mode == StitchMode::kInputConcat && members.size() > 1) {
    for (TokenBagRef m : members) merged.insert(merged.end(), m->begin(), m->end());
    paths.emplace_back(merged);
  } else {
    for (TokenBagRef m : members) paths.emplace_back(*m);
  }

  for (const auto& bag : paths) {
    auto bb = backbone_forward(bag, backbone);
    MlpCache lc;
    Vec inter = mlp_forward(head.lower, bb.hidden, &lc);
    f.hidden.push_back(std::move(bb.hidden));
    f.backbone_caches.push_back(std::move(bb.cache));
    f.intermediates.push_back(std::move(inter));
    f.lower_caches.push_back(std::move(lc));
  }

  const std::size_t df = f.intermediates.front().size();
  const std::size_t width = head.upper.in_dim();
  const std::size_t n = f.intermediates.size();
  if (n == 1) {
    if (width == df) {
      f.combined = f.intermediates.front();
    } else if (df > 0 && width % df == 0) {
      f.tiling = width / df;
      for (std::size_t t = 0; t < f.tiling; ++t) {
        f.combined.insert(f.combined.end(), f.intermediates.front().begin(),
                          f.intermediates.front().end());
      }
    } else {
      throw ConfigError("stitch_forward: upper head width " + std::to_string(width) +
                        " incompatible with feature width " + std::to_string(df));
    }
  } else if (mode == StitchMode::kFeatureAverage) {
    if (width != df) {
      throw ConfigError("feature_average: upper head width " + std::to_string(width) +
                        " != feature width " + std::to_string(df));
    }
    f.combined.assign(df, 0.0);
    for (const auto& v : f.intermediates)
      for (std::size_t i = 0; i < df; ++i) f.combined[i] += v[i];
    const double inv = 1.0 / static_cast<double>(n);
    for (double& v : f.combined) v *= inv;
  } else if (mode == StitchMode::kFeatureConcat) {
    if (width != n * df) {
      throw ConfigError("feature_concat: upper head width " + std::to_string(width) + " != " +
                        std::to_string(n) + " x " + std::to_string(df));
    }
    for (const auto& v : f.intermediates) f.combined.insert(f.combined.end(), v.begin(), v.end());
  } else {
    throw ConfigError("stitch_forward: unsupported mode for multiple paths");
  }
  f.logits = mlp_forward(head.upper, f.combined, &f.upper_cache);
  return f;
}

StitchGrads stitch_backward(const StitchForward& f, std::span<const TokenBagRef> members,
                            const MlpParams& backbone, const BranchHead& head,
                            std::span<const double> upstream_logits, MlpParams& backbone_grads,
                            BranchHead& head_grads, bool want_token_grads) {
  if (members.size() != f.member_count) {
    throw ConfigError("stitch_backward: member count does not match the forward pass");
  }
  const Vec g_comb = mlp_backward(head.upper, f.upper_cache, upstream_logits, head_grads.upper);
  const std::size_t n = f.intermediates.size();
  const std::size_t df = f.intermediates.front().size();

  StitchGrads out;
  out.intermediate_grads.assign(n, Vec(df, 0.0));
  if (n == 1) {
    for (std::size_t t = 0; t < f.tiling; ++t)
      for (std::size_t i = 0; i < df; ++i) out.intermediate_grads[0][i] += g_comb[t * df + i];
  } else if (f.mode == StitchMode::kFeatureAverage) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& g : out.intermediate_grads)
      for (std::size_t i = 0; i < df; ++i) g[i] = g_comb[i] * inv;
  } else {
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < df; ++i) out.intermediate_grads[j][i] = g_comb[j * df + i];
  }

  std::vector<std::vector<Vec>> path_tokens(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Vec gh = mlp_backward(head.lower, f.lower_caches[j], out.intermediate_grads[j],
                                head_grads.lower);
    backbone_backward(backbone, f.backbone_caches[j], gh, backbone_grads,
                      want_token_grads ? &path_tokens[j] : nullptr);
  }
  if (want_token_grads) {
    if (n == members.size()) {
      out.token_grads = std::move(path_tokens);
    } else {
      // merged bag: hand each member its own slice
      std::size_t offset = 0;
      for (TokenBagRef m : members) {
        out.token_grads.emplace_back(path_tokens[0].begin() + static_cast<std::ptrdiff_t>(offset),
                                     path_tokens[0].begin() +
                                         static_cast<std::ptrdiff_t>(offset + m->size()));
        offset += m->size();
      }
    }
  }
  return out;
}

Vec head_logits(std::span<const double> hidden, const BranchHead& head) {
  Vec inter = mlp_forward(head.lower, hidden, nullptr);
  const std::size_t width = head.upper.in_dim();
  if (width != inter.size()) {
    if (inter.empty() || width % inter.size() != 0) {
      throw ConfigError("head_logits: upper head width incompatible with feature width");
    }
    Vec tiled;
    tiled.reserve(width);
    for (std::size_t t = 0; t < width / inter.size(); ++t) tiled.insert(tiled.end(), inter.begin(), inter.end());
    inter = std::move(tiled);
  }
  return mlp_forward(head.upper, inter, nullptr);
}

Vec single_logits(const std::vector<Token>& tokens, const MlpParams& backbone,
                  const BranchHead& head) {
  const Vec hidden = mlp_forward(backbone, mean_pool(tokens), nullptr);
  return head_logits(hidden, head);
}

}  // namespace stitchlearn
