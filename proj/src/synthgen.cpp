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

#include "stitchlearn/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "stitchlearn/rng.hpp"

namespace stitchlearn {
namespace {

void check_config(const GeneratorConfig& cfg) {
  if (cfg.num_classes < 3) throw std::invalid_argument("generator: num_classes must be >= 3");
  if (cfg.dim == 0) throw std::invalid_argument("generator: dim must be >= 1");
  if (cfg.min_count < 1) throw std::invalid_argument("generator: min_count must be >= 1");
  if (cfg.max_count <= cfg.min_count) {
    throw std::invalid_argument("generator: max_count must exceed min_count");
  }
  if (cfg.groups == 0) throw std::invalid_argument("generator: groups must be >= 1");
  if (cfg.pareto_exponent < 0.0) throw std::invalid_argument("generator: pareto_exponent < 0");
  if (cfg.cooccur_prob < 0.0 || cfg.cooccur_prob > 1.0) {
    throw std::invalid_argument("generator: cooccur_prob must be in [0,1]");
  }
  if (cfg.test_per_class == 0) throw std::invalid_argument("generator: test_per_class must be >= 1");
  if (cfg.max_train_samples > 0 && cfg.num_classes * cfg.min_count > cfg.max_train_samples) {
    throw std::invalid_argument("generator: infeasible counts: num_classes * min_count = " +
                                std::to_string(cfg.num_classes * cfg.min_count) +
                                " exceeds max_train_samples = " +
                                std::to_string(cfg.max_train_samples));
  }
}

// Label sets drawn from per-class quotas; see the header for the process.
std::vector<Label> draw_label_sets(const GeneratorConfig& cfg, std::vector<std::size_t> remaining,
                                   Rng& rng) {
  const std::size_t c = cfg.num_classes;
  std::vector<Label> out;
  std::vector<double> weights(c);
  std::size_t left = std::accumulate(remaining.begin(), remaining.end(), std::size_t{0});
  while (left > 0) {
    for (std::size_t k = 0; k < c; ++k) weights[k] = static_cast<double>(remaining[k]);
    const std::size_t primary = draw_categorical(rng, weights);
    Label y(c, 0);
    y[primary] = 1;
    --remaining[primary];
    --left;
    const std::size_t group = primary % cfg.groups;
    for (std::size_t j = group; j < c; j += cfg.groups) {
      if (j == primary || remaining[j] == 0) continue;
      if (uniform01(rng) < cfg.cooccur_prob) {
        y[j] = 1;
        --remaining[j];
        --left;
      }
    }
    out.push_back(std::move(y));
  }
  return out;
}

std::vector<Token> draw_tokens(const GeneratorConfig& cfg, const std::vector<ClassSpec>& classes,
                               const Label& y, Rng& rng) {
  std::normal_distribution<double> noise(
      0.0, cfg.token_noise_sigma / std::sqrt(static_cast<double>(cfg.dim)));
  std::normal_distribution<double> background(
      0.0, cfg.background_scale / std::sqrt(static_cast<double>(cfg.dim)));
  std::vector<Token> tokens;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (!y[k]) continue;
    Token t = classes[k].prototype;
    for (double& v : t) v += noise(rng);
    tokens.push_back(std::move(t));
  }
  for (std::size_t b = 0; b < cfg.background_tokens; ++b) {
    Token t(cfg.dim);
    for (double& v : t) v = background(rng);
    tokens.push_back(std::move(t));
  }
  return tokens;
}

}  // namespace

SubsetSplit split_by_count(std::span<const std::size_t> class_counts) {
  SubsetSplit s;
  for (std::size_t k = 0; k < class_counts.size(); ++k) {
    if (class_counts[k] > 100) {
      s.head.push_back(k);
    } else if (class_counts[k] >= 20) {
      s.medium.push_back(k);
    } else {
      s.tail.push_back(k);
    }
  }
  return s;
}

std::vector<std::size_t> class_count_formula(const GeneratorConfig& cfg) {
  std::vector<std::size_t> counts(cfg.num_classes);
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    const double raw = static_cast<double>(cfg.max_count) *
                       std::pow(static_cast<double>(k + 1), -cfg.pareto_exponent);
    const auto rounded = static_cast<std::size_t>(std::llround(raw));
    counts[k] = std::max(cfg.min_count, rounded);
  }
  return counts;
}

DatasetBundle generate_clean(const GeneratorConfig& cfg) {
  check_config(cfg);
  DatasetBundle b;
  b.num_classes = cfg.num_classes;
  b.dim = cfg.dim;
  b.seed = cfg.seed;
  b.config = cfg;

  const auto counts = class_count_formula(cfg);
  Rng proto_rng(derive_seed(cfg.seed, streams::kPrototypes));
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    ClassSpec spec;
    spec.class_id = k;
    spec.target_count = counts[k];
    spec.group_id = k % cfg.groups;
    spec.prototype.resize(cfg.dim);
    double norm2 = 0.0;
    for (double& v : spec.prototype) {
      v = stdnorm(proto_rng);
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : spec.prototype) v *= inv;
    b.classes.push_back(std::move(spec));
  }

  Rng train_rng(derive_seed(cfg.seed, streams::kTrainLabels));
  auto train_labels = draw_label_sets(cfg, counts, train_rng);
  Rng test_rng(derive_seed(cfg.seed, streams::kTestLabels));
  auto test_labels =
      draw_label_sets(cfg, std::vector<std::size_t>(cfg.num_classes, cfg.test_per_class), test_rng);

  std::size_t id = 0;
  for (auto& y : train_labels) {
    Rng trng(derive_seed(cfg.seed, streams::kTokens, id));
    TokenBagSample s;
    s.sample_id = id++;
    s.tokens = draw_tokens(cfg, b.classes, y, trng);
    s.noisy = y;
    s.clean = std::move(y);
    b.train.push_back(std::move(s));
  }
  for (auto& y : test_labels) {
    Rng trng(derive_seed(cfg.seed, streams::kTokens, id));
    TokenBagSample s;
    s.sample_id = id++;
    s.tokens = draw_tokens(cfg, b.classes, y, trng);
    s.noisy = y;
    s.clean = std::move(y);
    b.test.push_back(std::move(s));
  }
  b.split = split_by_count(counts);
  return b;
}

CoOccurrenceMatrix build_cooccurrence(std::span<const TokenBagSample> samples, bool use_clean) {
  if (samples.empty()) throw std::invalid_argument("build_cooccurrence: empty sample set");
  CoOccurrenceMatrix m;
  m.num_classes = (use_clean ? samples.front().clean : samples.front().noisy).size();
  m.counts.assign(m.num_classes * m.num_classes, 0);
  std::vector<std::size_t> pos;
  for (const auto& s : samples) {
    const Label& y = use_clean ? s.clean : s.noisy;
    if (y.size() != m.num_classes) throw std::invalid_argument("build_cooccurrence: ragged labels");
    pos.clear();
    for (std::size_t k = 0; k < y.size(); ++k)
      if (y[k]) pos.push_back(k);
    for (std::size_t a : pos)
      for (std::size_t c : pos) ++m.counts[a * m.num_classes + c];
  }
  return m;
}

TransitionMatrix build_transition(const CoOccurrenceMatrix& cooc, double gamma) {
  std::vector<double> g(cooc.num_classes, gamma);
  TransitionMatrix t = build_transition(cooc, g);
  t.gamma = gamma;
  return t;
}

TransitionMatrix build_transition(const CoOccurrenceMatrix& cooc,
                                  std::span<const double> gamma_per_class) {
  const std::size_t c = cooc.num_classes;
  if (gamma_per_class.size() != c) {
    throw std::invalid_argument("build_transition: gamma vector length != num_classes");
  }
  TransitionMatrix t;
  t.num_classes = c;
  t.probs.assign(c * c, 0.0);
  double gamma_sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    const double g = gamma_per_class[i];
    if (!(g >= 0.0 && g <= 1.0)) throw std::invalid_argument("build_transition: gamma not in [0,1]");
    gamma_sum += g;
    std::uint64_t off = 0;
    for (std::size_t j = 0; j < c; ++j)
      if (j != i) off += cooc(i, j);
    if (off == 0 || g == 0.0) {
      t.probs[i * c + i] = 1.0;
      continue;
    }
    const double denom = static_cast<double>(off);
    double off_sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == i) continue;
      const double v = g * static_cast<double>(cooc(i, j)) / denom;
      t.probs[i * c + j] = v;
      off_sum += v;
    }
    // Diagonal takes the remainder so the row sums to one to rounding.
    t.probs[i * c + i] = std::max(0.0, 1.0 - off_sum);
  }
  t.gamma = c ? gamma_sum / static_cast<double>(c) : 0.0;
  return t;
}

void corrupt(std::span<TokenBagSample> samples, const TransitionMatrix& t, std::uint64_t seed) {
  for (auto& s : samples) {
    if (s.clean.size() != t.num_classes) {
      throw std::invalid_argument("corrupt: label width does not match transition matrix");
    }
    Rng rng(derive_seed(seed, streams::kCorrupt, s.sample_id));
    Label noisy(t.num_classes, 0);
    for (std::size_t i = 0; i < t.num_classes; ++i) {
      if (!s.clean[i]) continue;
      noisy[draw_categorical(rng, t.row(i))] = 1;
    }
    s.noisy = std::move(noisy);
  }
}

DatasetBundle generate_noisy(const GeneratorConfig& cfg, double gamma, std::uint64_t noise_seed) {
  DatasetBundle b = generate_clean(cfg);
  const auto cooc = build_cooccurrence(b.train, /*use_clean=*/true);
  const auto t = build_transition(cooc, gamma);
  corrupt(b.train, t, noise_seed);
  b.gamma = gamma;
  b.noise_seed = noise_seed;
  return b;
}

std::vector<std::size_t> positive_counts(std::span<const TokenBagSample> samples,
                                         std::size_t num_classes, bool use_clean) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& s : samples) {
    const Label& y = use_clean ? s.clean : s.noisy;
    for (std::size_t k = 0; k < num_classes && k < y.size(); ++k) counts[k] += y[k];
  }
  return counts;
}

LabelShiftReport label_shift(std::span<const TokenBagSample> samples, std::size_t num_classes) {
  LabelShiftReport r;
  r.clean_counts = positive_counts(samples, num_classes, true);
  r.noisy_counts = positive_counts(samples, num_classes, false);
  for (const auto& s : samples) {
    for (std::size_t k = 0; k < num_classes; ++k) {
      if (s.clean[k] && !s.noisy[k]) ++r.flipped_positives;
      if (!s.clean[k] && s.noisy[k]) ++r.spurious_positives;
    }
  }
  return r;
}

}  // namespace stitchlearn
