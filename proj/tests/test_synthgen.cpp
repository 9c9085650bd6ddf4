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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "stitchlearn/synthgen.hpp"

using namespace stitchlearn;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.num_classes = 8;
  c.dim = 6;
  c.max_count = 60;
  c.min_count = 3;
  c.groups = 2;
  c.test_per_class = 5;
  c.seed = 17;
  return c;
}

TokenBagSample label_only(std::size_t id, std::size_t c, std::initializer_list<std::size_t> pos) {
  TokenBagSample s;
  s.sample_id = id;
  s.clean.assign(c, 0);
  for (auto p : pos) s.clean[p] = 1;
  s.noisy = s.clean;
  return s;
}

CoOccurrenceMatrix cooc_from(std::size_t c, const std::vector<std::uint64_t>& v) {
  CoOccurrenceMatrix m;
  m.num_classes = c;
  m.counts = v;
  return m;
}

}  // namespace

TEST(ClassCounts, ReferenceRange) {
  GeneratorConfig c;  // 20 classes, 775 down to 4
  const auto n = class_count_formula(c);
  EXPECT_EQ(*std::max_element(n.begin(), n.end()), 775u);
  EXPECT_EQ(*std::min_element(n.begin(), n.end()), 4u);
}

TEST(ClassCounts, ZeroExponentIsBalanced) {
  GeneratorConfig c = small_config();
  c.pareto_exponent = 0.0;
  for (auto v : class_count_formula(c)) EXPECT_EQ(v, c.max_count);
}

TEST(ClassCounts, GeneratedCountsMatchIndependentFormula) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    GeneratorConfig c = small_config();
    c.seed = seed;
    c.pareto_exponent = 1.3;
    const auto d = generate_clean(c);
    const auto got = positive_counts(d.train, c.num_classes, true);
    for (std::size_t k = 0; k < c.num_classes; ++k) {
      const double raw = static_cast<double>(c.max_count) * std::pow(static_cast<double>(k + 1), -c.pareto_exponent);
      const std::size_t want = std::max<std::size_t>(c.min_count, static_cast<std::size_t>(std::llround(raw)));
      EXPECT_EQ(got[k], want) << "class " << k;
    }
  }
}

TEST(Generator, SamplesAreWellFormed) {
  const GeneratorConfig c = small_config();
  const auto d = generate_clean(c);
  std::set<std::size_t> ids;
  for (const auto& s : d.train) {
    ids.insert(s.sample_id);
    std::size_t pos = 0;
    for (auto v : s.clean) pos += v;
    EXPECT_GE(pos, 1u);
    EXPECT_EQ(s.tokens.size(), pos + c.background_tokens);
    for (const auto& t : s.tokens) EXPECT_EQ(t.size(), c.dim);
    EXPECT_EQ(s.noisy, s.clean);
  }
  EXPECT_EQ(ids.size(), d.train.size());
  for (const auto& cs : d.classes) {
    double n = 0;
    for (double v : cs.prototype) n += v * v;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(Generator, PureFunctionOfConfig) {
  const auto a = generate_clean(small_config());
  const auto b = generate_clean(small_config());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].tokens, b.train[i].tokens);
    EXPECT_EQ(a.train[i].clean, b.train[i].clean);
  }
}

TEST(Generator, SameGroupCooccurrenceOnly) {
  const GeneratorConfig c = small_config();
  const auto d = generate_clean(c);
  const auto m = build_cooccurrence(d.train, true);
  for (std::size_t i = 0; i < c.num_classes; ++i)
    for (std::size_t j = 0; j < c.num_classes; ++j)
      if (i % c.groups != j % c.groups) EXPECT_EQ(m(i, j), 0u);
}

TEST(Generator, InfeasibleCountsRejected) {
  GeneratorConfig c = small_config();
  c.max_train_samples = c.num_classes * c.min_count - 1;
  EXPECT_THROW(generate_clean(c), std::invalid_argument);
  c.num_classes = 2;
  c.max_train_samples = 0;
  EXPECT_THROW(generate_clean(c), std::invalid_argument);
}

TEST(Generator, TestLabelsStayClean) {
  const auto d = generate_noisy(small_config(), 0.8, 5);
  for (const auto& s : d.test) EXPECT_EQ(s.noisy, s.clean);
}

TEST(Split, PartitionsClassesByCount) {
  const std::vector<std::size_t> counts = {775, 101, 100, 20, 19, 4};
  const auto s = split_by_count(counts);
  EXPECT_EQ(s.head, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.medium, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(s.tail, (std::vector<std::size_t>{4, 5}));
}

TEST(Cooccurrence, SingleSample) {
  std::vector<TokenBagSample> v = {label_only(0, 4, {1, 2})};
  const auto m = build_cooccurrence(v, true);
  EXPECT_EQ(m(1, 2), 1u);
  EXPECT_EQ(m(2, 1), 1u);
  EXPECT_EQ(m(1, 1), 1u);
  EXPECT_EQ(m(2, 2), 1u);
  EXPECT_EQ(m(0, 1), 0u);
}

TEST(Cooccurrence, DisjointSingleLabels) {
  std::vector<TokenBagSample> v;
  for (std::size_t i = 0; i < 4; ++i) v.push_back(label_only(i, 4, {i}));
  const auto m = build_cooccurrence(v, true);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(m(i, j), i == j ? 1u : 0u);
}

TEST(Cooccurrence, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.3);
  const std::size_t c = 6;
  std::vector<TokenBagSample> v(50);
  for (std::size_t n = 0; n < v.size(); ++n) {
    v[n].sample_id = n;
    v[n].clean.resize(c);
    v[n].noisy.resize(c);
    for (std::size_t k = 0; k < c; ++k) {
      v[n].clean[k] = coin(rng);
      v[n].noisy[k] = coin(rng);
    }
  }
  for (bool use_clean : {true, false}) {
    const auto m = build_cooccurrence(v, use_clean);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        std::uint64_t want = 0;
        for (const auto& s : v) {
          const auto& y = use_clean ? s.clean : s.noisy;
          if (y[i] && y[j]) ++want;
        }
        EXPECT_EQ(m(i, j), want);
      }
  }
}

TEST(Transition, WorkedRow) {
  std::vector<std::uint64_t> n(25, 0);
  n[0 * 5 + 1] = 3;
  n[0 * 5 + 2] = 1;
  n[1 * 5 + 0] = 3;
  n[2 * 5 + 0] = 1;
  const auto t = build_transition(cooc_from(5, n), 0.5);
  EXPECT_DOUBLE_EQ(t(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(t(0, 1), 0.375);
  EXPECT_DOUBLE_EQ(t(0, 2), 0.125);
  EXPECT_DOUBLE_EQ(t(0, 3), 0.0);
  EXPECT_DOUBLE_EQ(t(0, 4), 0.0);
  // no co-occurring class: never flips
  EXPECT_DOUBLE_EQ(t(3, 3), 1.0);
}

TEST(Transition, ZeroGammaIsIdentity) {
  std::mt19937_64 rng(4);
  std::vector<std::uint64_t> n(36);
  for (auto& v : n) v = rng() % 7;
  const auto t = build_transition(cooc_from(6, n), 0.0);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(t(i, j), i == j ? 1.0 : 0.0);
}

TEST(Transition, MatchesNormalizationOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 7;
    std::vector<std::uint64_t> n(c * c);
    for (auto& v : n) v = rng() % 5;
    for (double g : {0.0, 0.3, 0.7, 1.0}) {
      const auto t = build_transition(cooc_from(c, n), g);
      for (std::size_t i = 0; i < c; ++i) {
        double off = 0;
        for (std::size_t k = 0; k < c; ++k)
          if (k != i) off += static_cast<double>(n[i * c + k]);
        double row = 0;
        for (std::size_t j = 0; j < c; ++j) {
          double want;
          if (off == 0) want = i == j ? 1.0 : 0.0;
          else if (i == j) want = 1.0 - g;
          else want = g * static_cast<double>(n[i * c + j]) / off;
          EXPECT_NEAR(t(i, j), want, 1e-15);
          row += t(i, j);
        }
        EXPECT_NEAR(row, 1.0, 1e-12);
      }
    }
  }
}

TEST(Transition, PerClassGamma) {
  std::vector<std::uint64_t> n = {0, 2, 2, 0, 0, 1, 2, 1, 0};
  const std::vector<double> g = {0.2, 0.4, 0.6};
  const auto t = build_transition(cooc_from(3, n), g);
  EXPECT_DOUBLE_EQ(t(0, 0), 0.8);
  EXPECT_DOUBLE_EQ(t(1, 1), 0.6);
  EXPECT_DOUBLE_EQ(t(2, 2), 0.4);
  EXPECT_NEAR(t.gamma, 0.4, 1e-15);
  EXPECT_THROW(build_transition(cooc_from(3, n), std::vector<double>{0.1}), std::invalid_argument);
}

TEST(Corrupt, ZeroGammaKeepsLabels) {
  auto d = generate_clean(small_config());
  const auto t = build_transition(build_cooccurrence(d.train, true), 0.0);
  corrupt(d.train, t, 9);
  for (const auto& s : d.train) EXPECT_EQ(s.noisy, s.clean);
}

TEST(Corrupt, ForcedFlipAtGammaOne) {
  std::vector<std::uint64_t> n(9, 0);
  n[0 * 3 + 2] = 4;
  n[2 * 3 + 0] = 4;
  const auto t = build_transition(cooc_from(3, n), 1.0);
  std::vector<TokenBagSample> v;
  for (std::size_t i = 0; i < 50; ++i) v.push_back(label_only(i, 3, {0}));
  corrupt(v, t, 1);
  for (const auto& s : v) EXPECT_EQ(s.noisy, (Label{0, 0, 1}));
}

TEST(Corrupt, FlipOntoExistingPositiveIsIdempotent) {
  std::vector<std::uint64_t> n(9, 0);
  n[0 * 3 + 1] = 1;
  n[1 * 3 + 0] = 1;
  // class 0 always flips to 1; class 1 stays (gamma per class)
  const auto t = build_transition(cooc_from(3, n), std::vector<double>{1.0, 0.0, 0.0});
  std::vector<TokenBagSample> v = {label_only(0, 3, {0, 1})};
  corrupt(v, t, 2);
  EXPECT_EQ(v[0].noisy, (Label{0, 1, 0}));
}

TEST(Corrupt, MonteCarloFlipRatesWithinThreeSigma) {
  std::vector<std::uint64_t> n(16, 0);
  n[0 * 4 + 1] = 5;
  n[0 * 4 + 2] = 2;
  n[0 * 4 + 3] = 1;
  const auto t = build_transition(cooc_from(4, n), 0.5);
  const std::size_t trials = 100000;
  std::vector<TokenBagSample> v;
  v.reserve(trials);
  for (std::size_t i = 0; i < trials; ++i) v.push_back(label_only(i, 4, {0}));
  corrupt(v, t, 77);
  for (std::size_t j = 0; j < 4; ++j) {
    std::size_t hits = 0;
    for (const auto& s : v) hits += s.noisy[j];
    EXPECT_TRUE(oracle::within_sigma(hits, trials, t(0, j))) << "target " << j << " hits " << hits;
  }
}

TEST(Corrupt, PerClassNoiseRateNearGamma) {
  GeneratorConfig c = small_config();
  c.max_count = 3000;
  c.pareto_exponent = 0.5;
  const double gamma = 0.4;
  const auto d = generate_noisy(c, gamma, 3);
  const auto m = build_cooccurrence(d.train, true);
  for (std::size_t k = 0; k < c.num_classes; ++k) {
    std::uint64_t off = 0;
    for (std::size_t j = 0; j < c.num_classes; ++j)
      if (j != k) off += m(k, j);
    if (off == 0) continue;
    std::size_t pos = 0, lost = 0;
    for (const auto& s : d.train) {
      if (!s.clean[k]) continue;
      ++pos;
      // a positive counts as flipped when its own draw left; another class
      // flipping onto k can restore it, so this is only a lower bound check
      if (!s.noisy[k]) ++lost;
    }
    EXPECT_LE(static_cast<double>(lost), gamma * pos + 3 * std::sqrt(pos * gamma * (1 - gamma)));
    EXPECT_GE(static_cast<double>(lost), 0.5 * gamma * pos);
  }
}

TEST(Corrupt, IgnoresTokens) {
  auto a = generate_clean(small_config());
  auto b = a;
  std::mt19937_64 rng(1);
  for (auto& s : b.train) {
    std::shuffle(s.tokens.begin(), s.tokens.end(), rng);
    for (auto& tk : s.tokens)
      for (double& x : tk) x = -x;
  }
  const auto t = build_transition(build_cooccurrence(a.train, true), 0.6);
  corrupt(a.train, t, 42);
  corrupt(b.train, t, 42);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].noisy, b.train[i].noisy);
}

TEST(Corrupt, OrderOfSamplesDoesNotMatter) {
  auto a = generate_clean(small_config());
  auto b = a;
  std::reverse(b.train.begin(), b.train.end());
  const auto t = build_transition(build_cooccurrence(a.train, true), 0.5);
  corrupt(a.train, t, 8);
  corrupt(b.train, t, 8);
  std::reverse(b.train.begin(), b.train.end());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].noisy, b.train[i].noisy);
}

TEST(LabelShift, CountsBeforeAndAfter) {
  std::vector<TokenBagSample> v = {label_only(0, 3, {0}), label_only(1, 3, {0, 1})};
  v[0].noisy = {0, 0, 1};
  v[1].noisy = {0, 1, 0};
  const auto r = label_shift(v, 3);
  EXPECT_EQ(r.clean_counts, (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_EQ(r.noisy_counts, (std::vector<std::size_t>{0, 1, 1}));
  EXPECT_EQ(r.flipped_positives, 2u);
  EXPECT_EQ(r.spurious_positives, 1u);
}
