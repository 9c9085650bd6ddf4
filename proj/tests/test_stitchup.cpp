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

#include <random>

#include "oracles.hpp"
#include "stitchlearn/stitchup.hpp"

using namespace stitchlearn;

namespace {

std::vector<TokenBagSample> labelled(const std::vector<std::vector<std::size_t>>& pos, std::size_t c) {
  std::vector<TokenBagSample> v(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    v[i].sample_id = i;
    v[i].noisy.assign(c, 0);
    for (auto k : pos[i]) v[i].noisy[k] = 1;
    v[i].clean = v[i].noisy;
    v[i].tokens = {Token(3, static_cast<double>(i))};
  }
  return v;
}

struct Net {
  MlpParams backbone;
  BranchHead head;
};

Net make_net(std::size_t d, std::size_t k_width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Net n;
  n.backbone = make_mlp(std::vector<std::size_t>{d, 8, 6}, Activation::kRelu, Activation::kRelu, rng);
  n.head.lower = make_mlp(std::vector<std::size_t>{6, 5}, Activation::kRelu, Activation::kRelu, rng);
  n.head.upper = make_mlp(std::vector<std::size_t>{5 * k_width, 4}, Activation::kIdentity, Activation::kIdentity, rng);
  // small positive biases keep relus active for generic inputs
  for (auto* m : {&n.backbone, &n.head.lower})
    for (auto& l : m->layers)
      for (double& b : l.bias) b = 0.1;
  return n;
}

std::vector<Token> bag(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<Token> b(n, Token(d));
  for (auto& t : b)
    for (double& x : t) x = nd(rng);
  return b;
}

Vec intermediate_of(const std::vector<Token>& tokens, const Net& n) {
  return oracle::mlp_eval(n.head.lower, oracle::mlp_eval(n.backbone, oracle::mean_tokens(tokens)));
}

}  // namespace

TEST(Select, ForcedSelfSelection) {
  const auto v = labelled({{0}, {0}, {1}}, 2);
  const ClassIndex idx(v, 2);
  Rng rng(1);
  for (std::size_t k : {2u, 3u, 5u}) {
    const auto c = select_candidates(2, v[2].noisy, idx, k, rng);
    EXPECT_EQ(c.shared_class, 1u);
    EXPECT_EQ(c.members, std::vector<std::size_t>(k, 2));
  }
}

TEST(Select, SinglePositiveFixesClass) {
  const auto v = labelled({{3}, {3, 1}, {1}, {0}}, 4);
  const ClassIndex idx(v, 4);
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto c = select_candidates(0, v[0].noisy, idx, 2, rng);
    EXPECT_EQ(c.shared_class, 3u);
    EXPECT_EQ(c.members[0], 0u);
    EXPECT_TRUE(v[c.members[1]].noisy[3]);
  }
}

TEST(Select, PartnerUniformOverClassMembers) {
  const auto v = labelled({{0}, {0}, {1}}, 2);
  const ClassIndex idx(v, 2);
  Rng rng(3);
  const std::size_t n = 100000;
  std::size_t first = 0;
  for (std::size_t t = 0; t < n; ++t) first += select_candidates(0, v[0].noisy, idx, 2, rng).members[1] == 0;
  EXPECT_TRUE(oracle::within_sigma(first, n, 0.5)) << first;
}

TEST(Select, SharedClassUniformOverAnchorPositives) {
  const auto v = labelled({{0, 1, 2}, {0}, {1}, {2}}, 3);
  const ClassIndex idx(v, 3);
  Rng rng(4);
  std::vector<std::size_t> hits(3, 0);
  for (int t = 0; t < 60000; ++t) ++hits[select_candidates(0, v[0].noisy, idx, 2, rng).shared_class];
  EXPECT_GT(oracle::chi2_pvalue(oracle::chi2_uniform(hits), 2), 1e-3);
}

TEST(Select, AnchorWithoutPositivesRejected) {
  const auto v = labelled({{0}, {}}, 2);
  const ClassIndex idx(v, 2);
  Rng rng(5);
  EXPECT_THROW(select_candidates(1, v[1].noisy, idx, 2, rng), std::invalid_argument);
}

TEST(LabelUnion, Examples) {
  const std::vector<Label> a = {{1, 0, 0}, {0, 1, 0}};
  EXPECT_EQ(label_union(a), (Label{1, 1, 0}));
  const std::vector<Label> b = {{1, 0, 1}, {1, 0, 1}};
  EXPECT_EQ(label_union(b), (Label{1, 0, 1}));
  const std::vector<Label> c = {{0, 0, 1}, {0, 1, 0}, {1, 0, 0}};
  const std::vector<Label> d = {{1, 0, 0}, {0, 0, 1}, {0, 1, 0}};
  EXPECT_EQ(label_union(c), label_union(d));
}

TEST(LabelUnion, DominatesMembers) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    std::vector<Label> ls(3, Label(6));
    for (auto& l : ls)
      for (auto& x : l) x = rng() % 2;
    const auto u = label_union(ls);
    for (const auto& l : ls)
      for (std::size_t k = 0; k < 6; ++k) EXPECT_GE(u[k], l[k]);
  }
}

TEST(MaybeStitch, ProbabilityExtremes) {
  const auto v = labelled({{0}, {0, 1}, {1}}, 2);
  const ClassIndex idx(v, 2);
  Rng rng(7);
  StitchConfig off{StitchMode::kFeatureAverage, 2, 0.0};
  StitchConfig on{StitchMode::kFeatureAverage, 2, 1.0};
  for (int t = 0; t < 200; ++t) {
    const auto a = maybe_stitch(1, v, idx, off, rng);
    EXPECT_FALSE(a.stitched);
    EXPECT_EQ(a.members, std::vector<std::size_t>{1});
    EXPECT_EQ(a.label, v[1].noisy);
    const auto b = maybe_stitch(0, v, idx, on, rng);
    EXPECT_TRUE(b.stitched);
    EXPECT_EQ(b.members.size(), 2u);
    std::vector<Label> ml;
    for (auto m : b.members) ml.push_back(v[m].noisy);
    EXPECT_EQ(b.label, label_union(ml));
  }
}

TEST(MaybeStitch, HalfProbabilityWithinThreeSigma) {
  const auto v = labelled({{0}, {0}}, 1);
  const ClassIndex idx(v, 1);
  Rng rng(8);
  StitchConfig half{StitchMode::kFeatureAverage, 2, 0.5};
  const std::size_t n = 100000;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < n; ++t) hits += maybe_stitch(0, v, idx, half, rng).stitched;
  EXPECT_TRUE(oracle::within_sigma(hits, n, 0.5)) << hits;
}

TEST(StitchConfig, Validation) {
  EXPECT_THROW((StitchConfig{StitchMode::kFeatureAverage, 1, 1.0}).validate(), ConfigError);
  EXPECT_THROW((StitchConfig{StitchMode::kFeatureAverage, 2, 1.5}).validate(), ConfigError);
  EXPECT_THROW((StitchConfig{StitchMode::kFeatureConcat, 2, 0.5}).validate(), ConfigError);
  EXPECT_NO_THROW((StitchConfig{StitchMode::kFeatureConcat, 3, 1.0}).validate());
  EXPECT_FALSE((StitchConfig{StitchMode::kOff, 2, 1.0}).active());
  EXPECT_FALSE((StitchConfig{StitchMode::kFeatureAverage, 2, 0.0}).active());
}

TEST(StitchForward, IdenticalMembersAverageToSingle) {
  const Net n = make_net(4, 1, 9);
  std::mt19937_64 rng(9);
  const auto b = bag(3, 4, rng);
  const TokenBagRef m[] = {&b, &b};
  const auto fwd = stitch_forward(m, StitchMode::kFeatureAverage, n.backbone, n.head);
  const auto single = single_logits(b, n.backbone, n.head);
  for (std::size_t k = 0; k < single.size(); ++k) EXPECT_NEAR(fwd.logits[k], single[k], 1e-14);
}

TEST(StitchForward, AverageOfIndependentFeatures) {
  const Net n = make_net(4, 1, 10);
  std::mt19937_64 rng(10);
  for (int t = 0; t < 10; ++t) {
    const auto a = bag(2, 4, rng), b = bag(4, 4, rng);
    const TokenBagRef m[] = {&a, &b};
    const auto fwd = stitch_forward(m, StitchMode::kFeatureAverage, n.backbone, n.head);
    const Vec fa = intermediate_of(a, n), fb = intermediate_of(b, n);
    Vec avg(fa.size());
    for (std::size_t i = 0; i < fa.size(); ++i) {
      avg[i] = (fa[i] + fb[i]) / 2;
      EXPECT_NEAR(fwd.combined[i], avg[i], 1e-14);
    }
    const auto want = oracle::mlp_eval(n.head.upper, avg);
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(fwd.logits[k], want[k], 1e-13);
  }
}

TEST(StitchForward, InputConcatMergesBags) {
  const Net n = make_net(4, 1, 11);
  std::mt19937_64 rng(11);
  const auto a = bag(2, 4, rng), b = bag(3, 4, rng);
  const TokenBagRef m[] = {&a, &b};
  const auto fwd = stitch_forward(m, StitchMode::kInputConcat, n.backbone, n.head);
  ASSERT_EQ(fwd.backbone_caches.size(), 1u);
  EXPECT_EQ(fwd.backbone_caches[0].token_count, 5u);
  std::vector<Token> merged = a;
  merged.insert(merged.end(), b.begin(), b.end());
  const auto want = single_logits(merged, n.backbone, n.head);
  for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(fwd.logits[k], want[k], 1e-14);
}

TEST(StitchForward, FeatureConcatOrderAndWidth) {
  const Net n = make_net(4, 2, 12);
  std::mt19937_64 rng(12);
  const auto a = bag(2, 4, rng), b = bag(3, 4, rng);
  const TokenBagRef m[] = {&a, &b};
  const auto fwd = stitch_forward(m, StitchMode::kFeatureConcat, n.backbone, n.head);
  Vec cat = intermediate_of(a, n);
  const Vec fb = intermediate_of(b, n);
  cat.insert(cat.end(), fb.begin(), fb.end());
  const auto want = oracle::mlp_eval(n.head.upper, cat);
  for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(fwd.logits[k], want[k], 1e-13);
  const TokenBagRef three[] = {&a, &b, &a};
  EXPECT_THROW(stitch_forward(three, StitchMode::kFeatureConcat, n.backbone, n.head), ConfigError);
  const Net narrow = make_net(4, 1, 12);
  EXPECT_THROW(stitch_forward(m, StitchMode::kFeatureConcat, narrow.backbone, narrow.head), ConfigError);
}

TEST(StitchBackward, AverageSplitsGradientInHalf) {
  const Net n = make_net(4, 1, 13);
  std::mt19937_64 rng(13);
  const auto a = bag(2, 4, rng), b = bag(3, 4, rng);
  const TokenBagRef m[] = {&a, &b};
  const auto fwd = stitch_forward(m, StitchMode::kFeatureAverage, n.backbone, n.head);
  const Vec up = {0.4, -0.3, 0.9, -1.1};
  MlpParams bg = zeros_like(n.backbone);
  BranchHead hg{zeros_like(n.head.lower), zeros_like(n.head.upper)};
  const auto g = stitch_backward(fwd, m, n.backbone, n.head, up, bg, hg, true);
  // virtual sample that receives the averaged feature directly
  MlpCache c;
  mlp_forward(n.head.upper, fwd.combined, &c);
  MlpParams ug = zeros_like(n.head.upper);
  const Vec dfbar = mlp_backward(n.head.upper, c, up, ug);
  ASSERT_EQ(g.intermediate_grads.size(), 2u);
  for (std::size_t i = 0; i < dfbar.size(); ++i) {
    EXPECT_NEAR(g.intermediate_grads[0][i], dfbar[i] / 2, 1e-15);
    EXPECT_NEAR(g.intermediate_grads[1][i], dfbar[i] / 2, 1e-15);
  }
  ASSERT_EQ(g.token_grads.size(), 2u);
  for (const auto& member : g.token_grads) {
    double norm = 0;
    for (const auto& t : member)
      for (double x : t) norm += std::fabs(x);
    EXPECT_GT(norm, 0.0);
  }
}

namespace {

// Scalar loss w . logits over a stitched pair; checks every parameter and
// token gradient by central differences.
void fd_check(StitchMode mode, std::size_t width, std::uint64_t seed) {
  Net n = make_net(4, width, seed);
  std::mt19937_64 rng(seed);
  auto a = bag(2, 4, rng), b = bag(3, 4, rng);
  const TokenBagRef m[] = {&a, &b};
  const Vec w = {0.4, -0.3, 0.9, -1.1};
  auto loss = [&] {
    const auto f = stitch_forward(m, mode, n.backbone, n.head);
    double s = 0;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * f.logits[k];
    return s;
  };
  const auto fwd = stitch_forward(m, mode, n.backbone, n.head);
  MlpParams bg = zeros_like(n.backbone);
  BranchHead hg{zeros_like(n.head.lower), zeros_like(n.head.upper)};
  const auto g = stitch_backward(fwd, m, n.backbone, n.head, w, bg, hg, true);
  auto check = [&](MlpParams& p, const MlpParams& gp) {
    const auto ps = oracle::scalars(p);
    const auto gs = oracle::scalars(gp);
    for (std::size_t i = 0; i < ps.size(); ++i)
      EXPECT_LT(oracle::rel_err(*gs[i], oracle::central_diff(loss, ps[i])), 1e-4);
  };
  check(n.backbone, bg);
  check(n.head.lower, hg.lower);
  check(n.head.upper, hg.upper);
  std::vector<Token>* bags[] = {&a, &b};
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t t = 0; t < bags[j]->size(); ++t)
      for (std::size_t c = 0; c < 4; ++c)
        EXPECT_LT(oracle::rel_err(g.token_grads[j][t][c], oracle::central_diff(loss, &(*bags[j])[t][c])), 1e-4);
}

}  // namespace

TEST(StitchBackward, FiniteDifferencesAverage) { fd_check(StitchMode::kFeatureAverage, 1, 14); }
TEST(StitchBackward, FiniteDifferencesInputConcat) { fd_check(StitchMode::kInputConcat, 1, 15); }
TEST(StitchBackward, FiniteDifferencesFeatureConcat) { fd_check(StitchMode::kFeatureConcat, 2, 16); }

TEST(SingleLogits, TilesForConcatHead) {
  const Net n = make_net(4, 2, 17);
  std::mt19937_64 rng(17);
  const auto a = bag(2, 4, rng);
  Vec f = intermediate_of(a, n);
  Vec tiled = f;
  tiled.insert(tiled.end(), f.begin(), f.end());
  const auto want = oracle::mlp_eval(n.head.upper, tiled);
  const auto got = single_logits(a, n.backbone, n.head);
  for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-13);
}

TEST(StitchMode, Names) {
  for (auto m : {StitchMode::kOff, StitchMode::kInputConcat, StitchMode::kFeatureConcat, StitchMode::kFeatureAverage})
    EXPECT_EQ(stitch_mode_from_string(to_string(m)), m);
}
