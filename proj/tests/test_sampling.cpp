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

#include <string>

#include "oracles.hpp"
#include "stitchlearn/sampling.hpp"

using namespace stitchlearn;

namespace {

std::vector<TokenBagSample> labelled(const std::vector<std::vector<std::size_t>>& pos, std::size_t c) {
  std::vector<TokenBagSample> v(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    v[i].sample_id = i;
    v[i].noisy.assign(c, 0);
    v[i].clean.assign(c, 0);
    for (auto k : pos[i]) v[i].noisy[k] = 1;
  }
  return v;
}

}  // namespace

TEST(ClassIndex, UsesNoisyLabels) {
  auto v = labelled({{0}, {1}, {0, 2}}, 3);
  v[1].clean = {1, 0, 0};
  const ClassIndex idx(v, 3);
  EXPECT_EQ(std::vector<std::size_t>(idx.members(0).begin(), idx.members(0).end()),
            (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(idx.members(1).size(), 1u);
}

TEST(Uniform, EachIdNearQuarter) {
  const auto v = labelled({{0}, {1}, {0}, {1}}, 2);
  const ClassIndex idx(v, 2);
  BatchSampler s(SamplerKind::kUniform, 3);
  std::vector<std::size_t> hits(4, 0);
  const std::size_t n = 100000;
  const auto b = s.sample_batch(4, idx, n);
  EXPECT_TRUE(b.provenance_class.empty());
  for (auto id : b.sample_ids) ++hits[id];
  for (auto h : hits) EXPECT_TRUE(oracle::within_sigma(h, n, 0.25)) << h;
}

TEST(Uniform, ChiSquareOverInstances) {
  std::vector<std::vector<std::size_t>> pos(7, {0});
  const auto v = labelled(pos, 1);
  const ClassIndex idx(v, 1);
  BatchSampler s(SamplerKind::kUniform, 5);
  std::vector<std::size_t> hits(7, 0);
  for (int r = 0; r < 1000; ++r)
    for (auto id : s.sample_batch(7, idx, 200).sample_ids) ++hits[id];
  EXPECT_GT(oracle::chi2_pvalue(oracle::chi2_uniform(hits), 6), 1e-3);
}

TEST(Rebalanced, LoneSampleDrawnHalfTheTime) {
  std::vector<std::vector<std::size_t>> pos(100, {0});
  pos.push_back({1});
  const auto v = labelled(pos, 2);
  const ClassIndex idx(v, 2);
  BatchSampler s(SamplerKind::kClassRebalanced, 7);
  const std::size_t n = 100000;
  const auto b = s.sample_batch(v.size(), idx, n);
  std::size_t lone = 0;
  for (auto id : b.sample_ids) lone += id == 100;
  EXPECT_TRUE(oracle::within_sigma(lone, n, 0.5)) << lone;
}

TEST(Rebalanced, ChiSquareOverProvenanceClasses) {
  std::vector<std::vector<std::size_t>> pos;
  const std::size_t sizes[] = {400, 90, 30, 8, 2};
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t i = 0; i < sizes[k]; ++i) pos.push_back({k});
  pos.push_back({0, 3});
  const auto v = labelled(pos, 5);
  const ClassIndex idx(v, 5);
  BatchSampler s(SamplerKind::kClassRebalanced, 11);
  std::vector<std::size_t> hits(5, 0);
  for (int r = 0; r < 1000; ++r) {
    const auto b = s.sample_batch(v.size(), idx, 200);
    ASSERT_EQ(b.provenance_class.size(), b.sample_ids.size());
    for (std::size_t i = 0; i < b.sample_ids.size(); ++i) {
      ++hits[b.provenance_class[i]];
      EXPECT_TRUE(v[b.sample_ids[i]].noisy[b.provenance_class[i]]);
    }
  }
  EXPECT_GT(oracle::chi2_pvalue(oracle::chi2_uniform(hits), 4), 1e-3);
}

TEST(Rebalanced, WithinClassUniform) {
  std::vector<std::vector<std::size_t>> pos(6, {0});
  const auto v = labelled(pos, 1);
  const ClassIndex idx(v, 1);
  BatchSampler s(SamplerKind::kClassRebalanced, 2);
  std::vector<std::size_t> hits(6, 0);
  for (auto id : s.sample_batch(6, idx, 120000).sample_ids) ++hits[id];
  EXPECT_GT(oracle::chi2_pvalue(oracle::chi2_uniform(hits), 5), 1e-3);
}

TEST(Rebalanced, EmptyClassNamed) {
  const auto v = labelled({{0}, {0}, {2}}, 3);
  const ClassIndex idx(v, 3);
  BatchSampler s(SamplerKind::kClassRebalanced, 1);
  try {
    s.sample_batch(3, idx, 64);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
  }
}

TEST(Sampler, SameSeedSameBatches) {
  const auto v = labelled({{0}, {1}, {0, 1}}, 2);
  const ClassIndex idx(v, 2);
  for (auto kind : {SamplerKind::kUniform, SamplerKind::kClassRebalanced}) {
    BatchSampler a(kind, 9), b(kind, 9);
    for (int r = 0; r < 5; ++r) EXPECT_EQ(a.sample_batch(3, idx, 16).sample_ids, b.sample_batch(3, idx, 16).sample_ids);
  }
}

TEST(Sampler, KindNames) {
  for (auto k : {SamplerKind::kUniform, SamplerKind::kClassRebalanced})
    EXPECT_EQ(sampler_kind_from_string(to_string(k)), k);
}
