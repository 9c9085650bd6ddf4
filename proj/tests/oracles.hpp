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

// Independent reference implementations for the tests. These are written from
// the definitions, deliberately naive, and share no code with the library.

#ifndef STITCHLEARN_TESTS_ORACLES_HPP_
#define STITCHLEARN_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "stitchlearn/numcore.hpp"

namespace oracle {

// AP by pairwise ranks: item j is ranked above i when s_j > s_i, or when the
// scores tie and j < i. Precision at each positive = positives at or above it
// / its rank.
inline double ap_pairwise(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double sum = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    int rank = 1, pos_above = 1;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j == i) continue;
      const bool above = s[j] > s[i] || (s[j] == s[i] && j < i);
      if (above) {
        ++rank;
        if (y[j]) ++pos_above;
      }
    }
    sum += static_cast<double>(pos_above) / rank;
    ++hits;
  }
  return sum / hits;
}

// Same value by enumerating all orderings and keeping the one that respects
// score order with the tie rule (exhaustive, small n only).
inline double ap_enumerate(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  std::vector<std::size_t> perm(s.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  do {
    bool ok = true;
    for (std::size_t r = 0; r + 1 < perm.size() && ok; ++r) {
      const std::size_t a = perm[r], b = perm[r + 1];
      ok = s[a] > s[b] || (s[a] == s[b] && a < b);
    }
    if (!ok) continue;
    double sum = 0.0;
    int hits = 0;
    for (std::size_t r = 0; r < perm.size(); ++r) {
      if (!y[perm[r]]) continue;
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    return sum / hits;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return -1.0;
}

// Pseudo-label rule written straight from its definition.
inline int eq3(double q, int noisy, double alpha, double beta) {
  if (q > alpha) return 1;
  if (q < beta) return 0;
  return noisy;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight-line evaluation of a layer stack.
inline std::vector<double> mlp_eval(const stitchlearn::MlpParams& p, std::vector<double> x) {
  for (const auto& layer : p.layers) {
    std::vector<double> y(layer.out_dim());
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < layer.in_dim(); ++i) acc += layer.weight(o, i) * x[i];
      if (layer.activation == stitchlearn::Activation::kRelu && acc < 0) acc = 0;
      y[o] = acc;
    }
    x = y;
  }
  return x;
}

inline std::vector<double> mean_tokens(const std::vector<std::vector<double>>& t) {
  std::vector<double> m(t.front().size(), 0.0);
  for (const auto& v : t)
    for (std::size_t i = 0; i < v.size(); ++i) m[i] += v[i];
  for (double& v : m) v /= static_cast<double>(t.size());
  return m;
}

// Central difference of f with respect to *x.
inline double central_diff(const std::function<double()>& f, double* x, double h = 1e-5) {
  const double keep = *x;
  *x = keep + h;
  const double up = f();
  *x = keep - h;
  const double down = f();
  *x = keep;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
}

// Every scalar of a layer stack, in a fixed order.
inline std::vector<double*> scalars(stitchlearn::MlpParams& p) {
  std::vector<double*> out;
  for (auto& l : p.layers) {
    for (double& w : l.weight.data()) out.push_back(&w);
    for (double& b : l.bias) out.push_back(&b);
  }
  return out;
}
inline std::vector<const double*> scalars(const stitchlearn::MlpParams& p) {
  std::vector<const double*> out;
  for (const auto& l : p.layers) {
    for (const double& w : l.weight.data()) out.push_back(&w);
    for (const double& b : l.bias) out.push_back(&b);
  }
  return out;
}

// Upper-tail p-value of a chi-square statistic.
inline double chi2_pvalue(double stat, double dof) {
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

inline double chi2_uniform(const std::vector<std::size_t>& counts) {
  double n = 0;
  for (auto c : counts) n += static_cast<double>(c);
  const double e = n / static_cast<double>(counts.size());
  double s = 0;
  for (auto c : counts) s += (static_cast<double>(c) - e) * (static_cast<double>(c) - e) / e;
  return s;
}

// |observed - p n| within k binomial sigmas.
inline bool within_sigma(std::size_t hits, std::size_t n, double p, double k = 3.0) {
  const double sd = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
  return std::fabs(static_cast<double>(hits) - p * static_cast<double>(n)) <= k * sd + 1e-9;
}

}  // namespace oracle

#endif  // STITCHLEARN_TESTS_ORACLES_HPP_
