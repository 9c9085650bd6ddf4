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

#include "stitchlearn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stitchlearn {
namespace {

struct TermParams {
  double lambda = 1.0;
  double nu = 0.0;
  double weight = 1.0;  // rhat
  const FocalHyperParams* focal = nullptr;
};

// x^p with x in [0,1]; p == 0 gives exactly 1.
double powf_safe(double x, double p) { return p == 0.0 ? 1.0 : std::pow(x, p); }

// Contribution of one class before the -1/C factor: value and d/dz of
//   weight * [y * m_pos * log s(u) + (1-y) * m_neg * (1/lambda) log s(-lambda u)],
// u = z - nu.
void term(double z, double y, const TermParams& p, double& value, double& dz) {
  const double u = z - p.nu;
  const double lu = p.lambda * u;
  const double pos_log = log_sigmoid(u);
  const double neg_log = log_sigmoid(-lu) / p.lambda;
  const double s_neg_u = sigmoid(-u);  // d pos_log / dz
  const double s_lu = sigmoid(lu);     // -d neg_log / dz
  double pos_mod = 1.0, pos_dmod = 0.0, neg_mod = 1.0, neg_dmod = 0.0;
  if (p.focal) {
    const double g = p.focal->focusing;
    const double w = p.focal->weighting;
    // positive: 1 - p_t = s(-u); negative: 1 - p_t = s(lambda u)
    pos_mod = w * powf_safe(s_neg_u, g);
    neg_mod = w * powf_safe(s_lu, g);
    if (g != 0.0) {
      pos_dmod = -w * g * powf_safe(s_neg_u, g) * sigmoid(u);
      neg_dmod = w * g * p.lambda * powf_safe(s_lu, g) * sigmoid(-lu);
    }
  }
  const double pos = y * pos_mod * pos_log;
  const double neg = (1.0 - y) * neg_mod * neg_log;
  value = p.weight * (pos + neg);
  dz = p.weight * (y * (pos_dmod * pos_log + pos_mod * s_neg_u) +
                   (1.0 - y) * (neg_dmod * neg_log - neg_mod * s_lu));
}

void check_lengths(std::span<const double> z, std::span<const double> y) {
  if (z.size() != y.size() || z.empty()) {
    throw std::invalid_argument("loss: logits and targets must have equal non-zero length");
  }
}

LossOutput reduce(std::span<const double> z, std::span<const double> y,
                  const std::vector<TermParams>& params) {
  const double inv_c = 1.0 / static_cast<double>(z.size());
  LossOutput out;
  out.grad_logits.resize(z.size());
  double total = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    double v = 0.0, d = 0.0;
    term(z[k], y[k], params[k], v, d);
    total += v;
    out.grad_logits[k] = -inv_c * d;
  }
  out.value = -inv_c * total;
  return out;
}

}  // namespace

void set_class_statistics(DbHyperParams& hp, std::span<const std::size_t> counts,
                          std::size_t num_samples) {
  if (num_samples == 0) throw std::invalid_argument("set_class_statistics: no samples");
  hp.class_counts.resize(counts.size());
  hp.class_priors.resize(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double n = static_cast<double>(std::max<std::size_t>(1, counts[k]));
    hp.class_counts[k] = n;
    double p = n / static_cast<double>(num_samples);
    // A class present in every sample would give a degenerate prior.
    if (p >= 1.0) p = (static_cast<double>(num_samples) - 0.5) / static_cast<double>(num_samples);
    hp.class_priors[k] = p;
  }
}

Vec to_targets(const Label& y) { return Vec(y.begin(), y.end()); }

LossOutput bce(std::span<const double> z, std::span<const double> y) {
  check_lengths(z, y);
  return reduce(z, y, std::vector<TermParams>(z.size()));
}

LossOutput focal(std::span<const double> z, std::span<const double> y, const FocalHyperParams& hp) {
  check_lengths(z, y);
  if (hp.focusing < 0.0) throw std::invalid_argument("focal: focusing must be >= 0");
  TermParams p;
  p.focal = &hp;
  return reduce(z, y, std::vector<TermParams>(z.size(), p));
}

RebalanceWeights db_rebalance_weight(std::span<const double> y, std::span<const double> counts,
                                     double theta, double phi, double mu) {
  if (y.size() != counts.size()) {
    throw std::invalid_argument("db_rebalance_weight: label / count length mismatch");
  }
  double denom = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] > 0.0) {
      if (!(counts[k] > 0.0)) throw std::invalid_argument("db_rebalance_weight: N_k must be > 0");
      denom += 1.0 / counts[k];
    }
  }
  if (denom == 0.0) throw std::invalid_argument("undefined rebalancing denominator: no positives");
  RebalanceWeights w;
  w.r.resize(y.size());
  w.r_hat.resize(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    w.r[k] = (1.0 / counts[k]) / denom;
    w.r_hat[k] = theta + 1.0 / (1.0 + std::exp(-phi * (w.r[k] - mu)));
  }
  return w;
}

Vec db_class_bias(std::span<const double> priors, double kappa) {
  Vec nu(priors.size());
  for (std::size_t k = 0; k < priors.size(); ++k) {
    const double p = priors[k];
    if (!(p > 0.0 && p < 1.0)) {
      throw std::invalid_argument("degenerate prior for class " + std::to_string(k));
    }
    nu[k] = kappa * std::log(1.0 / p - 1.0);
  }
  return nu;
}

LossOutput db_loss(std::span<const double> z, std::span<const double> y, const DbHyperParams& hp,
                   const std::optional<FocalHyperParams>& focal_hp) {
  check_lengths(z, y);
  if (!(hp.lambda > 0.0)) throw std::invalid_argument("db_loss: lambda must be > 0");
  if (hp.class_counts.size() != z.size() || hp.class_priors.size() != z.size()) {
    throw std::invalid_argument("db_loss: class statistics do not match the number of logits");
  }
  const auto w = db_rebalance_weight(y, hp.class_counts, hp.theta, hp.phi, hp.mu);
  const Vec nu = db_class_bias(hp.class_priors, hp.kappa);
  std::vector<TermParams> params(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    params[k].lambda = hp.lambda;
    params[k].nu = nu[k];
    params[k].weight = w.r_hat[k];
    params[k].focal = focal_hp ? &*focal_hp : nullptr;
  }
  return reduce(z, y, params);
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kBce: return "bce";
    case LossKind::kFocal: return "focal";
    case LossKind::kDb: return "db";
    case LossKind::kDbFocal: return "db_focal";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "bce") return LossKind::kBce;
  if (s == "focal") return LossKind::kFocal;
  if (s == "db") return LossKind::kDb;
  if (s == "db_focal") return LossKind::kDbFocal;
  throw std::invalid_argument("unknown loss '" + s + "' (expected bce|focal|db|db_focal)");
}

LossOutput evaluate_loss(LossKind kind, std::span<const double> z, std::span<const double> y,
                         const LossSettings& s) {
  switch (kind) {
    case LossKind::kBce: return bce(z, y);
    case LossKind::kFocal: return focal(z, y, s.focal);
    case LossKind::kDb: return db_loss(z, y, s.db);
    case LossKind::kDbFocal: return db_loss(z, y, s.db, s.focal);
  }
  throw std::invalid_argument("evaluate_loss: bad loss kind");
}

OverallLossOutput overall_loss(const BranchBatch& f, const BranchBatch& g, LossKind kind_f,
                               LossKind kind_g, const LossSettings& settings, double weight_f,
                               double weight_g) {
  OverallLossOutput out;
  auto branch = [&](const BranchBatch& b, LossKind kind, double weight, double& mean,
                    std::vector<Vec>& grads) {
    if (weight == 0.0) return;
    if (b.logits.empty()) throw std::invalid_argument("overall_loss: empty batch");
    if (b.logits.size() != b.targets.size()) {
      throw std::invalid_argument("overall_loss: logits / targets batch size mismatch");
    }
    const double inv = 1.0 / static_cast<double>(b.logits.size());
    double sum = 0.0;
    grads.resize(b.logits.size());
    for (std::size_t i = 0; i < b.logits.size(); ++i) {
      LossOutput l = evaluate_loss(kind, b.logits[i], b.targets[i], settings);
      sum += l.value;
      for (double& v : l.grad_logits) v *= weight * inv;
      grads[i] = std::move(l.grad_logits);
    }
    mean = sum * inv;
    out.value += weight * mean;
  };
  branch(f, kind_f, weight_f, out.loss_f, out.grad_f);
  branch(g, kind_g, weight_g, out.loss_g, out.grad_g);
  return out;
}

}  // namespace stitchlearn
