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

#include "stitchlearn/evalx.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace stitchlearn {

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("average_precision: scores / labels length mismatch");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!labels[order[r]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) throw std::invalid_argument("average_precision: no positive labels");
  return sum / static_cast<double>(hits);
}

namespace {
std::optional<double> subset_mean(const std::vector<std::optional<double>>& ap,
                                   std::span<const std::size_t> classes) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k : classes) {
    if (k < ap.size() && ap[k]) {
      s += *ap[k];
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}
}  // namespace

ApResult map_from_scores(std::span<const Vec> scores, std::span<const TokenBagSample> test,
                         const SubsetSplit& split) {
  if (test.empty()) throw std::invalid_argument("map_report: empty test set");
  if (scores.size() != test.size()) throw std::invalid_argument("map_report: score rows != test size");
  const std::size_t c = test.front().clean.size();
  ApResult r;
  r.per_class_ap.resize(c);
  Vec col(test.size());
  std::vector<std::uint8_t> lab(test.size());
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < c; ++k) {
    bool any = false;
    for (std::size_t i = 0; i < test.size(); ++i) {
      col[i] = scores[i].at(k);
      lab[i] = test[i].clean[k];
      any = any || lab[i];
    }
    if (!any) {
      r.warnings.push_back("class " + std::to_string(k) + " has no test positives; excluded from mAP");
      continue;
    }
    r.per_class_ap[k] = average_precision(col, lab);
    total += *r.per_class_ap[k];
    ++counted;
  }
  r.map_total = counted ? total / static_cast<double>(counted) : 0.0;
  r.map_head = subset_mean(r.per_class_ap, split.head);
  r.map_medium = subset_mean(r.per_class_ap, split.medium);
  r.map_tail = subset_mean(r.per_class_ap, split.tail);
  return r;
}

void stitch_noise_delta(std::span<const Label> member_labels, std::span<const Label> member_clean,
                        const Label& stitched, std::size_t& reduced, std::size_t& introduced) {
  if (member_labels.size() != member_clean.size() || member_labels.empty()) {
    throw std::invalid_argument("stitch_noise_delta: member label / clean count mismatch");
  }
  const std::size_t k_members = member_labels.size();
  for (std::size_t k = 0; k < stitched.size(); ++k) {
    std::size_t before = 0;
    std::uint8_t clean_union = 0;
    for (std::size_t j = 0; j < k_members; ++j) {
      before += member_labels[j][k] != member_clean[j][k];
      clean_union |= member_clean[j][k];
    }
    const std::size_t after = (stitched[k] != clean_union) ? k_members : 0;
    if (before > after) reduced += before - after;
    if (after > before) introduced += after - before;
  }
}

NoiseTracker::NoiseTracker(std::size_t num_classes, SubsetSplit split, std::size_t window)
    : num_classes_(num_classes), split_(std::move(split)), window_(std::max<std::size_t>(1, window)) {
  windows_.assign(2, Window{std::vector<std::size_t>(num_classes, 0),
                            std::vector<std::size_t>(num_classes, 0), 0, 0, 0});
}

void NoiseTracker::observe(const ConsumedSample& s) {
  if (s.stream >= windows_.size()) throw std::invalid_argument("NoiseTracker: bad stream id");
  Window& w = windows_[s.stream];
  Label clean_union(num_classes_, 0);
  for (const auto& c : s.member_clean)
    for (std::size_t k = 0; k < num_classes_; ++k) clean_union[k] |= c[k];
  for (std::size_t k = 0; k < num_classes_; ++k) {
    if (!(clean_union[k] || s.consumed[k])) continue;
    ++w.positions[k];
    if (clean_union[k] != s.consumed[k]) ++w.disagreements[k];
  }
  ++w.samples;
  if (s.stitched) {
    std::size_t red = 0, intro = 0;
    stitch_noise_delta(s.member_labels, s.member_clean, s.consumed, red, intro);
    w.reduced += red;
    w.introduced += intro;
    total_reduced_ += red;
    total_introduced_ += intro;
  }
}

NoiseLevelRecord NoiseTracker::make_record(const Window& w, std::size_t iteration,
                                           const std::string& name) const {
  NoiseLevelRecord r;
  r.iteration = iteration;
  r.stream = name;
  r.samples = w.samples;
  r.reduced_count = w.reduced;
  r.introduced_count = w.introduced;
  auto frac = [&](std::span<const std::size_t> classes) -> std::optional<double> {
    std::size_t pos = 0, dis = 0;
    for (std::size_t k : classes) {
      pos += w.positions[k];
      dis += w.disagreements[k];
    }
    if (pos == 0) return std::nullopt;
    return static_cast<double>(dis) / static_cast<double>(pos);
  };
  std::vector<std::size_t> all(num_classes_);
  std::iota(all.begin(), all.end(), 0);
  r.noise_total = frac(all).value_or(0.0);
  r.noise_head = frac(split_.head);
  r.noise_medium = frac(split_.medium);
  r.noise_tail = frac(split_.tail);
  return r;
}

void NoiseTracker::end_iteration(std::size_t iteration) {
  if (++iters_in_window_ < window_) return;
  iters_in_window_ = 0;
  Window combined{std::vector<std::size_t>(num_classes_, 0), std::vector<std::size_t>(num_classes_, 0),
                  0, 0, 0};
  static const char* kNames[] = {"f", "g"};
  bool any = false;
  for (std::size_t s = 0; s < windows_.size(); ++s) {
    Window& w = windows_[s];
    if (w.samples == 0) continue;
    any = true;
    records_.push_back(make_record(w, iteration, kNames[s]));
    for (std::size_t k = 0; k < num_classes_; ++k) {
      combined.positions[k] += w.positions[k];
      combined.disagreements[k] += w.disagreements[k];
    }
    combined.samples += w.samples;
    combined.reduced += w.reduced;
    combined.introduced += w.introduced;
    std::fill(w.positions.begin(), w.positions.end(), 0);
    std::fill(w.disagreements.begin(), w.disagreements.end(), 0);
    w.samples = w.reduced = w.introduced = 0;
  }
  if (any) records_.push_back(make_record(combined, iteration, "all"));
}

std::vector<NoiseLevelRecord> noise_level(std::span<const std::vector<ConsumedSample>> stream,
                                          std::size_t num_classes, const SubsetSplit& split,
                                          std::size_t window) {
  NoiseTracker t(num_classes, split, window);
  for (std::size_t it = 0; it < stream.size(); ++it) {
    for (const auto& s : stream[it]) t.observe(s);
    t.end_iteration(it);
  }
  return t.records();
}

}  // namespace stitchlearn
