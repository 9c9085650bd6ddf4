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

#include "stitchlearn/colearn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "stitchlearn/binio.hpp"
#include "stitchlearn/rng.hpp"

namespace stitchlearn {

using nlohmann::json;

std::string to_string(PseudoLabelMode m) {
  switch (m) {
    case PseudoLabelMode::kOff: return "off";
    case PseudoLabelMode::kSelf: return "self";
    case PseudoLabelMode::kCross: return "cross";
  }
  return "?";
}

PseudoLabelMode pseudo_label_mode_from_string(const std::string& s) {
  if (s == "off" || s == "none") return PseudoLabelMode::kOff;
  if (s == "self") return PseudoLabelMode::kSelf;
  if (s == "cross") return PseudoLabelMode::kCross;
  throw std::invalid_argument("unknown pseudo-label mode '" + s + "' (expected off|self|cross)");
}

void PseudoLabelConfig::validate() const {
  if (!(beta >= 0.0 && beta < alpha && alpha <= 1.0)) {
    throw ConfigError("pl.alpha / pl.beta must satisfy 0 <= beta < alpha <= 1 (got alpha=" +
                      std::to_string(alpha) + ", beta=" + std::to_string(beta) + ")");
  }
}

std::uint8_t pseudo_label(double q, std::uint8_t noisy, const PseudoLabelConfig& cfg) {
  if (q > cfg.alpha) return 1;
  if (q < cfg.beta) return 0;
  return noisy;
}

Label pseudo_label(std::span<const double> q, const Label& noisy, const PseudoLabelConfig& cfg) {
  if (q.size() != noisy.size()) throw std::invalid_argument("pseudo_label: length mismatch");
  Label out(noisy.size());
  for (std::size_t k = 0; k < q.size(); ++k) out[k] = pseudo_label(q[k], noisy[k], cfg);
  return out;
}

std::vector<Label> cross_guide(std::span<const Vec> member_probs, std::span<const Label> member_noisy,
                               const PseudoLabelConfig& cfg) {
  if (member_probs.size() != member_noisy.size()) {
    throw std::invalid_argument("cross_guide: member count mismatch");
  }
  std::vector<Label> out;
  out.reserve(member_noisy.size());
  for (std::size_t j = 0; j < member_noisy.size(); ++j) {
    if (cfg.mode == PseudoLabelMode::kOff) {
      out.push_back(member_noisy[j]);
    } else {
      out.push_back(pseudo_label(member_probs[j], member_noisy[j], cfg));
    }
  }
  return out;
}

TwoBranchModel TwoBranchModel::init(const ModelDims& d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, streams::kInit));
  TwoBranchModel m;
  m.dims = d;
  const std::size_t bb[] = {d.input_dim, d.backbone_hidden, d.backbone_out};
  const std::size_t lower[] = {d.backbone_out, d.head_hidden};
  const std::size_t upper[] = {d.head_hidden * std::max<std::size_t>(1, d.concat_k), d.num_classes};
  m.backbone = make_mlp(bb, Activation::kRelu, Activation::kRelu, rng);
  m.head_f.lower = make_mlp(lower, Activation::kRelu, Activation::kRelu, rng);
  m.head_f.upper = make_mlp(upper, Activation::kIdentity, Activation::kIdentity, rng);
  m.head_g.lower = make_mlp(lower, Activation::kRelu, Activation::kRelu, rng);
  m.head_g.upper = make_mlp(upper, Activation::kIdentity, Activation::kIdentity, rng);
  return m;
}

std::array<MlpParams*, 5> TwoBranchModel::blocks() {
  return {&backbone, &head_f.lower, &head_f.upper, &head_g.lower, &head_g.upper};
}

std::array<const MlpParams*, 5> TwoBranchModel::blocks() const {
  return {&backbone, &head_f.lower, &head_f.upper, &head_g.lower, &head_g.upper};
}

bool TwoBranchModel::same_values(const TwoBranchModel& o) const {
  return backbone.same_values(o.backbone) && head_f.same_values(o.head_f) &&
         head_g.same_values(o.head_g);
}

std::string to_string(AugmentKind a) { return a == AugmentKind::kMixup ? "mixup" : "stitch"; }

AugmentKind augment_kind_from_string(const std::string& s) {
  if (s == "stitch") return AugmentKind::kStitch;
  if (s == "mixup") return AugmentKind::kMixup;
  throw std::invalid_argument("unknown augment '" + s + "' (expected stitch|mixup)");
}

void TrainConfig::validate() const {
  if (f.batch == 0) throw ConfigError("batch.f must be >= 1");
  if (two_branch && g.batch == 0) throw ConfigError("batch.g must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("train.tau must be in [0,1]");
  if (!(lr.base_lr > 0.0)) throw ConfigError("lr.base must be > 0");
  if (!(lr.warmup_ratio > 0.0 && lr.warmup_ratio <= 1.0)) throw ConfigError("lr.warmup_ratio must be in (0,1]");
  if (!(lr.decay_factor > 0.0 && lr.decay_factor <= 1.0)) throw ConfigError("lr.decay_factor must be in (0,1]");
  if (log_interval == 0) throw ConfigError("train.log_interval must be >= 1");
  if (noise_window == 0) throw ConfigError("train.noise_window must be >= 1");
  pl.validate();
  try {
    stitch.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!two_branch && pl.mode == PseudoLabelMode::kCross) {
    throw ConfigError("pl.mode = cross needs two branches (train.two_branch = true)");
  }
  if (augment == AugmentKind::kMixup) {
    if (!(mixup_alpha > 0.0)) throw ConfigError("mixup.alpha must be > 0");
    if (stitch.mode == StitchMode::kFeatureConcat) {
      throw ConfigError("train.augment = mixup cannot be combined with stitch.mode = feature_concat");
    }
  }
}

std::size_t iterations_per_epoch(std::size_t num_train, const TrainConfig& cfg) {
  return (num_train + cfg.f.batch - 1) / cfg.f.batch;
}

namespace {

json branch_json(const BranchConfig& b) {
  return {{"sampler", to_string(b.sampler)}, {"batch", b.batch}, {"loss", to_string(b.loss)}};
}

json config_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["f"] = branch_json(c.f);
  j["g"] = branch_json(c.g);
  j["two_branch"] = c.two_branch;
  j["lr"] = {{"base", c.lr.base_lr},           {"warmup_iters", c.lr.warmup_iters},
             {"warmup_ratio", c.lr.warmup_ratio}, {"decay_epochs", c.lr.decay_epochs},
             {"decay_factor", c.lr.decay_factor}};
  j["stitch"] = {{"mode", to_string(c.stitch.mode)}, {"k", c.stitch.k}, {"p", c.stitch.p}};
  j["augment"] = to_string(c.augment);
  j["mixup_alpha"] = c.mixup_alpha;
  j["pl"] = {{"alpha", c.pl.alpha},
             {"beta", c.pl.beta},
             {"mode", to_string(c.pl.mode)},
             {"start_iter", c.pl.start_iter}};
  j["tau"] = c.tau;
  j["seed"] = c.seed;
  j["dims"] = {{"backbone_hidden", c.dims.backbone_hidden},
               {"backbone_out", c.dims.backbone_out},
               {"head_hidden", c.dims.head_hidden}};
  j["loss"] = {{"lambda", c.loss.db.lambda}, {"theta", c.loss.db.theta},
               {"phi", c.loss.db.phi},       {"mu", c.loss.db.mu},
               {"kappa", c.loss.db.kappa},   {"focusing", c.loss.focal.focusing},
               {"weighting", c.loss.focal.weighting}};
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["log_interval"] = c.log_interval;
  j["noise_window"] = c.noise_window;
  j["eval_each_epoch"] = c.eval_each_epoch;
  j["sequential_update"] = c.sequential_update;
  return j;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json row_json(const MetricRow& r) {
  return {{"iteration", r.iteration}, {"epoch", r.epoch},          {"lr", r.lr},
          {"loss_f", r.loss_f},       {"loss_g", r.loss_g},        {"noise", opt_json(r.noise)},
          {"reduced", r.reduced},     {"introduced", r.introduced}, {"map_total", opt_json(r.map_total)},
          {"map_head", opt_json(r.map_head)}, {"map_medium", opt_json(r.map_medium)},
          {"map_tail", opt_json(r.map_tail)}};
}

MetricRow row_from(const json& j) {
  MetricRow r;
  r.iteration = j.at("iteration");
  r.epoch = j.at("epoch");
  r.lr = j.at("lr");
  r.loss_f = j.at("loss_f");
  r.loss_g = j.at("loss_g");
  r.noise = opt_from(j.at("noise"));
  r.reduced = j.at("reduced");
  r.introduced = j.at("introduced");
  r.map_total = opt_from(j.at("map_total"));
  r.map_head = opt_from(j.at("map_head"));
  r.map_medium = opt_from(j.at("map_medium"));
  r.map_tail = opt_from(j.at("map_tail"));
  return r;
}

json noise_json(const NoiseLevelRecord& r) {
  return {{"iteration", r.iteration},        {"stream", r.stream},
          {"noise_total", r.noise_total},    {"noise_head", opt_json(r.noise_head)},
          {"noise_medium", opt_json(r.noise_medium)}, {"noise_tail", opt_json(r.noise_tail)},
          {"samples", r.samples},            {"reduced", r.reduced_count},
          {"introduced", r.introduced_count}};
}

NoiseLevelRecord noise_from(const json& j) {
  NoiseLevelRecord r;
  r.iteration = j.at("iteration");
  r.stream = j.at("stream");
  r.noise_total = j.at("noise_total");
  r.noise_head = opt_from(j.at("noise_head"));
  r.noise_medium = opt_from(j.at("noise_medium"));
  r.noise_tail = opt_from(j.at("noise_tail"));
  r.samples = j.at("samples");
  r.reduced_count = j.at("reduced");
  r.introduced_count = j.at("introduced");
  return r;
}

void put_mlp(std::ostream& os, const MlpParams& p) {
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    binio::put<std::uint64_t>(os, l.weight.rows());
    binio::put<std::uint64_t>(os, l.weight.cols());
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(l.activation));
    binio::put_doubles(os, l.weight.data());
    binio::put_doubles(os, l.bias);
  }
}

MlpParams get_mlp(std::istream& is) {
  MlpParams p;
  const auto n = binio::get<std::uint32_t>(is);
  if (n > 64) throw std::runtime_error("checkpoint: implausible layer count");
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto rows = binio::get<std::uint64_t>(is);
    const auto cols = binio::get<std::uint64_t>(is);
    if (rows > (1u << 20) || cols > (1u << 20)) throw std::runtime_error("checkpoint: implausible layer shape");
    Layer l;
    l.activation = static_cast<Activation>(binio::get<std::uint8_t>(is));
    l.weight = DenseMatrix(rows, cols);
    l.bias.assign(rows, 0.0);
    binio::get_doubles(is, l.weight.data());
    binio::get_doubles(is, l.bias);
    p.layers.push_back(std::move(l));
  }
  return p;
}

bool same_shape(const MlpParams& a, const MlpParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weight.rows() != b.layers[i].weight.rows() ||
        a.layers[i].weight.cols() != b.layers[i].weight.cols() ||
        a.layers[i].activation != b.layers[i].activation) {
      return false;
    }
  }
  return true;
}

constexpr char kCheckpointMagic[8] = {'S', 'T', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::size_t kChunk = 16;

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("STITCHLEARN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

// What one consumed sample is made of.
struct SamplePlan {
  std::vector<std::size_t> members;  // training positions, members[0] is the anchor
  bool stitched = false;
  std::optional<std::size_t> shared_class;
  double mix_lambda = 1.0;  // Mix-Up weight of members[0]
  bool mixed = false;
};

struct GradSet {
  MlpParams backbone;
  BranchHead head;
  double loss_sum = 0.0;
};

struct ChunkResult {
  GradSet grads;
  std::vector<ConsumedSample> consumed;
  std::exception_ptr error;
};

struct BranchWork {
  std::size_t stream = 0;
  const BranchHead* head = nullptr;
  const BranchHead* guide = nullptr;  // nullptr: no pseudo-labeling
  LossKind loss = LossKind::kBce;
  std::vector<SamplePlan> plans;
};

struct IterationOutput {
  GradSet f;
  GradSet g;
  double loss_f = 0.0;
  double loss_g = 0.0;
  std::vector<ConsumedSample> consumed;
};

class Trainer {
 public:
  Trainer(const DatasetBundle& data, const TrainConfig& cfg, const TrainOptions& opts)
      : data_(data), cfg_(cfg), opts_(opts) {
    if (data.train.empty()) throw std::invalid_argument("train: empty training set");
    cfg_.validate();
    cfg_.dims.input_dim = data.dim;
    cfg_.dims.num_classes = data.num_classes;
    cfg_.dims.concat_k =
        (cfg_.augment == AugmentKind::kStitch && cfg_.stitch.mode == StitchMode::kFeatureConcat)
            ? cfg_.stitch.k
            : 1;
    const auto counts = positive_counts(data.train, data.num_classes, false);
    set_class_statistics(cfg_.loss.db, counts, data.train.size());
    index_ = ClassIndex(data.train, data.num_classes);
    model_ = TwoBranchModel::init(cfg_.dims, cfg_.seed);
    for (auto& o : optim_) {
      o.momentum = cfg_.momentum;
      o.weight_decay = cfg_.weight_decay;
    }
    sampler_f_.emplace(cfg_.f.sampler, derive_seed(cfg_.seed, streams::kSamplerF));
    sampler_g_.emplace(cfg_.g.sampler, derive_seed(cfg_.seed, streams::kSamplerG));
    aug_f_.seed(derive_seed(cfg_.seed, streams::kAugmentF));
    aug_g_.seed(derive_seed(cfg_.seed, streams::kAugmentG));
    tracker_ = NoiseTracker(data.num_classes, data.split, cfg_.noise_window);
    ipe_ = iterations_per_epoch(data.train.size(), cfg_);
    total_iters_ = ipe_ * cfg_.epochs;
    threads_ = resolve_threads(cfg_.threads);
    fingerprint_ = config_fingerprint(cfg_);
  }

  void load_checkpoint(const std::filesystem::path& path);
  void save_checkpoint(const std::filesystem::path& path) const;
  IterationOutput compute(std::size_t iter);
  void apply(const IterationOutput& out, double lr);
  TrainResult run();
  const TwoBranchModel& model() const { return model_; }

 private:
  std::vector<SamplePlan> plan(const BatchIndices& batch, Rng& rng, std::size_t iter, char branch);
  void process(const BranchWork& work, std::size_t begin, std::size_t end, double inv_batch,
               ChunkResult& out) const;
  GradSet run_branch(const BranchWork& work, std::vector<ConsumedSample>& consumed, double& mean) const;
  void diverged(std::size_t iter, const std::string& what) const;

  const DatasetBundle& data_;
  TrainConfig cfg_;
  TrainOptions opts_;
  ClassIndex index_;
  TwoBranchModel model_;
  std::array<OptimState, 5> optim_;
  std::optional<BatchSampler> sampler_f_;
  std::optional<BatchSampler> sampler_g_;
  Rng aug_f_;
  Rng aug_g_;
  NoiseTracker tracker_;
  TrainHistory history_;
  std::size_t next_iter_ = 0;
  std::size_t ipe_ = 0;
  std::size_t total_iters_ = 0;
  std::size_t threads_ = 1;
  std::string fingerprint_;
};

std::vector<SamplePlan> Trainer::plan(const BatchIndices& batch, Rng& rng, std::size_t iter,
                                      char branch) {
  std::vector<SamplePlan> plans;
  plans.reserve(batch.sample_ids.size());
  for (std::size_t anchor : batch.sample_ids) {
    SamplePlan p;
    if (cfg_.augment == AugmentKind::kMixup) {
      std::gamma_distribution<double> ga(cfg_.mixup_alpha, 1.0);
      const double x = ga(rng);
      const double y = ga(rng);
      const std::size_t partner = batch.sample_ids[uniform_index(rng, batch.sample_ids.size())];
      p.members = {anchor, partner};
      p.mix_lambda = (x + y) > 0.0 ? x / (x + y) : 0.5;
      p.mixed = true;
    } else if (cfg_.stitch.active()) {
      auto s = maybe_stitch(anchor, data_.train, index_, cfg_.stitch, rng);
      p.members = std::move(s.members);
      p.stitched = s.stitched;
      p.shared_class = s.shared_class;
    } else {
      p.members = {anchor};
    }
    plans.push_back(std::move(p));
  }
  if (opts_.stitch_log && cfg_.augment == AugmentKind::kStitch && cfg_.stitch.active()) {
    std::ostream& os = *opts_.stitch_log;
    os << "iter=" << iter << " branch=" << branch << " stitched=";
    std::size_t n = 0;
    for (const auto& p : plans) n += p.stitched;
    os << n << "/" << plans.size();
    for (const auto& p : plans) {
      if (!p.stitched) continue;
      os << " [k=" << *p.shared_class << " ids=";
      for (std::size_t j = 0; j < p.members.size(); ++j) {
        os << (j ? "," : "") << data_.train[p.members[j]].sample_id;
      }
      // pre/post noise flag on the shared class
      os << " pre=";
      for (std::size_t j = 0; j < p.members.size(); ++j) {
        os << (j ? "," : "") << int(!data_.train[p.members[j]].clean[*p.shared_class]);
      }
      bool any_clean = false;
      for (std::size_t m : p.members) any_clean = any_clean || data_.train[m].clean[*p.shared_class];
      os << " post=" << int(!any_clean) << "]";
    }
    os << "\n";
  }
  return plans;
}

void Trainer::process(const BranchWork& work, std::size_t begin, std::size_t end, double inv_batch,
                      ChunkResult& out) const {
  const auto& train = data_.train;
  const MlpParams& bb = model_.backbone;
  const BranchHead& head = *work.head;
  for (std::size_t i = begin; i < end; ++i) {
    const SamplePlan& p = work.plans[i];
    const std::size_t k_members = p.members.size();
    std::vector<TokenBagRef> refs;
    refs.reserve(k_members);
    for (std::size_t m : p.members) refs.push_back(&train[m].tokens);

    std::optional<StitchForward> sfwd;
    std::optional<BackboneOutput> mix_bb;
    std::optional<BranchOutput> mix_br;
    Vec logits;
    if (p.mixed) {
      Vec pooled = mean_pool(*refs[0]);
      const Vec other = mean_pool(*refs[1]);
      for (std::size_t d = 0; d < pooled.size(); ++d) {
        pooled[d] = p.mix_lambda * pooled[d] + (1.0 - p.mix_lambda) * other[d];
      }
      mix_bb = backbone_forward_pooled(pooled, 1, bb);
      mix_br = branch_forward(mix_bb->hidden, head);
      logits = mix_br->logits;
    } else {
      const StitchMode mode = p.stitched ? cfg_.stitch.mode : StitchMode::kOff;
      sfwd = stitch_forward(refs, mode, bb, head);
      logits = sfwd->logits;
    }

    std::vector<Label> member_noisy;
    member_noisy.reserve(k_members);
    for (std::size_t m : p.members) member_noisy.push_back(train[m].noisy);
    std::vector<Label> member_labels;
    if (work.guide) {
      std::vector<Vec> probs(k_members);
      for (std::size_t j = 0; j < k_members; ++j) {
        Vec hidden;
        if (sfwd && sfwd->hidden.size() == k_members) {
          hidden = sfwd->hidden[j];
        } else {
          hidden = mlp_forward(bb, mean_pool(*refs[j]), nullptr);
        }
        Vec z = head_logits(hidden, *work.guide);
        for (double& v : z) v = sigmoid(v);
        probs[j] = std::move(z);
      }
      member_labels = cross_guide(probs, member_noisy, cfg_.pl);
    } else {
      member_labels = member_noisy;
    }

    // The DB family needs a positive to rebalance on; a correction that clears
    // every class falls back to the members' noisy labels.
    if (work.guide && (work.loss == LossKind::kDb || work.loss == LossKind::kDbFocal)) {
      bool any = false;
      for (const auto& y : member_labels)
        for (auto v : y) any = any || v;
      if (!any) member_labels = member_noisy;
    }

    Vec targets;
    Label consumed;
    if (p.mixed) {
      const Vec a = to_targets(member_labels[0]);
      const Vec b = to_targets(member_labels[1]);
      targets.resize(a.size());
      consumed.resize(a.size());
      for (std::size_t k = 0; k < a.size(); ++k) {
        targets[k] = p.mix_lambda * a[k] + (1.0 - p.mix_lambda) * b[k];
        consumed[k] = targets[k] > 0.0;
      }
    } else {
      consumed = label_union(member_labels);
      targets = to_targets(consumed);
    }

    LossOutput loss = evaluate_loss(work.loss, logits, targets, cfg_.loss);
    if (!std::isfinite(loss.value)) throw DivergedError("diverged: non-finite loss");
    out.grads.loss_sum += loss.value;
    for (double& v : loss.grad_logits) v *= inv_batch;

    if (p.mixed) {
      const Vec gh = branch_backward(head, mix_br->cache, loss.grad_logits, out.grads.head);
      backbone_backward(bb, mix_bb->cache, gh, out.grads.backbone);
    } else {
      stitch_backward(*sfwd, refs, bb, head, loss.grad_logits, out.grads.backbone, out.grads.head);
    }

    ConsumedSample cs;
    cs.stream = work.stream;
    cs.consumed = std::move(consumed);
    cs.member_labels = std::move(member_labels);
    for (std::size_t m : p.members) cs.member_clean.push_back(train[m].clean);
    cs.stitched = p.stitched;
    out.consumed.push_back(std::move(cs));
  }
}

GradSet Trainer::run_branch(const BranchWork& work, std::vector<ConsumedSample>& consumed,
                            double& mean) const {
  const std::size_t n = work.plans.size();
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<ChunkResult> results(chunks);
  for (auto& r : results) {
    r.grads.backbone = zeros_like(model_.backbone);
    r.grads.head = zeros_like(*work.head);
  }
  const double inv = 1.0 / static_cast<double>(n);
  auto do_chunk = [&](std::size_t c) {
    try {
      process(work, c * kChunk, std::min(n, (c + 1) * kChunk), inv, results[c]);
    } catch (...) {
      results[c].error = std::current_exception();
    }
  };
  const std::size_t workers = std::min(threads_, chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) do_chunk(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < chunks; c = next++) do_chunk(c);
      });
    }
    for (auto& t : pool) t.join();
  }
  GradSet total;
  total.backbone = zeros_like(model_.backbone);
  total.head = zeros_like(*work.head);
  for (auto& r : results) {
    if (r.error) std::rethrow_exception(r.error);
    add_scaled(total.backbone, r.grads.backbone, 1.0);
    add_scaled(total.head.lower, r.grads.head.lower, 1.0);
    add_scaled(total.head.upper, r.grads.head.upper, 1.0);
    total.loss_sum += r.grads.loss_sum;
    for (auto& c : r.consumed) consumed.push_back(std::move(c));
  }
  mean = total.loss_sum * inv;
  return total;
}

IterationOutput Trainer::compute(std::size_t iter) {
  const bool pl_on = cfg_.pl.mode != PseudoLabelMode::kOff && iter >= cfg_.pl.start_iter;
  const std::size_t n = data_.train.size();

  BranchWork wf;
  wf.stream = 0;
  wf.head = &model_.head_f;
  wf.loss = cfg_.f.loss;
  BranchWork wg;
  wg.stream = 1;
  wg.head = &model_.head_g;
  wg.loss = cfg_.g.loss;
  const BatchIndices bf = sampler_f_->sample_batch(n, index_, cfg_.f.batch);
  std::optional<BatchIndices> bg;
  if (cfg_.two_branch) bg = sampler_g_->sample_batch(n, index_, cfg_.g.batch);
  wf.plans = plan(bf, aug_f_, iter, 'f');
  if (bg) wg.plans = plan(*bg, aug_g_, iter, 'g');
  if (pl_on) {
    const bool cross = cfg_.pl.mode == PseudoLabelMode::kCross;
    wf.guide = cross ? &model_.head_g : &model_.head_f;
    wg.guide = cross ? &model_.head_f : &model_.head_g;
  }

  IterationOutput out;
  out.f = run_branch(wf, out.consumed, out.loss_f);
  if (bg) {
    out.g = run_branch(wg, out.consumed, out.loss_g);
  } else {
    out.g.backbone = zeros_like(model_.backbone);
    out.g.head = zeros_like(model_.head_g);
  }
  return out;
}

void Trainer::diverged(std::size_t iter, const std::string& what) const {
  std::string where;
  if (!opts_.checkpoint_path.empty()) {
    auto dump = opts_.checkpoint_path;
    dump += ".diverged";
    try {
      save_checkpoint(dump);
      where = "; state dumped to " + dump.string();
    } catch (const std::exception&) {
      where = "; state dump failed";
    }
  }
  throw DivergedError("diverged at iteration " + std::to_string(iter) + ": " + what + where);
}

void Trainer::apply(const IterationOutput& out, double lr) {
  MlpParams bb_sum = out.f.backbone;
  add_scaled(bb_sum, out.g.backbone, 1.0);
  const MlpParams* all[] = {&bb_sum, &out.f.head.lower, &out.f.head.upper, &out.g.head.lower,
                            &out.g.head.upper};
  for (const MlpParams* g : all) {
    if (!all_finite(*g)) throw DivergedError("diverged");
  }
  auto step = [&](std::size_t block, const MlpParams& grad) {
    MlpParams* p[] = {model_.blocks()[block]};
    const MlpParams* g[] = {&grad};
    sgd_step(p, g, optim_[block], lr);
  };
  if (cfg_.sequential_update && cfg_.two_branch) {
    step(0, out.f.backbone);
    step(1, out.f.head.lower);
    step(2, out.f.head.upper);
    step(0, out.g.backbone);
    step(3, out.g.head.lower);
    step(4, out.g.head.upper);
  } else {
    step(0, bb_sum);
    step(1, out.f.head.lower);
    step(2, out.f.head.upper);
    if (cfg_.two_branch) {
      step(3, out.g.head.lower);
      step(4, out.g.head.upper);
    }
  }
}

TrainResult Trainer::run() {
  const std::size_t stop =
      cfg_.max_iterations ? std::min(total_iters_, *cfg_.max_iterations) : total_iters_;
  for (std::size_t t = next_iter_; t < stop; ++t) {
    const std::size_t epoch = t / ipe_;
    const double lr = lr_at(cfg_.lr, t, epoch);
    IterationOutput out;
    try {
      out = compute(t);
      apply(out, lr);
    } catch (const DivergedError& e) {
      diverged(t, e.what());
    }
    for (const auto& c : out.consumed) tracker_.observe(c);
    tracker_.end_iteration(t);
    next_iter_ = t + 1;

    const bool epoch_end = (t + 1) % ipe_ == 0;
    const bool log_tick = (t + 1) % cfg_.log_interval == 0;
    if (log_tick || epoch_end) {
      MetricRow row;
      row.iteration = t;
      row.epoch = epoch;
      row.lr = lr;
      row.loss_f = out.loss_f;
      row.loss_g = out.loss_g;
      for (auto it = tracker_.records().rbegin(); it != tracker_.records().rend(); ++it) {
        if (it->stream == "all") {
          row.noise = it->noise_total;
          break;
        }
      }
      row.reduced = tracker_.total_reduced();
      row.introduced = tracker_.total_introduced();
      if (epoch_end && cfg_.eval_each_epoch && !data_.test.empty()) {
        const ApResult ap = map_report(model_, data_.test, data_.split, cfg_.effective_tau());
        row.map_total = ap.map_total;
        row.map_head = ap.map_head;
        row.map_medium = ap.map_medium;
        row.map_tail = ap.map_tail;
      }
      history_.rows.push_back(row);
    }
    if (epoch_end && !opts_.checkpoint_path.empty()) save_checkpoint(opts_.checkpoint_path);
  }
  if (!opts_.checkpoint_path.empty()) save_checkpoint(opts_.checkpoint_path);
  TrainResult r;
  r.model = model_;
  r.history = history_;
  r.history.noise = tracker_.records();
  r.history.total_reduced = tracker_.total_reduced();
  r.history.total_introduced = tracker_.total_introduced();
  r.iterations_done = next_iter_;
  r.tau = cfg_.effective_tau();
  return r;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  std::ostringstream os(std::ios::binary);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  binio::put<std::uint32_t>(os, kCheckpointVersion);
  binio::put_string(os, fingerprint_);
  binio::put<std::uint64_t>(os, next_iter_);
  for (const MlpParams* b : model_.blocks()) put_mlp(os, *b);
  for (const auto& o : optim_) {
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(o.buffers.size()));
    for (const auto& b : o.buffers) put_mlp(os, b);
  }
  binio::put_string(os, rng_state(sampler_f_->rng()));
  binio::put_string(os, rng_state(sampler_g_->rng()));
  binio::put_string(os, rng_state(aug_f_));
  binio::put_string(os, rng_state(aug_g_));

  json extra;
  extra["rows"] = json::array();
  for (const auto& r : history_.rows) extra["rows"].push_back(row_json(r));
  extra["records"] = json::array();
  for (const auto& r : tracker_.records()) extra["records"].push_back(noise_json(r));
  auto& tr = const_cast<NoiseTracker&>(tracker_);
  extra["iters_in_window"] = tr.iterations_in_window();
  extra["total_reduced"] = tr.total_reduced_ref();
  extra["total_introduced"] = tr.total_introduced_ref();
  extra["windows"] = json::array();
  for (const auto& w : tr.windows()) {
    extra["windows"].push_back({{"positions", w.positions},
                                {"disagreements", w.disagreements},
                                {"samples", w.samples},
                                {"reduced", w.reduced},
                                {"introduced", w.introduced}});
  }
  binio::put_string(os, extra.dump());

  // write-then-rename so a crash never leaves a torn checkpoint
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    const std::string blob = os.str();
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw std::runtime_error("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  try {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kCheckpointMagic)) {
      throw std::runtime_error("not a checkpoint file");
    }
    if (binio::get<std::uint32_t>(is) != kCheckpointVersion) {
      throw std::runtime_error("unsupported checkpoint version");
    }
    if (binio::get_string(is) != fingerprint_) {
      throw ConfigError("checkpoint was written by a different configuration");
    }
    next_iter_ = binio::get<std::uint64_t>(is);
    for (MlpParams* b : model_.blocks()) {
      MlpParams loaded = get_mlp(is);
      if (!same_shape(loaded, *b)) throw ConfigError("checkpoint parameter shapes do not match");
      loaded.generation = b->generation + 1;
      *b = std::move(loaded);
    }
    for (std::size_t i = 0; i < optim_.size(); ++i) {
      const auto nb = binio::get<std::uint32_t>(is);
      optim_[i].buffers.clear();
      for (std::uint32_t j = 0; j < nb; ++j) optim_[i].buffers.push_back(get_mlp(is));
    }
    set_rng_state(sampler_f_->rng(), binio::get_string(is));
    set_rng_state(sampler_g_->rng(), binio::get_string(is));
    set_rng_state(aug_f_, binio::get_string(is));
    set_rng_state(aug_g_, binio::get_string(is));
    const json extra = json::parse(binio::get_string(is));
    history_.rows.clear();
    for (const auto& r : extra.at("rows")) history_.rows.push_back(row_from(r));
    auto& recs = tracker_.mutable_records();
    recs.clear();
    for (const auto& r : extra.at("records")) recs.push_back(noise_from(r));
    tracker_.iterations_in_window() = extra.at("iters_in_window");
    tracker_.total_reduced_ref() = extra.at("total_reduced");
    tracker_.total_introduced_ref() = extra.at("total_introduced");
    auto& ws = tracker_.windows();
    const auto& jw = extra.at("windows");
    if (jw.size() != ws.size()) throw std::runtime_error("checkpoint tracker state mismatch");
    for (std::size_t s = 0; s < ws.size(); ++s) {
      ws[s].positions = jw[s].at("positions").get<std::vector<std::size_t>>();
      ws[s].disagreements = jw[s].at("disagreements").get<std::vector<std::size_t>>();
      ws[s].samples = jw[s].at("samples");
      ws[s].reduced = jw[s].at("reduced");
      ws[s].introduced = jw[s].at("introduced");
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint metadata: ") + e.what());
  }
}

}  // namespace

std::string config_fingerprint(const TrainConfig& cfg) { return config_json(cfg).dump(); }

TrainResult train(const DatasetBundle& data, const TrainConfig& cfg, const TrainOptions& opts) {
  Trainer t(data, cfg, opts);
  if (!opts.resume_from.empty()) t.load_checkpoint(opts.resume_from);
  return t.run();
}

Vec ensemble_logits(const TwoBranchModel& model, const std::vector<Token>& tokens, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("infer: tau must be in [0,1]");
  const Vec hidden = mlp_forward(model.backbone, mean_pool(tokens), nullptr);
  if (tau == 1.0) return head_logits(hidden, model.head_f);
  if (tau == 0.0) return head_logits(hidden, model.head_g);
  Vec z = head_logits(hidden, model.head_f);
  const Vec zg = head_logits(hidden, model.head_g);
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = tau * z[k] + (1.0 - tau) * zg[k];
  return z;
}

Vec infer(const TwoBranchModel& model, const std::vector<Token>& tokens, double tau) {
  Vec z = ensemble_logits(model, tokens, tau);
  for (double& v : z) v = sigmoid(v);
  return z;
}

void save_model(const TwoBranchModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write model " + path.string());
  os.write("STLMODL1", 8);
  binio::put<std::uint32_t>(os, 1);
  const ModelDims& d = model.dims;
  for (std::size_t v : {d.input_dim, d.backbone_hidden, d.backbone_out, d.head_hidden, d.num_classes,
                        d.concat_k}) {
    binio::put<std::uint64_t>(os, v);
  }
  for (const MlpParams* b : model.blocks()) put_mlp(os, *b);
  if (!os) throw std::runtime_error("short write on model " + path.string());
}

TwoBranchModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read model " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != "STLMODL1") {
    throw std::runtime_error(path.string() + ": not a model file");
  }
  if (binio::get<std::uint32_t>(is) != 1) throw std::runtime_error("unsupported model version");
  ModelDims d;
  for (std::size_t* v : {&d.input_dim, &d.backbone_hidden, &d.backbone_out, &d.head_hidden,
                         &d.num_classes, &d.concat_k}) {
    *v = binio::get<std::uint64_t>(is);
  }
  TwoBranchModel m = TwoBranchModel::init(d, 0);
  for (MlpParams* b : m.blocks()) {
    MlpParams loaded = get_mlp(is);
    if (!same_shape(loaded, *b)) throw std::runtime_error("model file: parameter shapes do not match dims");
    *b = std::move(loaded);
  }
  return m;
}

ApResult map_report(const TwoBranchModel& model, std::span<const TokenBagSample> test,
                    const SubsetSplit& split, double tau) {
  if (test.empty()) throw std::invalid_argument("map_report: empty test set");
  std::vector<Vec> scores;
  scores.reserve(test.size());
  // ranking only needs logits; sigmoid is monotone
  for (const auto& s : test) scores.push_back(ensemble_logits(model, s.tokens, tau));
  return map_from_scores(scores, test, split);
}

IterationGrads first_iteration_grads(const DatasetBundle& data, const TrainConfig& cfg) {
  Trainer t(data, cfg, {});
  IterationOutput out = t.compute(0);
  IterationGrads g;
  g.backbone_f = std::move(out.f.backbone);
  g.backbone_g = std::move(out.g.backbone);
  g.head_f = std::move(out.f.head);
  g.head_g = std::move(out.g.head);
  g.loss_f = out.loss_f;
  g.loss_g = out.loss_g;
  return g;
}

}  // namespace stitchlearn
