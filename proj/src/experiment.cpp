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

#include "stitchlearn/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"
#include "stitchlearn/dataset_io.hpp"
#include "stitchlearn/rng.hpp"

namespace stitchlearn {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw ConfigError(key + ": " + why);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t as_u64(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size()) {
    bad(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t as_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(as_u64(key, v));
}

double as_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  char* end = nullptr;
  const double out = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(out)) {
    bad(key, "expected a finite number, got '" + v + "'");
  }
  return out;
}

bool as_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  bad(key, "expected true|false, got '" + v + "'");
}

using TrainSetter = void (*)(TrainConfig&, const std::string&, const std::string&);
using DataSetter = void (*)(GeneratorConfig&, const std::string&, const std::string&);
using ExpSetter = void (*)(ExperimentConfig&, const std::string&, const std::string&);

struct KeyDef {
  ConfigKey info;
  TrainSetter train = nullptr;
  DataSetter data = nullptr;
  ExpSetter exp = nullptr;
};

template <typename E, typename F>
E parse_enum(const std::string& key, const std::string& v, F from) {
  try {
    return from(trim(v));
  } catch (const std::invalid_argument& e) {
    bad(key, e.what());
  }
}

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> defs = [] {
    std::vector<KeyDef> d;
    auto exp = [&](const char* n, const char* def, const char* help, ExpSetter s, bool ref = false) {
      d.push_back({{n, def, help, ref}, nullptr, nullptr, s});
    };
    auto data = [&](const char* n, const char* def, const char* help, DataSetter s) {
      d.push_back({{n, def, help, false}, nullptr, s, nullptr});
    };
    auto tr = [&](const char* n, const char* def, const char* help, TrainSetter s, bool ref = false) {
      d.push_back({{n, def, help, ref}, s, nullptr, nullptr});
    };

    exp("experiment.methods", "ours",
        "comma list: ours erm focal rs rs_focal db db_focal two_branch_baseline mixup_ablation, "
        "optionally with +stitch / +pl",
        [](ExperimentConfig& e, const std::string& k, const std::string& v) {
          e.methods = split_list(v);
          if (e.methods.empty()) bad(k, "empty method list");
        });
    exp("experiment.gammas", "0.5", "comma list of noise rates (grid 0.3,0.5,0.7,0.9)",
        [](ExperimentConfig& e, const std::string& k, const std::string& v) {
          e.gammas.clear();
          for (const auto& s : split_list(v)) e.gammas.push_back(as_double(k, s));
        });
    exp("experiment.seeds", "0,1,2,3,4", "comma list of trial seeds (five trials)",
        [](ExperimentConfig& e, const std::string& k, const std::string& v) {
          e.seeds.clear();
          for (const auto& s : split_list(v)) e.seeds.push_back(as_u64(k, s));
        },
        true);
    exp("experiment.out", "runs", "output directory",
        [](ExperimentConfig& e, const std::string&, const std::string& v) { e.out_dir = trim(v); });
    exp("experiment.data_dir", "", "train every run on this saved dataset",
        [](ExperimentConfig& e, const std::string&, const std::string& v) { e.data_dir = trim(v); });
    exp("experiment.jobs", "1", "runs executed concurrently",
        [](ExperimentConfig& e, const std::string& k, const std::string& v) {
          e.jobs = std::max<std::size_t>(1, as_size(k, v));
        });
    exp("experiment.threads", "0", "workers per run (0 = STITCHLEARN_THREADS, else 1)",
        [](ExperimentConfig& e, const std::string& k, const std::string& v) { e.threads = as_size(k, v); });
    exp("experiment.resume", "false", "reuse finished runs, resume from checkpoints",
        [](ExperimentConfig& e, const std::string& k, const std::string& v) { e.resume = as_bool(k, v); });

    data("data.num_classes", "20", "number of classes",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) { g.num_classes = as_size(k, v); });
    data("data.dim", "32", "token dimension",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) { g.dim = as_size(k, v); });
    data("data.pareto_exponent", "2", "class count decay exponent",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) {
           g.pareto_exponent = as_double(k, v);
         });
    data("data.max_count", "775", "count of the largest class",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) { g.max_count = as_size(k, v); });
    data("data.min_count", "4", "count floor",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) { g.min_count = as_size(k, v); });
    data("data.groups", "4", "co-occurrence groups",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) { g.groups = as_size(k, v); });
    data("data.background_tokens", "2", "background tokens per bag",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) {
           g.background_tokens = as_size(k, v);
         });
    data("data.token_noise_sigma", "0.5", "class token jitter (norm scale)",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) {
           g.token_noise_sigma = as_double(k, v);
         });
    data("data.background_scale", "1", "background token norm scale",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) {
           g.background_scale = as_double(k, v);
         });
    data("data.cooccur_prob", "0.3", "chance of adding each same-group class",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) { g.cooccur_prob = as_double(k, v); });
    data("data.test_per_class", "40", "balanced test quota per class",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) {
           g.test_per_class = as_size(k, v);
         });
    data("data.max_train_samples", "0", "feasibility cap, 0 = none",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) {
           g.max_train_samples = as_size(k, v);
         });
    data("data.seed", "0", "clean benchmark seed",
         [](GeneratorConfig& g, const std::string& k, const std::string& v) { g.seed = as_u64(k, v); });

    tr("train.epochs", "8", "training epochs",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.epochs = as_size(k, v);
         c.lr.total_epochs = c.epochs;
       },
       true);
    tr("train.tau", "0.1", "ensemble weight of branch f",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.tau = as_double(k, v); }, true);
    tr("train.two_branch", "true", "train branch g as well",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.two_branch = as_bool(k, v); });
    tr("train.momentum", "0.9", "SGD momentum",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.momentum = as_double(k, v); }, true);
    tr("train.weight_decay", "0.0001", "L2 weight decay",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.weight_decay = as_double(k, v); },
       true);
    tr("train.log_interval", "10", "iterations between metric rows",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.log_interval = as_size(k, v); });
    tr("train.noise_window", "10", "iterations per noise-level record",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.noise_window = as_size(k, v); });
    tr("train.eval_each_epoch", "true", "test mAP at every epoch end",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_each_epoch = as_bool(k, v); });
    tr("train.sequential_update", "false", "step Phi,f then Phi,g instead of jointly",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.sequential_update = as_bool(k, v); });
    tr("train.augment", "stitch", "stitch | mixup",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.augment = parse_enum<AugmentKind>(k, v, augment_kind_from_string);
       });
    tr("train.max_iterations", "", "stop early after this many iterations",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (trim(v).empty()) {
           c.max_iterations.reset();
         } else {
           c.max_iterations = as_size(k, v);
         }
       });
    tr("mixup.alpha", "1", "Beta(alpha, alpha) mixing weight",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.mixup_alpha = as_double(k, v); });
    tr("lr.base", "0.08", "initial learning rate",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr.base_lr = as_double(k, v); });
    tr("lr.warmup_iters", "100", "linear warm-up length",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr.warmup_iters = as_size(k, v); },
       true);
    tr("lr.warmup_ratio", "0.3333333333333333", "warm-up start as a fraction of lr.base",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr.warmup_ratio = as_double(k, v); },
       true);
    tr("lr.decay_epochs", "5,7", "epochs after which lr decays",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.lr.decay_epochs.clear();
         for (const auto& s : split_list(v)) c.lr.decay_epochs.push_back(as_size(k, s));
       },
       true);
    tr("lr.decay_factor", "0.1", "multiplicative decay",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr.decay_factor = as_double(k, v); },
       true);
    tr("sampling.f", "uniform", "sampler of branch f (uniform | class_rebalanced)",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.f.sampler = parse_enum<SamplerKind>(k, v, sampler_kind_from_string);
       },
       true);
    tr("sampling.g", "class_rebalanced", "sampler of branch g",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.g.sampler = parse_enum<SamplerKind>(k, v, sampler_kind_from_string);
       },
       true);
    tr("batch.f", "32", "batch size of branch f",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.f.batch = as_size(k, v); }, true);
    tr("batch.g", "256", "batch size of branch g",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.g.batch = as_size(k, v); }, true);
    tr("loss.random_branch", "bce", "loss of branch f (bce | focal | db | db_focal)",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.f.loss = parse_enum<LossKind>(k, v, loss_kind_from_string);
       },
       true);
    tr("loss.balanced_branch", "db_focal", "loss of branch g",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.g.loss = parse_enum<LossKind>(k, v, loss_kind_from_string);
       },
       true);
    tr("loss.db.lambda", "5", "negative tolerance",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.db.lambda = as_double(k, v); },
       true);
    tr("loss.db.theta", "0.1", "rebalancing weight shift",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.db.theta = as_double(k, v); },
       true);
    tr("loss.db.phi", "6", "rebalancing weight slope",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.db.phi = as_double(k, v); },
       true);
    tr("loss.db.mu", "0.3", "rebalancing weight centre",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.db.mu = as_double(k, v); },
       true);
    tr("loss.db.kappa", "0.05", "class bias scale",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.db.kappa = as_double(k, v); },
       true);
    tr("loss.focal.focusing", "2", "focal exponent",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.loss.focal.focusing = as_double(k, v);
       },
       true);
    tr("loss.focal.weighting", "2", "focal weighting",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.loss.focal.weighting = as_double(k, v);
       },
       true);
    tr("stitch.mode", "feature_average", "off | input_concat | feature_concat | feature_average",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.stitch.mode = parse_enum<StitchMode>(k, v, stitch_mode_from_string);
       });
    tr("stitch.k", "2", "samples per stitch",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.stitch.k = as_size(k, v); }, true);
    tr("stitch.p", "1", "stitch probability",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.stitch.p = as_double(k, v); }, true);
    tr("pl.mode", "cross", "off | self | cross",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.pl.mode = parse_enum<PseudoLabelMode>(k, v, pseudo_label_mode_from_string);
       });
    tr("pl.alpha", "0.8", "probability above which a label is set",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.pl.alpha = as_double(k, v); });
    tr("pl.beta", "0.2", "probability below which a label is cleared",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.pl.beta = as_double(k, v); });
    tr("pl.start_iter", "0", "first iteration with pseudo-labels",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.pl.start_iter = as_size(k, v); });
    tr("model.backbone_hidden", "64", "backbone hidden width",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.dims.backbone_hidden = as_size(k, v);
       });
    tr("model.backbone_out", "64", "backbone output width",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.dims.backbone_out = as_size(k, v); });
    tr("model.head_hidden", "32", "lower head width",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.dims.head_hidden = as_size(k, v); });
    return d;
  }();
  return defs;
}

const KeyDef* find_key(const std::string& name) {
  for (const auto& d : registry())
    if (d.info.name == name) return &d;
  return nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Methods

std::string to_string(Method m) {
  switch (m) {
    case Method::kOurs: return "ours";
    case Method::kErm: return "erm";
    case Method::kFocal: return "focal";
    case Method::kRs: return "rs";
    case Method::kRsFocal: return "rs_focal";
    case Method::kDb: return "db";
    case Method::kDbFocal: return "db_focal";
    case Method::kTwoBranchBaseline: return "two_branch_baseline";
    case Method::kMixupAblation: return "mixup_ablation";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::kOurs, Method::kErm, Method::kFocal, Method::kRs, Method::kRsFocal, Method::kDb,
                   Method::kDbFocal, Method::kTwoBranchBaseline, Method::kMixupAblation}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + s + "'");
}

std::string MethodSpec::label() const {
  std::string s = to_string(base);
  if (add_stitch) s += "+stitch";
  if (add_pl) s += "+pl";
  return s;
}

MethodSpec parse_method(const std::string& s) {
  MethodSpec m;
  std::string rest = trim(s);
  const auto plus = rest.find('+');
  m.base = method_from_string(rest.substr(0, plus));
  std::string mods = plus == std::string::npos ? "" : rest.substr(plus);
  while (!mods.empty()) {
    if (mods.rfind("+stitch", 0) == 0) {
      m.add_stitch = true;
      mods = mods.substr(7);
    } else if (mods.rfind("+pl", 0) == 0) {
      m.add_pl = true;
      mods = mods.substr(3);
    } else {
      throw ConfigError("unknown method modifier in '" + s + "' (expected +stitch or +pl)");
    }
  }
  return m;
}

TrainConfig method_preset(const MethodSpec& m) {
  TrainConfig t;  // defaults are the full method
  auto single = [&](SamplerKind sampler, LossKind loss) {
    t.two_branch = false;
    t.f = {sampler, 32, loss};
    t.stitch.mode = StitchMode::kOff;
    t.pl.mode = PseudoLabelMode::kOff;
  };
  switch (m.base) {
    case Method::kOurs:
      break;
    case Method::kErm: single(SamplerKind::kUniform, LossKind::kBce); break;
    case Method::kFocal: single(SamplerKind::kUniform, LossKind::kFocal); break;
    case Method::kRs: single(SamplerKind::kClassRebalanced, LossKind::kBce); break;
    case Method::kRsFocal: single(SamplerKind::kClassRebalanced, LossKind::kFocal); break;
    case Method::kDb: single(SamplerKind::kClassRebalanced, LossKind::kDb); break;
    case Method::kDbFocal: single(SamplerKind::kClassRebalanced, LossKind::kDbFocal); break;
    case Method::kTwoBranchBaseline:
      t.stitch.mode = StitchMode::kOff;
      t.pl.mode = PseudoLabelMode::kOff;
      break;
    case Method::kMixupAblation:
      t.stitch.mode = StitchMode::kOff;
      t.pl.mode = PseudoLabelMode::kOff;
      t.augment = AugmentKind::kMixup;
      break;
  }
  if (m.add_stitch) {
    t.stitch = StitchConfig{};
    t.augment = AugmentKind::kStitch;
  }
  if (m.add_pl) t.pl.mode = t.two_branch ? PseudoLabelMode::kCross : PseudoLabelMode::kSelf;
  return t;
}

// ---------------------------------------------------------------------------
// Config text

KeyValues read_config_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  KeyValues kv;
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      // top-level "dotted.key = value", or an empty section
      if (!trim(node.data()).empty()) kv[section] = trim(node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) kv[section + "." + key] = trim(leaf.data());
  }
  return kv;
}

KeyValues read_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return read_config_text(ss.str());
}

void apply_assignment(KeyValues& kv, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty()) {
    throw ConfigError("--set: expected key=value, got '" + assignment + "'");
  }
  kv[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& d : registry()) k.push_back(d.info);
    return k;
  }();
  return keys;
}

std::string config_help() {
  std::ostringstream os;
  os << "Config keys (INI [section] key = value, or --set section.key=value):\n";
  for (const auto& k : config_keys()) {
    os << "  " << k.name;
    for (std::size_t i = k.name.size(); i < 26; ++i) os << ' ';
    os << (k.default_value.empty() ? "(unset)" : k.default_value);
    if (k.reference_default) os << "  [reference protocol default]";
    os << "\n      " << k.help << '\n';
  }
  return os.str();
}

void apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const KeyDef* d = find_key(key);
  if (!d || !d->train) throw ConfigError(key + ": unknown training key");
  d->train(cfg, key, value);
}

ExperimentConfig parse_experiment(const KeyValues& kv) {
  ExperimentConfig e;
  for (const auto& [key, value] : kv) {
    const KeyDef* d = find_key(key);
    if (!d) bad(key, "unknown key (see --help-config)");
    if (d->exp) {
      d->exp(e, key, value);
    } else if (d->data) {
      d->data(e.data, key, value);
    } else {
      TrainConfig probe;
      d->train(probe, key, value);  // value check
      e.train_keys[key] = value;
    }
  }
  e.validate();
  return e;
}

void ExperimentConfig::validate() const {
  if (gammas.empty()) bad("experiment.gammas", "empty list");
  for (double g : gammas)
    if (!(g >= 0.0 && g <= 1.0)) bad("experiment.gammas", "gamma " + format_number(g) + " not in [0,1]");
  if (seeds.empty()) bad("experiment.seeds", "empty list");
  if (methods.empty()) bad("experiment.methods", "empty list");
  for (const auto& m : methods) {
    MethodSpec spec;
    try {
      spec = parse_method(m);
    } catch (const ConfigError& err) {
      bad("experiment.methods", err.what());
    }
    TrainConfig t = build_train_config(spec, *this, seeds.front());
    try {
      t.validate();
    } catch (const ConfigError& err) {
      bad("method " + m, err.what());
    }
  }
}

TrainConfig build_train_config(const MethodSpec& m, const ExperimentConfig& exp, std::uint64_t seed) {
  TrainConfig t = method_preset(m);
  for (const auto& [k, v] : exp.train_keys) apply_train_key(t, k, v);
  t.seed = seed;
  t.threads = exp.threads;
  return t;
}

std::vector<RunSpec> expand_runs(const ExperimentConfig& exp) {
  std::vector<RunSpec> out;
  for (const auto& m : exp.methods) {
    const MethodSpec spec = parse_method(m);
    for (double g : exp.gammas) {
      for (std::uint64_t s : exp.seeds) {
        out.push_back({spec.label(), spec.label(), g, s, build_train_config(spec, exp, s)});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablations

std::string to_string(AblationKind k) {
  switch (k) {
    case AblationKind::kComponents: return "components";
    case AblationKind::kKSweep: return "k_sweep";
    case AblationKind::kPSweep: return "p_sweep";
    case AblationKind::kStitchMode: return "stitch_mode";
    case AblationKind::kSamplingPrior: return "sampling_prior";
    case AblationKind::kSelfVsCross: return "self_vs_cross";
    case AblationKind::kMixup: return "mixup";
  }
  return "?";
}

AblationKind ablation_kind_from_string(const std::string& s) {
  for (AblationKind k : {AblationKind::kComponents, AblationKind::kKSweep, AblationKind::kPSweep,
                         AblationKind::kStitchMode, AblationKind::kSamplingPrior, AblationKind::kSelfVsCross,
                         AblationKind::kMixup}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown ablation '" + s +
                    "' (components|k_sweep|p_sweep|stitch_mode|sampling_prior|self_vs_cross|mixup)");
}

std::vector<AblationVariant> ablation_variants(AblationKind kind) {
  std::vector<AblationVariant> v;
  switch (kind) {
    case AblationKind::kComponents:
      v.push_back({"baseline", "two_branch_baseline", {}});
      v.push_back({"baseline+stitch", "two_branch_baseline+stitch", {}});
      v.push_back({"baseline+pl", "two_branch_baseline+pl", {}});
      v.push_back({"ours", "ours", {}});
      break;
    case AblationKind::kKSweep:
      for (int k = 2; k <= 5; ++k) v.push_back({"k=" + std::to_string(k), "ours", {{"stitch.k", std::to_string(k)}}});
      break;
    case AblationKind::kPSweep:
      for (const char* p : {"0", "0.3", "0.5", "0.8", "1"})
        v.push_back({std::string("p=") + p, "ours", {{"stitch.p", p}}});
      break;
    case AblationKind::kStitchMode:
      for (const char* m : {"off", "input_concat", "feature_concat", "feature_average"})
        v.push_back({std::string("stitch=") + m, "ours", {{"stitch.mode", m}}});
      break;
    case AblationKind::kSamplingPrior: {
      const std::pair<const char*, std::pair<const char*, const char*>> combos[] = {
          {"R+B", {"uniform", "class_rebalanced"}},
          {"R+R", {"uniform", "uniform"}},
          {"B+B", {"class_rebalanced", "class_rebalanced"}},
      };
      for (const auto& [name, s] : combos) {
        for (const char* pl : {"off", "self", "cross"}) {
          v.push_back({std::string(name) + "_" + pl, "ours",
                       {{"sampling.f", s.first}, {"sampling.g", s.second}, {"pl.mode", pl}}});
        }
      }
      break;
    }
    case AblationKind::kSelfVsCross:
      for (const char* pl : {"self", "cross"}) {
        v.push_back({std::string("R+B_") + pl, "ours",
                     {{"sampling.f", "uniform"}, {"sampling.g", "class_rebalanced"}, {"pl.mode", pl}}});
      }
      break;
    case AblationKind::kMixup:
      v.push_back({"baseline", "two_branch_baseline", {}});
      v.push_back({"mixup", "mixup_ablation", {}});
      v.push_back({"stitch_input", "two_branch_baseline+stitch", {{"stitch.mode", "input_concat"}}});
      break;
  }
  return v;
}

std::vector<RunSpec> ablation_matrix(AblationKind kind, const ExperimentConfig& base) {
  std::vector<RunSpec> out;
  for (const auto& var : ablation_variants(kind)) {
    const MethodSpec spec = parse_method(var.method);
    for (double g : base.gammas) {
      for (std::uint64_t s : base.seeds) {
        TrainConfig t = build_train_config(spec, base, s);
        for (const auto& [k, val] : var.keys) apply_train_key(t, k, val);
        out.push_back({var.label, spec.label(), g, s, std::move(t)});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

std::uint64_t trial_noise_seed(const GeneratorConfig& data, std::uint64_t seed) {
  return derive_seed(data.seed, streams::kTrialNoise, seed);
}

DatasetBundle trial_dataset(const GeneratorConfig& data, double gamma, std::uint64_t seed) {
  return generate_noisy(data, gamma, trial_noise_seed(data, seed));
}

std::string format_number(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, p);
}

std::string gamma_tag(double gamma) { return format_number(gamma); }

fs::path run_dir(const fs::path& out, const RunSpec& run) {
  return out / "runs" / run.label / ("gamma_" + gamma_tag(run.gamma)) / ("seed_" + std::to_string(run.seed));
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_of(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json row_json(const MetricsRow& r) {
  return {{"label", r.label},
          {"method", r.method},
          {"gamma", r.gamma},
          {"seed", r.seed},
          {"map_total", r.map_total},
          {"map_head", opt(r.map_head)},
          {"map_medium", opt(r.map_medium)},
          {"map_tail", opt(r.map_tail)},
          {"map_f", opt(r.map_f)},
          {"map_g", opt(r.map_g)},
          {"iterations", r.iterations},
          {"reduced", r.reduced},
          {"introduced", r.introduced}};
}

MetricsRow row_from_json(const json& j) {
  MetricsRow r;
  r.label = j.at("label").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.gamma = j.at("gamma").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.map_total = j.at("map_total").get<double>();
  r.map_head = opt_of(j.at("map_head"));
  r.map_medium = opt_of(j.at("map_medium"));
  r.map_tail = opt_of(j.at("map_tail"));
  r.map_f = opt_of(j.at("map_f"));
  r.map_g = opt_of(j.at("map_g"));
  r.iterations = j.at("iterations").get<std::size_t>();
  r.reduced = j.at("reduced").get<std::size_t>();
  r.introduced = j.at("introduced").get<std::size_t>();
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
    if (!os) throw std::runtime_error("short write on " + path.string());
  }
  fs::rename(tmp, path);
}

json dataset_json(const DatasetBundle& d) {
  return {{"num_classes", d.num_classes}, {"dim", d.dim},
          {"gamma", d.gamma},             {"seed", d.seed},
          {"noise_seed", d.noise_seed},   {"num_train", d.train.size()},
          {"num_test", d.test.size()}};
}

json manifest_base(const RunSpec& run, const DatasetBundle& data) {
  return {{"label", run.label},
          {"method", run.method},
          {"gamma", run.gamma},
          {"seed", run.seed},
          {"config", json::parse(config_fingerprint(run.train))},
          {"dataset", dataset_json(data)}};
}

}  // namespace

MetricsRow execute_run(const RunSpec& run, const DatasetBundle& data, const fs::path& dir, bool resume) {
  fs::create_directories(dir);
  const fs::path manifest_path = dir / "manifest.json";
  json manifest = manifest_base(run, data);

  if (resume && fs::exists(manifest_path)) {
    std::ifstream is(manifest_path);
    json old = json::parse(is, nullptr, false);
    if (!old.is_discarded() && old.value("status", "") == "complete" && old["config"] == manifest["config"] &&
        old["dataset"] == manifest["dataset"]) {
      return row_from_json(old.at("metrics"));
    }
  }

  TrainOptions opts;
  opts.checkpoint_path = dir / "checkpoint.bin";
  if (resume && fs::exists(opts.checkpoint_path)) opts.resume_from = opts.checkpoint_path;

  const auto t0 = std::chrono::steady_clock::now();
  try {
    TrainResult r = train(data, run.train, opts);
    MetricsRow row;
    row.label = run.label;
    row.method = run.method;
    row.gamma = run.gamma;
    row.seed = run.seed;
    const ApResult ap = map_report(r.model, data.test, data.split, r.tau);
    row.map_total = ap.map_total;
    row.map_head = ap.map_head;
    row.map_medium = ap.map_medium;
    row.map_tail = ap.map_tail;
    if (run.train.two_branch) {
      row.map_f = map_report(r.model, data.test, data.split, 1.0).map_total;
      row.map_g = map_report(r.model, data.test, data.split, 0.0).map_total;
    }
    row.iterations = r.iterations_done;
    row.reduced = r.history.total_reduced;
    row.introduced = r.history.total_introduced;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_model(r.model, dir / "model.bin");
    write_history_csv(r.history, dir / "metrics.csv");
    write_noise_csv(r.history.noise, dir / "noise_level.csv");
    manifest["status"] = "complete";
    manifest["tau"] = r.tau;
    manifest["metrics"] = row_json(row);
    manifest["warnings"] = ap.warnings;
    write_text(manifest_path, manifest.dump(2) + "\n");
    return row;
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    try {
      write_text(manifest_path, manifest.dump(2) + "\n");
    } catch (...) {
    }
    throw;
  }
}

BatchOutcome run_batch(const std::vector<RunSpec>& runs_in, const ExperimentConfig& exp, std::ostream& log) {
  std::vector<RunSpec> runs = runs_in;
  for (const auto& r : runs) {
    try {
      r.train.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(r.label + ": " + e.what());
    }
  }
  fs::create_directories(exp.out_dir);

  // Datasets, one per (gamma, seed), written if absent.
  std::vector<std::pair<std::pair<double, std::uint64_t>, DatasetBundle>> datasets;
  std::vector<std::size_t> data_of(runs.size());
  if (!exp.data_dir.empty()) {
    datasets.push_back({{0.0, 0}, load_dataset(exp.data_dir)});
    for (auto& r : runs) r.gamma = datasets.front().second.gamma;
  } else {
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const std::pair<double, std::uint64_t> key{runs[i].gamma, runs[i].seed};
      auto it = std::find_if(datasets.begin(), datasets.end(), [&](const auto& d) { return d.first == key; });
      if (it == datasets.end()) {
        DatasetBundle d = trial_dataset(exp.data, key.first, key.second);
        const fs::path dir =
            exp.out_dir / "data" / ("gamma_" + gamma_tag(key.first) + "_seed_" + std::to_string(key.second));
        if (fs::exists(dir / "meta.json")) {
          if (!datasets_equal(load_dataset(dir), d)) {
            throw ConfigError("data: " + dir.string() + " holds a dataset from a different data config");
          }
        } else {
          save_dataset(d, dir);
        }
        datasets.push_back({key, std::move(d)});
        it = datasets.end() - 1;
      }
      data_of[i] = static_cast<std::size_t>(it - datasets.begin());
    }
  }

  std::vector<std::optional<MetricsRow>> results(runs.size());
  std::vector<std::optional<RunFailure>> failed(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      const RunSpec& r = runs[i];
      try {
        results[i] = execute_run(r, datasets[data_of[i]].second, run_dir(exp.out_dir, r), exp.resume);
        std::lock_guard<std::mutex> lk(log_mu);
        char buf[64];
        std::snprintf(buf, sizeof buf, "mAP %.4f  %.1fs", results[i]->map_total, results[i]->wall_seconds);
        log << "[" << (i + 1) << "/" << runs.size() << "] " << r.label << " gamma=" << gamma_tag(r.gamma)
            << " seed=" << r.seed << "  " << buf << std::endl;
      } catch (const std::exception& e) {
        failed[i] = RunFailure{r.label, r.gamma, r.seed, e.what()};
        std::lock_guard<std::mutex> lk(log_mu);
        log << "[" << (i + 1) << "/" << runs.size() << "] " << r.label << " gamma=" << gamma_tag(r.gamma)
            << " seed=" << r.seed << "  FAILED: " << e.what() << std::endl;
      }
    }
  };
  const std::size_t jobs = std::min(std::max<std::size_t>(1, exp.jobs), runs.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  BatchOutcome out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (results[i]) out.rows.push_back(*results[i]);
    if (failed[i]) out.failures.push_back(*failed[i]);
  }

  write_metrics_csv(out.rows, exp.out_dir / "metrics.csv");
  {
    std::ostringstream t;
    t << "label,gamma,seed,wall_seconds\r\n";
    for (const auto& r : out.rows) {
      t << csv_field(r.label) << ',' << format_number(r.gamma) << ',' << r.seed << ','
        << format_number(r.wall_seconds) << "\r\n";
    }
    write_text(exp.out_dir / "timing.csv", t.str());
  }
  const auto agg = aggregate(out.rows);
  write_aggregate_csv(agg, exp.out_dir / "aggregate.csv");
  write_text(exp.out_dir / "summary.txt", summary_table(agg));
  const fs::path err_path = exp.out_dir / "error_manifest.json";
  if (out.failures.empty()) {
    fs::remove(err_path);
  } else {
    json j = json::array();
    for (const auto& f : out.failures) {
      j.push_back({{"label", f.label}, {"gamma", f.gamma}, {"seed", f.seed}, {"error", f.error}});
    }
    write_text(err_path, json{{"failed_runs", j}, {"completed_runs", out.rows.size()}}.dump(2) + "\n");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows) {
  std::vector<AggregateRow> out;
  std::vector<std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) {
    std::size_t g = 0;
    while (g < out.size() && !(out[g].label == r.label && out[g].gamma == r.gamma)) ++g;
    if (g == out.size()) {
      AggregateRow a;
      a.label = r.label;
      a.method = r.method;
      a.gamma = r.gamma;
      out.push_back(a);
      groups.emplace_back();
    }
    groups[g].push_back(&r);
  }
  auto stat = [](const std::vector<double>& v) {
    AggregateRow::Stat s;
    s.n = v.size();
    if (v.empty()) return s;
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
      s.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(v.size()));
    }
    return s;
  };
  for (std::size_t g = 0; g < out.size(); ++g) {
    auto collect = [&](auto get) {
      std::vector<double> v;
      for (const MetricsRow* r : groups[g]) {
        const std::optional<double> x = get(*r);
        if (x) v.push_back(*x);
      }
      return stat(v);
    };
    out[g].n = groups[g].size();
    out[g].map_total = collect([](const MetricsRow& r) { return std::optional<double>(r.map_total); });
    out[g].map_head = collect([](const MetricsRow& r) { return r.map_head; });
    out[g].map_medium = collect([](const MetricsRow& r) { return r.map_medium; });
    out[g].map_tail = collect([](const MetricsRow& r) { return r.map_tail; });
    out[g].map_f = collect([](const MetricsRow& r) { return r.map_f; });
    out[g].map_g = collect([](const MetricsRow& r) { return r.map_g; });
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace {

std::string opt_num(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

// RFC 4180 reader; returns rows of fields.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("csv: missing column '" + name + "'");
  }
};

CsvTable read_csv(const fs::path& path) {
  auto rows = parse_csv(read_text(path));
  if (rows.empty()) throw std::runtime_error(path.string() + ": empty csv");
  CsvTable t;
  t.header = std::move(rows.front());
  t.rows.assign(std::make_move_iterator(rows.begin() + 1), std::make_move_iterator(rows.end()));
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw std::runtime_error(path.string() + ": ragged csv row");
  }
  return t;
}

std::optional<double> opt_parse(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

void write_metrics_csv(const std::vector<MetricsRow>& rows, const fs::path& path) {
  std::ostringstream os;
  os << "label,method,gamma,seed,map_total,map_head,map_medium,map_tail,map_f,map_g,iterations,reduced,"
        "introduced\r\n";
  for (const auto& r : rows) {
    os << csv_field(r.label) << ',' << csv_field(r.method) << ',' << format_number(r.gamma) << ',' << r.seed
       << ',' << format_number(r.map_total) << ',' << opt_num(r.map_head) << ',' << opt_num(r.map_medium)
       << ',' << opt_num(r.map_tail) << ',' << opt_num(r.map_f) << ',' << opt_num(r.map_g) << ','
       << r.iterations << ',' << r.reduced << ',' << r.introduced << "\r\n";
  }
  write_text(path, os.str());
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<MetricsRow> out;
  for (const auto& f : t.rows) {
    MetricsRow r;
    r.label = f[t.col("label")];
    r.method = f[t.col("method")];
    r.gamma = std::stod(f[t.col("gamma")]);
    r.seed = std::stoull(f[t.col("seed")]);
    r.map_total = std::stod(f[t.col("map_total")]);
    r.map_head = opt_parse(f[t.col("map_head")]);
    r.map_medium = opt_parse(f[t.col("map_medium")]);
    r.map_tail = opt_parse(f[t.col("map_tail")]);
    r.map_f = opt_parse(f[t.col("map_f")]);
    r.map_g = opt_parse(f[t.col("map_g")]);
    r.iterations = std::stoull(f[t.col("iterations")]);
    r.reduced = std::stoull(f[t.col("reduced")]);
    r.introduced = std::stoull(f[t.col("introduced")]);
    out.push_back(std::move(r));
  }
  return out;
}

void write_aggregate_csv(const std::vector<AggregateRow>& rows, const fs::path& path) {
  std::ostringstream os;
  os << "label,method,gamma,n";
  for (const char* m : {"map_total", "map_head", "map_medium", "map_tail", "map_f", "map_g"})
    os << ',' << m << "_mean," << m << "_ci95";
  os << "\r\n";
  for (const auto& r : rows) {
    os << csv_field(r.label) << ',' << csv_field(r.method) << ',' << format_number(r.gamma) << ',' << r.n;
    for (const auto* s : {&r.map_total, &r.map_head, &r.map_medium, &r.map_tail, &r.map_f, &r.map_g}) {
      if (s->n == 0) {
        os << ",,";
      } else {
        os << ',' << format_number(s->mean) << ',' << format_number(s->ci95);
      }
    }
    os << "\r\n";
  }
  write_text(path, os.str());
}

std::vector<AggregateRow> read_aggregate_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<AggregateRow> out;
  for (const auto& f : t.rows) {
    AggregateRow r;
    r.label = f[t.col("label")];
    r.method = f[t.col("method")];
    r.gamma = std::stod(f[t.col("gamma")]);
    r.n = std::stoull(f[t.col("n")]);
    const std::pair<const char*, AggregateRow::Stat*> stats[] = {
        {"map_total", &r.map_total}, {"map_head", &r.map_head}, {"map_medium", &r.map_medium},
        {"map_tail", &r.map_tail},   {"map_f", &r.map_f},       {"map_g", &r.map_g}};
    for (const auto& [name, s] : stats) {
      const std::string& m = f[t.col(std::string(name) + "_mean")];
      if (m.empty()) continue;
      s->mean = std::stod(m);
      s->ci95 = std::stod(f[t.col(std::string(name) + "_ci95")]);
      s->n = r.n;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string summary_table(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  auto cell = [](const AggregateRow::Stat& s) {
    char c[64];
    if (s.n == 0) return std::string("-");
    std::snprintf(c, sizeof c, "%.2f +- %.2f", 100.0 * s.mean, 100.0 * s.ci95);
    return std::string(c);
  };
  std::snprintf(buf, sizeof buf, "%-*s  %5s  %2s  %-15s %-15s %-15s %-15s %-15s %-15s\n", static_cast<int>(w),
                "label", "gamma", "n", "total", "head", "medium", "tail", "branch f", "branch g");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %5s  %2zu  %-15s %-15s %-15s %-15s %-15s %-15s\n",
                  static_cast<int>(w), r.label.c_str(), format_number(r.gamma).c_str(), r.n,
                  cell(r.map_total).c_str(), cell(r.map_head).c_str(), cell(r.map_medium).c_str(),
                  cell(r.map_tail).c_str(), cell(r.map_f).c_str(), cell(r.map_g).c_str());
    os << buf;
  }
  os << "mAP x 100, mean +- 1.96 sd / sqrt(n) over seeds\n";
  return os.str();
}

void write_history_csv(const TrainHistory& h, const fs::path& path) {
  std::ostringstream os;
  os << "iteration,epoch,lr,loss_f,loss_g,noise,reduced,introduced,map_total,map_head,map_medium,map_tail\r\n";
  for (const auto& r : h.rows) {
    os << r.iteration << ',' << r.epoch << ',' << format_number(r.lr) << ',' << format_number(r.loss_f) << ','
       << format_number(r.loss_g) << ',' << opt_num(r.noise) << ',' << r.reduced << ',' << r.introduced << ','
       << opt_num(r.map_total) << ',' << opt_num(r.map_head) << ',' << opt_num(r.map_medium) << ','
       << opt_num(r.map_tail) << "\r\n";
  }
  write_text(path, os.str());
}

void write_noise_csv(const std::vector<NoiseLevelRecord>& records, const fs::path& path) {
  std::ostringstream os;
  os << "iteration,stream,samples,noise_total,noise_head,noise_medium,noise_tail,reduced,introduced\r\n";
  for (const auto& r : records) {
    os << r.iteration << ',' << csv_field(r.stream) << ',' << r.samples << ',' << format_number(r.noise_total)
       << ',' << opt_num(r.noise_head) << ',' << opt_num(r.noise_medium) << ',' << opt_num(r.noise_tail) << ','
       << r.reduced_count << ',' << r.introduced_count << "\r\n";
  }
  write_text(path, os.str());
}

std::vector<NoiseLevelRecord> read_noise_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<NoiseLevelRecord> out;
  for (const auto& f : t.rows) {
    NoiseLevelRecord r;
    r.iteration = std::stoull(f[t.col("iteration")]);
    r.stream = f[t.col("stream")];
    r.samples = std::stoull(f[t.col("samples")]);
    r.noise_total = std::stod(f[t.col("noise_total")]);
    r.noise_head = opt_parse(f[t.col("noise_head")]);
    r.noise_medium = opt_parse(f[t.col("noise_medium")]);
    r.noise_tail = opt_parse(f[t.col("noise_tail")]);
    r.reduced_count = std::stoull(f[t.col("reduced")]);
    r.introduced_count = std::stoull(f[t.col("introduced")]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string fx(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2f", v);
  return b;
}

}  // namespace

std::string noise_plot_svg(const std::vector<std::pair<std::string, std::vector<NoiseLevelRecord>>>& series,
                           const std::string& stream) {
  const double W = 640, H = 400, L = 60, R = 160, T = 30, B = 50;
  double xmax = 1, ymax = 0;
  for (const auto& [name, recs] : series) {
    for (const auto& r : recs) {
      if (r.stream != stream) continue;
      xmax = std::max(xmax, static_cast<double>(r.iteration));
      ymax = std::max(ymax, r.noise_total);
    }
  }
  ymax = ymax > 0 ? ymax * 1.1 : 1.0;
  auto X = [&](double x) { return L + (W - L - R) * x / xmax; };
  auto Y = [&](double y) { return H - B - (H - T - B) * y / ymax; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"20\" font-size=\"14\" font-family=\"sans-serif\">noise level, stream "
     << xml_escape(stream) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymax * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << fx(Y(y) + 4) << "\" font-size=\"10\" text-anchor=\"end\" "
       << "font-family=\"sans-serif\">" << fx(y) << "</text>\n";
    const double x = xmax * i / 4.0;
    os << "<text x=\"" << fx(X(x)) << "\" y=\"" << H - B + 15 << "\" font-size=\"10\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\">" << static_cast<long long>(std::llround(x)) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
     << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">iteration</text>\n";
  std::size_t idx = 0;
  for (const auto& [name, recs] : series) {
    const char* color = kPalette[idx % 10];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& r : recs) {
      if (r.stream != stream) continue;
      os << fx(X(static_cast<double>(r.iteration))) << ',' << fx(Y(r.noise_total)) << ' ';
    }
    os << "\"/>\n";
    const double ly = T + 10 + 18.0 * static_cast<double>(idx);
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\" font-size=\"11\" font-family=\"sans-serif\">"
       << xml_escape(name) << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

std::string aggregate_plot_svg(const std::vector<AggregateRow>& rows) {
  const double bw = 48, gap = 16, L = 60, T = 30, B = 110, H = 400;
  const double W = L + 20 + (bw + gap) * static_cast<double>(std::max<std::size_t>(1, rows.size()));
  double ymax = 0;
  for (const auto& r : rows) ymax = std::max(ymax, r.map_total.mean + r.map_total.ci95);
  ymax = ymax > 0 ? ymax * 1.1 : 1.0;
  auto Y = [&](double y) { return H - B - (H - T - B) * y / ymax; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fx(W) << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"20\" font-size=\"14\" font-family=\"sans-serif\">total mAP (95% band)</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << fx(W - 10) << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymax * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << fx(Y(y) + 4) << "\" font-size=\"10\" text-anchor=\"end\" "
       << "font-family=\"sans-serif\">" << fx(y) << "</text>\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double x = L + 10 + (bw + gap) * static_cast<double>(i);
    const double y = Y(r.map_total.mean);
    os << "<rect x=\"" << fx(x) << "\" y=\"" << fx(y) << "\" width=\"" << bw << "\" height=\"" << fx(H - B - y)
       << "\" fill=\"" << kPalette[i % 10] << "\"/>\n";
    const double cx = x + bw / 2;
    os << "<line x1=\"" << fx(cx) << "\" y1=\"" << fx(Y(r.map_total.mean - r.map_total.ci95)) << "\" x2=\""
       << fx(cx) << "\" y2=\"" << fx(Y(r.map_total.mean + r.map_total.ci95)) << "\" stroke=\"black\"/>\n";
    os << "<text transform=\"translate(" << fx(cx) << "," << H - B + 10
       << ") rotate(45)\" font-size=\"10\" font-family=\"sans-serif\">" << xml_escape(r.label) << " g="
       << format_number(r.gamma) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace stitchlearn
