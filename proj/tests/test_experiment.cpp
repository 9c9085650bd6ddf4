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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "stitchlearn/dataset_io.hpp"
#include "stitchlearn/experiment.hpp"

using namespace stitchlearn;
namespace fs = std::filesystem;

namespace {

KeyValues small_keys(const fs::path& out) {
  return {{"data.num_classes", "6"},   {"data.dim", "8"},          {"data.max_count", "60"},
          {"data.min_count", "3"},     {"data.groups", "2"},       {"data.test_per_class", "6"},
          {"train.epochs", "1"},       {"batch.f", "8"},           {"batch.g", "16"},
          {"model.backbone_hidden", "12"}, {"model.backbone_out", "10"}, {"model.head_hidden", "8"},
          {"lr.warmup_iters", "3"},    {"lr.decay_epochs", ""},    {"experiment.seeds", "0,1"},
          {"experiment.out", out.string()}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stl_exp_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, IniSectionsFlatten) {
  const auto kv = read_config_text("[stitch]\nk = 3\np = 0.5\n[loss.db]\nlambda = 4\n");
  EXPECT_EQ(kv.at("stitch.k"), "3");
  EXPECT_EQ(kv.at("stitch.p"), "0.5");
  EXPECT_EQ(kv.at("loss.db.lambda"), "4");
}

TEST(Config, AssignmentOverrides) {
  KeyValues kv = read_config_text("[stitch]\nk = 3\n");
  apply_assignment(kv, "stitch.k=4");
  EXPECT_EQ(kv.at("stitch.k"), "4");
  EXPECT_THROW(apply_assignment(kv, "novalue"), ConfigError);
}

TEST(Config, UnknownKeyNamed) {
  try {
    parse_experiment({{"stitch.z", "1"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stitch.z"), std::string::npos);
  }
}

TEST(Config, BadValuesNameTheField) {
  const std::vector<std::pair<std::string, std::string>> bad = {
      {"stitch.k", "1"}, {"stitch.p", "2"}, {"train.tau", "-0.1"}, {"pl.alpha", "0.1"},
      {"experiment.gammas", "1.5"}, {"batch.f", "zero"}, {"stitch.mode", "sideways"}};
  for (const auto& [k, v] : bad) {
    try {
      parse_experiment({{k, v}});
      ADD_FAILURE() << k << "=" << v << " accepted";
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      const std::string field = k.substr(0, k.find('.'));
      EXPECT_NE(msg.find(field), std::string::npos) << msg;
    }
  }
}

TEST(Config, OverridesReachTrainConfig) {
  const auto exp = parse_experiment({{"stitch.k", "3"}, {"loss.db.lambda", "4"}, {"pl.alpha", "0.7"}});
  const auto c = build_train_config(parse_method("ours"), exp, 2);
  EXPECT_EQ(c.stitch.k, 3u);
  EXPECT_EQ(c.loss.db.lambda, 4.0);
  EXPECT_EQ(c.pl.alpha, 0.7);
  EXPECT_EQ(c.seed, 2u);
}

TEST(Config, RegistryDefaultsMatchBuiltIns) {
  KeyValues kv;
  for (const auto& k : config_keys())
    if (k.name.rfind("experiment.", 0) != 0 && k.name.rfind("data.", 0) != 0) kv[k.name] = k.default_value;
  const auto with = build_train_config(parse_method("ours"), parse_experiment(kv), 0);
  const auto without = build_train_config(parse_method("ours"), parse_experiment({}), 0);
  EXPECT_EQ(config_fingerprint(with), config_fingerprint(without));
}

TEST(Config, HelpMarksReferenceDefaults) {
  const std::string h = config_help();
  EXPECT_NE(h.find("reference protocol default"), std::string::npos);
  for (const auto& k : config_keys()) EXPECT_NE(h.find(k.name), std::string::npos) << k.name;
  std::set<std::string> names;
  for (const auto& k : config_keys()) EXPECT_TRUE(names.insert(k.name).second) << "duplicate " << k.name;
}

TEST(Presets, SingleBranchBaselines) {
  for (const char* m : {"erm", "focal", "rs", "rs_focal", "db", "db_focal"}) {
    const auto c = method_preset(parse_method(m));
    EXPECT_FALSE(c.two_branch) << m;
    EXPECT_FALSE(c.stitch.active()) << m;
    EXPECT_EQ(c.pl.mode, PseudoLabelMode::kOff) << m;
    EXPECT_NO_THROW(c.validate()) << m;
  }
  EXPECT_EQ(method_preset(parse_method("erm")).f.loss, LossKind::kBce);
  EXPECT_EQ(method_preset(parse_method("rs")).f.sampler, SamplerKind::kClassRebalanced);
  EXPECT_EQ(method_preset(parse_method("db_focal")).f.loss, LossKind::kDbFocal);
}

TEST(Presets, OursAndModifiers) {
  const auto ours = method_preset(parse_method("ours"));
  EXPECT_TRUE(ours.two_branch);
  EXPECT_TRUE(ours.stitch.active());
  EXPECT_EQ(ours.pl.mode, PseudoLabelMode::kCross);
  EXPECT_EQ(ours.f.sampler, SamplerKind::kUniform);
  EXPECT_EQ(ours.g.sampler, SamplerKind::kClassRebalanced);
  EXPECT_EQ(ours.f.batch, 32u);
  EXPECT_EQ(ours.g.batch, 256u);
  EXPECT_EQ(ours.tau, 0.1);
  const auto base = method_preset(parse_method("two_branch_baseline"));
  EXPECT_FALSE(base.stitch.active());
  EXPECT_EQ(base.pl.mode, PseudoLabelMode::kOff);
  const auto both = method_preset(parse_method("two_branch_baseline+stitch+pl"));
  EXPECT_EQ(config_fingerprint(both), config_fingerprint(ours));
  EXPECT_EQ(method_preset(parse_method("mixup_ablation")).augment, AugmentKind::kMixup);
  EXPECT_THROW(parse_method("nope"), ConfigError);
}

TEST(Ablation, MatrixSizes) {
  EXPECT_EQ(ablation_variants(AblationKind::kKSweep).size(), 4u);
  EXPECT_EQ(ablation_variants(AblationKind::kSamplingPrior).size(), 9u);
  EXPECT_EQ(ablation_variants(AblationKind::kComponents).size(), 4u);
  EXPECT_EQ(ablation_variants(AblationKind::kStitchMode).size(), 4u);
  bool p0 = false;
  for (const auto& v : ablation_variants(AblationKind::kPSweep)) p0 |= v.keys.at("stitch.p") == "0";
  EXPECT_TRUE(p0);
  const auto exp = parse_experiment({{"experiment.seeds", "0,1,2"}, {"experiment.gammas", "0.3,0.5"}});
  EXPECT_EQ(ablation_matrix(AblationKind::kKSweep, exp).size(), 4u * 3 * 2);
  for (auto k : {AblationKind::kComponents, AblationKind::kKSweep, AblationKind::kPSweep, AblationKind::kStitchMode,
                 AblationKind::kSamplingPrior, AblationKind::kSelfVsCross, AblationKind::kMixup}) {
    EXPECT_EQ(ablation_kind_from_string(to_string(k)), k);
    for (const auto& r : ablation_matrix(k, exp)) EXPECT_NO_THROW(r.train.validate()) << r.label;
  }
}

TEST(Ablation, VariantsApplyTheirKeys) {
  const auto exp = parse_experiment({{"experiment.seeds", "0"}});
  for (const auto& r : ablation_matrix(AblationKind::kSamplingPrior, exp)) {
    if (r.label == "B+B_cross") {
      EXPECT_EQ(r.train.f.sampler, SamplerKind::kClassRebalanced);
      EXPECT_EQ(r.train.g.sampler, SamplerKind::kClassRebalanced);
      EXPECT_EQ(r.train.pl.mode, PseudoLabelMode::kCross);
    }
    if (r.label == "R+R_off") EXPECT_EQ(r.train.g.sampler, SamplerKind::kUniform);
  }
  for (const auto& r : ablation_matrix(AblationKind::kKSweep, exp)) EXPECT_EQ(r.label, "k=" + std::to_string(r.train.stitch.k));
}

TEST(Runs, ExpansionOrder) {
  const auto exp = parse_experiment({{"experiment.methods", "erm,ours"}, {"experiment.gammas", "0.3,0.7"},
                                     {"experiment.seeds", "4,5"}});
  const auto runs = expand_runs(exp);
  ASSERT_EQ(runs.size(), 8u);
  EXPECT_EQ(runs[0].method, "erm");
  EXPECT_EQ(runs[0].gamma, 0.3);
  EXPECT_EQ(runs[1].seed, 5u);
  EXPECT_EQ(runs[4].method, "ours");
}

TEST(Aggregate, MeanAndInterval) {
  std::vector<MetricsRow> rows;
  const double v[] = {0.5, 0.6, 0.7, 0.2};
  for (int i = 0; i < 3; ++i) {
    MetricsRow r;
    r.label = "a";
    r.gamma = 0.5;
    r.seed = i;
    r.map_total = v[i];
    r.map_tail = v[i] / 2;
    rows.push_back(r);
  }
  MetricsRow other;
  other.label = "b";
  other.map_total = v[3];
  rows.push_back(other);
  const auto agg = aggregate(rows);
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_EQ(agg[0].label, "a");
  EXPECT_EQ(agg[0].n, 3u);
  EXPECT_NEAR(agg[0].map_total.mean, 0.6, 1e-15);
  EXPECT_NEAR(agg[0].map_total.ci95, 1.96 * 0.1 / std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(agg[0].map_tail.mean, 0.3, 1e-15);
  EXPECT_EQ(agg[0].map_head.n, 0u);
  EXPECT_EQ(agg[1].map_total.ci95, 0.0);
}

TEST(Csv, FieldQuoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(format_number(0.1), "0.1");
}

TEST(Csv, MetricsAndAggregateRoundTrip) {
  const auto dir = scratch("csv");
  fs::create_directories(dir);
  std::vector<MetricsRow> rows(2);
  rows[0].label = "two_branch_baseline+pl";
  rows[0].method = "two_branch_baseline+pl";
  rows[0].gamma = 0.5;
  rows[0].map_total = 0.123456789012345;
  rows[0].map_head = 0.3;
  rows[0].map_f = 0.1;
  rows[0].iterations = 17;
  rows[1].label = "odd, \"label\"";
  rows[1].method = "erm";
  rows[1].seed = 9;
  rows[1].map_total = 1.0 / 3.0;
  write_metrics_csv(rows, dir / "m.csv");
  EXPECT_EQ(read_metrics_csv(dir / "m.csv"), rows);
  const auto agg = aggregate(rows);
  write_aggregate_csv(agg, dir / "a.csv");
  const auto back = read_aggregate_csv(dir / "a.csv");
  ASSERT_EQ(back.size(), agg.size());
  EXPECT_EQ(back[1].label, agg[1].label);
  EXPECT_EQ(back[0].map_total.mean, agg[0].map_total.mean);
  EXPECT_NE(slurp(dir / "m.csv").find("\r\n"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Batch, CleanErmBeatsChance) {
  const auto out = scratch("erm");
  KeyValues kv = small_keys(out);
  kv["experiment.methods"] = "erm";
  kv["experiment.gammas"] = "0";
  kv["data.dim"] = "16";
  kv["data.test_per_class"] = "30";
  kv["train.epochs"] = "6";
  kv["lr.base"] = "0.5";
  const auto exp = parse_experiment(kv);
  std::ostringstream log;
  const auto b = run_batch(expand_runs(exp), exp, log);
  ASSERT_TRUE(b.failures.empty());
  ASSERT_EQ(b.rows.size(), 2u);
  // chance AP of a class is about its test prevalence
  const auto data = load_dataset(out / "data" / ("gamma_" + gamma_tag(0.0) + "_seed_0"));
  double chance = 0;
  for (std::size_t k = 0; k < data.num_classes; ++k) {
    double pos = 0;
    for (const auto& t : data.test) pos += t.clean[k];
    chance += pos / static_cast<double>(data.test.size()) / static_cast<double>(data.num_classes);
  }
  for (const auto& r : b.rows) EXPECT_GT(r.map_total, chance + 0.1) << r.seed << " chance " << chance;
  for (const char* f : {"metrics.csv", "aggregate.csv", "summary.txt", "timing.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_FALSE(fs::exists(out / "error_manifest.json"));
  const auto rd = out / "runs" / "erm" / ("gamma_" + gamma_tag(0.0)) / "seed_0";
  for (const char* f : {"model.bin", "metrics.csv", "noise_level.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(rd / f)) << f;
  const auto m = nlohmann::json::parse(slurp(rd / "manifest.json"));
  EXPECT_EQ(m["status"], "complete");
  fs::remove_all(out);
}

TEST(Batch, ByteReproducibleArtifacts) {
  const auto a = scratch("repro_a"), b = scratch("repro_b");
  for (const auto& out : {a, b}) {
    KeyValues kv = small_keys(out);
    kv["experiment.methods"] = "erm,ours";
    const auto exp = parse_experiment(kv);
    std::ostringstream log;
    run_batch(expand_runs(exp), exp, log);
  }
  for (const char* f : {"metrics.csv", "aggregate.csv", "summary.txt"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Batch, ResumeReusesFinishedRuns) {
  const auto out = scratch("resume");
  KeyValues kv = small_keys(out);
  kv["experiment.methods"] = "ours";
  kv["experiment.seeds"] = "0";
  auto exp = parse_experiment(kv);
  std::ostringstream log;
  const auto first = run_batch(expand_runs(exp), exp, log);
  const std::string before = slurp(out / "metrics.csv");
  exp.resume = true;
  const auto second = run_batch(expand_runs(exp), exp, log);
  EXPECT_EQ(first.rows[0].map_total, second.rows[0].map_total);
  EXPECT_EQ(slurp(out / "metrics.csv"), before);
  fs::remove_all(out);
}

TEST(Batch, FailuresWriteErrorManifest) {
  const auto out = scratch("fail");
  KeyValues kv = small_keys(out);
  kv["experiment.methods"] = "erm";
  kv["experiment.seeds"] = "0";
  kv["lr.base"] = "1e250";
  const auto exp = parse_experiment(kv);
  std::ostringstream log;
  const auto b = run_batch(expand_runs(exp), exp, log);
  ASSERT_EQ(b.failures.size(), 1u);
  EXPECT_NE(b.failures[0].error.find("diverged"), std::string::npos);
  ASSERT_TRUE(fs::exists(out / "error_manifest.json"));
  const auto j = nlohmann::json::parse(slurp(out / "error_manifest.json"));
  EXPECT_FALSE(j.dump().find("erm") == std::string::npos);
  fs::remove_all(out);
}

TEST(Batch, StoredDatasetMismatchRejected) {
  const auto out = scratch("datamismatch");
  KeyValues kv = small_keys(out);
  kv["experiment.methods"] = "erm";
  kv["experiment.seeds"] = "0";
  kv["train.epochs"] = "0";
  std::ostringstream log;
  {
    const auto exp = parse_experiment(kv);
    run_batch(expand_runs(exp), exp, log);
  }
  kv["data.token_noise_sigma"] = "0.9";
  const auto exp = parse_experiment(kv);
  EXPECT_THROW(run_batch(expand_runs(exp), exp, log), ConfigError);
  fs::remove_all(out);
}

TEST(Trials, NoiseDiffersCleanFixed) {
  GeneratorConfig g;
  g.num_classes = 6;
  g.dim = 8;
  g.max_count = 60;
  g.min_count = 3;
  g.groups = 2;
  const auto a = trial_dataset(g, 0.5, 0);
  const auto b = trial_dataset(g, 0.5, 1);
  ASSERT_EQ(a.train.size(), b.train.size());
  bool same_noisy = true;
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].clean, b.train[i].clean);
    same_noisy &= a.train[i].noisy == b.train[i].noisy;
  }
  EXPECT_FALSE(same_noisy);
  EXPECT_NE(trial_noise_seed(g, 0), trial_noise_seed(g, 1));
}

TEST(Plots, SvgOutputs) {
  std::vector<NoiseLevelRecord> recs(3);
  for (std::size_t i = 0; i < 3; ++i) {
    recs[i].iteration = 10 * (i + 1);
    recs[i].stream = "all";
    recs[i].noise_total = 0.3 - 0.05 * i;
  }
  const auto svg = noise_plot_svg({{"ours", recs}}, "all");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("ours"), std::string::npos);
  AggregateRow r;
  r.label = "erm";
  r.n = 2;
  r.map_total = {0.5, 0.01, 2};
  EXPECT_NE(aggregate_plot_svg({r}).find("erm"), std::string::npos);
}
