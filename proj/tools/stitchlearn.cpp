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

// stitchlearn: gen-data, train, eval, ablate, aggregate, plot.
//
// Exit codes: 0 ok, 1 runtime failure, 2 invalid config or usage,
// 3 some runs failed (partial artifacts plus error_manifest.json).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stitchlearn/colearn.hpp"
#include "stitchlearn/dataset_io.hpp"
#include "stitchlearn/experiment.hpp"

namespace fs = std::filesystem;
using namespace stitchlearn;

namespace {

struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::string> seeds;
  std::vector<std::string> gammas;
  std::vector<std::string> methods;
  std::string out;
  std::size_t jobs = 0;
  bool resume = false;
};

void add_common(CLI::App* app, CommonOpts& o, bool with_method) {
  app->add_option("--config", o.config, "INI config file");
  app->add_option("--set", o.sets, "override, section.key=value (repeatable)");
  app->add_option("--seed", o.seeds, "trial seed(s); five trials 0..4 is the reference protocol default")
      ->delimiter(',');
  app->add_option("--gamma", o.gammas, "noise rate(s), default 0.5")->delimiter(',');
  if (with_method) {
    app->add_option("--method", o.methods,
                    "ours erm focal rs rs_focal db db_focal two_branch_baseline mixup_ablation (+stitch, +pl)")
        ->delimiter(',');
  }
  app->add_option("--out", o.out, "output directory");
  app->add_option("--jobs", o.jobs, "runs executed concurrently");
  app->add_flag("--resume", o.resume, "reuse finished runs and resume from checkpoints");
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

ExperimentConfig load_experiment(const CommonOpts& o) {
  KeyValues kv;
  if (!o.config.empty()) kv = read_config_file(o.config);
  for (const auto& s : o.sets) apply_assignment(kv, s);
  if (!o.seeds.empty()) kv["experiment.seeds"] = join(o.seeds);
  if (!o.gammas.empty()) kv["experiment.gammas"] = join(o.gammas);
  if (!o.methods.empty()) kv["experiment.methods"] = join(o.methods);
  if (!o.out.empty()) kv["experiment.out"] = o.out;
  if (o.jobs) kv["experiment.jobs"] = std::to_string(o.jobs);
  if (o.resume) kv["experiment.resume"] = "true";
  return parse_experiment(kv);
}

int finish(const BatchOutcome& b, const ExperimentConfig& exp) {
  std::cout << summary_table(aggregate(b.rows));
  std::cout << "artifacts in " << exp.out_dir.string() << '\n';
  if (!b.failures.empty()) {
    std::cerr << b.failures.size() << " run(s) failed; see " << (exp.out_dir / "error_manifest.json").string()
              << '\n';
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stitchlearn: multi-label long-tailed noisy-label experiments on a synthetic benchmark"};
  app.require_subcommand(0, 1);
  bool help_config = false;
  app.add_flag("--help-config", help_config, "list every config key with its default");

  CommonOpts gen_o, train_o, ablate_o;
  auto* gen = app.add_subcommand("gen-data", "write the noisy benchmark for one gamma and seed");
  add_common(gen, gen_o, false);

  auto* trn = app.add_subcommand("train", "train methods x gammas x seeds and aggregate");
  add_common(trn, train_o, true);
  std::string data_dir;
  trn->add_option("--data", data_dir, "train on a dataset written by gen-data");

  auto* abl = app.add_subcommand("ablate", "run an ablation matrix");
  add_common(abl, ablate_o, false);
  std::string kind;
  abl->add_option("--kind", kind,
                  "components | k_sweep | p_sweep | stitch_mode | sampling_prior | self_vs_cross | mixup")
      ->required();

  auto* ev = app.add_subcommand("eval", "mAP of a saved model on a dataset's test split");
  std::string model_path, eval_data, eval_out;
  double tau = 0.1;
  ev->add_option("--model", model_path, "model.bin of a run")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--tau", tau, "ensemble weight of branch f (1 = f only, 0 = g only)");
  ev->add_option("--out", eval_out, "write the report as JSON here");

  auto* agg = app.add_subcommand("aggregate", "aggregate metrics.csv files");
  std::vector<std::string> agg_in;
  std::string agg_out;
  agg->add_option("--in", agg_in, "metrics.csv file(s)")->required();
  agg->add_option("--out", agg_out, "output directory")->required();

  auto* plt = app.add_subcommand("plot", "SVG plots of noise curves or aggregate mAP");
  std::vector<std::string> noise_in;
  std::string agg_csv, plot_out, stream = "all";
  plt->add_option("--noise", noise_in, "label=noise_level.csv (repeatable)");
  plt->add_option("--aggregate", agg_csv, "aggregate.csv");
  plt->add_option("--stream", stream, "f | g | all");
  std::string subset = "total";
  plt->add_option("--subset", subset, "total | head | medium | tail | each (one series per subset)");
  plt->add_option("--out", plot_out, "output .svg")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (help_config) {
      std::cout << config_help();
      return 0;
    }
    if (*gen) {
      ExperimentConfig exp = load_experiment(gen_o);
      if (gen_o.out.empty()) throw ConfigError("--out: required for gen-data");
      const double g = exp.gammas.front();
      const std::uint64_t s = exp.seeds.front();
      const DatasetBundle d = trial_dataset(exp.data, g, s);
      save_dataset(d, gen_o.out);
      std::cout << "wrote " << d.train.size() << " train / " << d.test.size() << " test samples to " << gen_o.out
                << " (gamma " << format_number(g) << ", seed " << s << ")\n";
      return 0;
    }
    if (*trn) {
      ExperimentConfig exp = load_experiment(train_o);
      if (!data_dir.empty()) exp.data_dir = data_dir;
      return finish(run_batch(expand_runs(exp), exp, std::cout), exp);
    }
    if (*abl) {
      ExperimentConfig exp = load_experiment(ablate_o);
      return finish(run_batch(ablation_matrix(ablation_kind_from_string(kind), exp), exp, std::cout), exp);
    }
    if (*ev) {
      const TwoBranchModel m = load_model(model_path);
      const DatasetBundle d = load_dataset(eval_data);
      const ApResult ap = map_report(m, d.test, d.split, tau);
      nlohmann::json j;
      auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
      j["map_total"] = ap.map_total;
      j["map_head"] = opt(ap.map_head);
      j["map_medium"] = opt(ap.map_medium);
      j["map_tail"] = opt(ap.map_tail);
      j["tau"] = tau;
      j["per_class_ap"] = nlohmann::json::array();
      for (const auto& a : ap.per_class_ap) j["per_class_ap"].push_back(opt(a));
      j["warnings"] = ap.warnings;
      const std::string text = j.dump(2) + "\n";
      if (eval_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream(eval_out) << text;
      }
      return 0;
    }
    if (*agg) {
      std::vector<MetricsRow> rows;
      for (const auto& p : agg_in) {
        auto r = read_metrics_csv(p);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      fs::create_directories(agg_out);
      const auto a = aggregate(rows);
      write_aggregate_csv(a, fs::path(agg_out) / "aggregate.csv");
      std::ofstream(fs::path(agg_out) / "summary.txt") << summary_table(a);
      std::cout << summary_table(a);
      return 0;
    }
    if (*plt) {
      std::string svg;
      if (!agg_csv.empty()) {
        const auto rows = read_aggregate_csv(agg_csv);
        svg = aggregate_plot_svg(rows);
      } else {
        if (noise_in.empty()) throw ConfigError("plot: give --noise label=path or --aggregate path");
        std::vector<std::pair<std::string, std::vector<NoiseLevelRecord>>> series;
        for (const auto& spec : noise_in) {
          const auto eq = spec.find('=');
          const std::string label = eq == std::string::npos ? spec : spec.substr(0, eq);
          const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
          const auto recs = read_noise_csv(path);
          for (const char* sub : {"total", "head", "medium", "tail"}) {
            if (subset != sub && subset != "each") continue;
            std::vector<NoiseLevelRecord> pick;
            for (auto r : recs) {
              const std::string s = sub;
              const std::optional<double> v = s == "total"    ? std::optional<double>(r.noise_total)
                                              : s == "head"   ? r.noise_head
                                              : s == "medium" ? r.noise_medium
                                                              : r.noise_tail;
              if (!v) continue;
              r.noise_total = *v;
              pick.push_back(r);
            }
            series.push_back({subset == "each" ? label + " " + sub : label, std::move(pick)});
          }
        }
        if (series.empty()) throw ConfigError("--subset: expected total|head|medium|tail|each");
        svg = noise_plot_svg(series, stream);
      }
      std::ofstream os(plot_out);
      os << svg;
      if (!os) throw std::runtime_error("cannot write " + plot_out);
      return 0;
    }
    std::cout << app.help();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
