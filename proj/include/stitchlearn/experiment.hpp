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

// Experiment runner: config parsing, method presets, the ablation matrix,
// multi-seed execution and the CSV / JSON / text artifacts.
//
// Config files are INI ("key = value" under [section]); every setting is
// addressed by its flat dotted key, e.g. stitch.k or loss.db.lambda, and the
// same keys work as --set overrides. A method preset fixes the structural
// settings (branches, samplers, losses, stitch, pseudo-labels); explicit keys
// are applied on top of it.
//
// Output layout under the experiment out dir:
//   data/gamma_<g>_seed_<s>/           dataset (written if absent)
//   runs/<label>/gamma_<g>/seed_<s>/   checkpoint.bin model.bin metrics.csv
//                                      noise_level.csv manifest.json
//   metrics.csv aggregate.csv summary.txt   (byte-reproducible)
//   timing.csv                              wall time, not reproducible
//   error_manifest.json                     only when some run failed

#ifndef STITCHLEARN_EXPERIMENT_HPP_
#define STITCHLEARN_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stitchlearn/colearn.hpp"
#include "stitchlearn/synthgen.hpp"

namespace stitchlearn {

enum class Method : std::uint8_t {
  kOurs,
  kErm,
  kFocal,
  kRs,
  kRsFocal,
  kDb,
  kDbFocal,
  kTwoBranchBaseline,
  kMixupAblation,
};
std::string to_string(Method m);
Method method_from_string(const std::string& s);

// A method name with optional "+stitch" / "+pl" modifiers, e.g.
// "two_branch_baseline+pl".
struct MethodSpec {
  Method base = Method::kOurs;
  bool add_stitch = false;
  bool add_pl = false;
  std::string label() const;
};
MethodSpec parse_method(const std::string& s);
TrainConfig method_preset(const MethodSpec& m);

// Flat "section.key" -> raw value.
using KeyValues = std::map<std::string, std::string>;

KeyValues read_config_file(const std::filesystem::path& path);
KeyValues read_config_text(const std::string& text);
// "key=value"; throws ConfigError on a malformed assignment.
void apply_assignment(KeyValues& kv, const std::string& assignment);

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
  bool reference_default = false;  // value taken from the reference training protocol
};
// Every recognised key, in help order.
const std::vector<ConfigKey>& config_keys();
std::string config_help();

struct ExperimentConfig {
  GeneratorConfig data;
  std::vector<double> gammas{0.5};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::string> methods{"ours"};
  // Training keys, applied to every run after the method preset.
  KeyValues train_keys;
  std::filesystem::path out_dir{"runs"};
  // When set, every run trains on this saved dataset instead of generating.
  std::filesystem::path data_dir;
  std::size_t jobs = 1;     // concurrent runs
  std::size_t threads = 0;  // per-run workers, 0 = STITCHLEARN_THREADS
  bool resume = false;      // reuse finished runs and resume from checkpoints

  // gamma in [0,1], seeds and methods non-empty, every method parses and
  // every training key applies. Throws ConfigError naming the field.
  void validate() const;
};

// Throws ConfigError ("<key>: <reason>") on unknown keys or bad values.
ExperimentConfig parse_experiment(const KeyValues& kv);
void apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value);

struct RunSpec {
  std::string label;   // run-group name used in paths and aggregate rows
  std::string method;  // method string as parsed
  double gamma = 0.5;
  std::uint64_t seed = 0;
  TrainConfig train;
};

TrainConfig build_train_config(const MethodSpec& m, const ExperimentConfig& exp, std::uint64_t seed);
// methods x gammas x seeds, in that nesting order.
std::vector<RunSpec> expand_runs(const ExperimentConfig& exp);

enum class AblationKind : std::uint8_t {
  kComponents,
  kKSweep,
  kPSweep,
  kStitchMode,
  kSamplingPrior,
  kSelfVsCross,
  kMixup,
};
std::string to_string(AblationKind k);
AblationKind ablation_kind_from_string(const std::string& s);

struct AblationVariant {
  std::string label;
  std::string method;
  KeyValues keys;  // applied after the experiment's own training keys
};
std::vector<AblationVariant> ablation_variants(AblationKind kind);
// Variants x gammas x seeds.
std::vector<RunSpec> ablation_matrix(AblationKind kind, const ExperimentConfig& base);

struct MetricsRow {
  std::string label;
  std::string method;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  double map_total = 0.0;
  std::optional<double> map_head;
  std::optional<double> map_medium;
  std::optional<double> map_tail;
  std::optional<double> map_f;  // branch f alone (tau = 1), two-branch runs only
  std::optional<double> map_g;  // branch g alone (tau = 0)
  std::size_t iterations = 0;
  std::size_t reduced = 0;
  std::size_t introduced = 0;
  double wall_seconds = 0.0;  // kept out of metrics.csv
  bool operator==(const MetricsRow&) const = default;
};

// Noise seed of a trial: the clean benchmark is fixed by data.seed, the
// corruption and the training differ per trial seed.
std::uint64_t trial_noise_seed(const GeneratorConfig& data, std::uint64_t seed);
DatasetBundle trial_dataset(const GeneratorConfig& data, double gamma, std::uint64_t seed);

std::string gamma_tag(double gamma);
std::filesystem::path run_dir(const std::filesystem::path& out, const RunSpec& run);

// Trains one run and writes its per-run artifacts. Throws on failure.
MetricsRow execute_run(const RunSpec& run, const DatasetBundle& data, const std::filesystem::path& dir,
                       bool resume);

struct RunFailure {
  std::string label;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  std::string error;
};

struct BatchOutcome {
  std::vector<MetricsRow> rows;  // run order
  std::vector<RunFailure> failures;
};

// Runs every spec (datasets cached under out/data) and writes the top-level
// artifacts. Progress lines go to `log`.
BatchOutcome run_batch(const std::vector<RunSpec>& runs, const ExperimentConfig& exp, std::ostream& log);

struct AggregateRow {
  std::string label;
  std::string method;
  double gamma = 0.0;
  std::size_t n = 0;
  // mean and half-width 1.96 * sd / sqrt(n) (sample sd; 0 when n == 1)
  struct Stat {
    double mean = 0.0;
    double ci95 = 0.0;
    std::size_t n = 0;  // rows that had the value
  };
  Stat map_total, map_head, map_medium, map_tail, map_f, map_g;
};

// Groups by (label, gamma) in first-appearance order.
std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows);

// CSV (RFC 4180, CRLF line ends). Optional values are empty fields.
std::string csv_field(const std::string& s);
std::string format_number(double v);
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);
void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::filesystem::path& path);
std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path);
std::string summary_table(const std::vector<AggregateRow>& rows);
void write_history_csv(const TrainHistory& h, const std::filesystem::path& path);
void write_noise_csv(const std::vector<NoiseLevelRecord>& records, const std::filesystem::path& path);
std::vector<NoiseLevelRecord> read_noise_csv(const std::filesystem::path& path);

// SVG line chart of the noise_total of one stream for several labelled runs.
std::string noise_plot_svg(const std::vector<std::pair<std::string, std::vector<NoiseLevelRecord>>>& series,
                           const std::string& stream);
// SVG bar chart of aggregate map_total with 95% whiskers.
std::string aggregate_plot_svg(const std::vector<AggregateRow>& rows);

}  // namespace stitchlearn

#endif  // STITCHLEARN_EXPERIMENT_HPP_
