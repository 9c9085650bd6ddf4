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

// Python bindings: a thin layer over the core for scripting and smoke tests.
// Lists in, lists out; datasets are summarised rather than exposed.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "stitchlearn/colearn.hpp"
#include "stitchlearn/evalx.hpp"
#include "stitchlearn/experiment.hpp"
#include "stitchlearn/losses.hpp"
#include "stitchlearn/stitchup.hpp"
#include "stitchlearn/synthgen.hpp"

namespace py = pybind11;
using namespace stitchlearn;

namespace {

py::dict row_dict(const MetricsRow& r) {
  py::dict d;
  d["label"] = r.label;
  d["method"] = r.method;
  d["gamma"] = r.gamma;
  d["seed"] = r.seed;
  d["map_total"] = r.map_total;
  d["map_head"] = r.map_head;
  d["map_medium"] = r.map_medium;
  d["map_tail"] = r.map_tail;
  d["map_f"] = r.map_f;
  d["map_g"] = r.map_g;
  d["iterations"] = r.iterations;
  d["reduced"] = r.reduced;
  d["introduced"] = r.introduced;
  return d;
}

py::dict batch_dict(const BatchOutcome& b) {
  py::list rows, failures;
  for (const auto& r : b.rows) rows.append(row_dict(r));
  for (const auto& f : b.failures) {
    py::dict d;
    d["label"] = f.label;
    d["gamma"] = f.gamma;
    d["seed"] = f.seed;
    d["error"] = f.error;
    failures.append(d);
  }
  py::dict out;
  out["rows"] = rows;
  out["failures"] = failures;
  return out;
}

ExperimentConfig experiment_from(const KeyValues& keys) {
  return parse_experiment(keys);
}

py::tuple loss_tuple(const LossOutput& o) { return py::make_tuple(o.value, o.grad_logits); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "stitchlearn core bindings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DivergedError>(m, "DivergedError", PyExc_RuntimeError);

  m.def("config_help", &config_help, "every config key with its default");

  m.def(
      "average_precision",
      [](const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
        if (s.size() != y.size()) throw std::invalid_argument("scores and labels differ in length");
        return average_precision(s, y);
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "pseudo_label",
      [](double q, std::uint8_t noisy, double alpha, double beta) {
        PseudoLabelConfig c;
        c.alpha = alpha;
        c.beta = beta;
        c.validate();
        return pseudo_label(q, noisy, c);
      },
      py::arg("q"), py::arg("noisy"), py::arg("alpha") = 0.8, py::arg("beta") = 0.2);

  m.def(
      "transition_matrix",
      [](const std::vector<std::vector<std::uint64_t>>& counts, double gamma) {
        CoOccurrenceMatrix n;
        n.num_classes = counts.size();
        for (const auto& row : counts) {
          if (row.size() != counts.size()) throw std::invalid_argument("co-occurrence counts must be square");
          n.counts.insert(n.counts.end(), row.begin(), row.end());
        }
        const auto t = build_transition(n, gamma);
        std::vector<std::vector<double>> out(t.num_classes);
        for (std::size_t i = 0; i < t.num_classes; ++i) out[i].assign(t.row(i).begin(), t.row(i).end());
        return out;
      },
      py::arg("counts"), py::arg("gamma"));

  m.def(
      "label_union", [](const std::vector<Label>& ls) { return label_union(ls); }, py::arg("labels"));

  m.def(
      "bce", [](const Vec& z, const Vec& y) { return loss_tuple(bce(z, y)); }, py::arg("logits"),
      py::arg("targets"));
  m.def(
      "focal",
      [](const Vec& z, const Vec& y, double focusing, double weighting) {
        FocalHyperParams hp;
        hp.focusing = focusing;
        hp.weighting = weighting;
        return loss_tuple(focal(z, y, hp));
      },
      py::arg("logits"), py::arg("targets"), py::arg("focusing") = FocalHyperParams{}.focusing,
      py::arg("weighting") = FocalHyperParams{}.weighting);

  // Summary of the benchmark for one gamma and trial seed; `keys` are data.*
  // settings as in a config file.
  m.def(
      "dataset_summary",
      [](const KeyValues& keys, double gamma, std::uint64_t seed) {
        const ExperimentConfig exp = experiment_from(keys);
        const DatasetBundle d = trial_dataset(exp.data, gamma, seed);
        const auto shift = label_shift(d.train, d.num_classes);
        py::dict out;
        out["num_classes"] = d.num_classes;
        out["dim"] = d.dim;
        out["train_size"] = d.train.size();
        out["test_size"] = d.test.size();
        out["clean_counts"] = shift.clean_counts;
        out["noisy_counts"] = shift.noisy_counts;
        out["flipped_positives"] = shift.flipped_positives;
        out["spurious_positives"] = shift.spurious_positives;
        out["head"] = d.split.head;
        out["medium"] = d.split.medium;
        out["tail"] = d.split.tail;
        return out;
      },
      py::arg("keys") = KeyValues{}, py::arg("gamma") = 0.5, py::arg("seed") = 0);

  // methods x gammas x seeds from experiment.* keys; writes the usual artifacts
  // under experiment.out.
  m.def(
      "run_experiment",
      [](const KeyValues& keys) {
        const ExperimentConfig exp = experiment_from(keys);
        std::ostringstream log;
        BatchOutcome b;
        {
          py::gil_scoped_release release;
          b = run_batch(expand_runs(exp), exp, log);
        }
        return batch_dict(b);
      },
      py::arg("keys"));

  m.def(
      "run_ablation",
      [](const std::string& kind, const KeyValues& keys) {
        const ExperimentConfig exp = experiment_from(keys);
        const auto runs = ablation_matrix(ablation_kind_from_string(kind), exp);
        std::ostringstream log;
        BatchOutcome b;
        {
          py::gil_scoped_release release;
          b = run_batch(runs, exp, log);
        }
        return batch_dict(b);
      },
      py::arg("kind"), py::arg("keys"));

  m.def(
      "read_config",
      [](const std::filesystem::path& p) { return read_config_file(p); }, py::arg("path"));
}
