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

#include "stitchlearn/dataset_io.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "stitchlearn/binio.hpp"

namespace stitchlearn {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr char kSamplesMagic[8] = {'S', 'T', 'L', 'S', 'M', 'P', '0', '1'};
constexpr std::uint32_t kSamplesVersion = 1;
constexpr int kMetaVersion = 1;

json generator_to_json(const GeneratorConfig& c) {
  return {{"num_classes", c.num_classes},
          {"dim", c.dim},
          {"pareto_exponent", c.pareto_exponent},
          {"max_count", c.max_count},
          {"min_count", c.min_count},
          {"groups", c.groups},
          {"background_tokens", c.background_tokens},
          {"token_noise_sigma", c.token_noise_sigma},
          {"background_scale", c.background_scale},
          {"cooccur_prob", c.cooccur_prob},
          {"test_per_class", c.test_per_class},
          {"max_train_samples", c.max_train_samples},
          {"seed", c.seed}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig c;
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.pareto_exponent = j.at("pareto_exponent").get<double>();
  c.max_count = j.at("max_count").get<std::size_t>();
  c.min_count = j.at("min_count").get<std::size_t>();
  c.groups = j.at("groups").get<std::size_t>();
  c.background_tokens = j.at("background_tokens").get<std::size_t>();
  c.token_noise_sigma = j.at("token_noise_sigma").get<double>();
  c.background_scale = j.at("background_scale").get<double>();
  c.cooccur_prob = j.at("cooccur_prob").get<double>();
  c.test_per_class = j.at("test_per_class").get<std::size_t>();
  c.max_train_samples = j.at("max_train_samples").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void write_labels(const fs::path& path, const DatasetBundle& b, bool clean) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "sample_id";
  for (std::size_t k = 0; k < b.num_classes; ++k) os << ",c" << k;
  os << "\r\n";
  auto emit = [&](const TokenBagSample& s, const Label& y) {
    os << s.sample_id;
    for (auto v : y) os << ',' << static_cast<int>(v);
    os << "\r\n";
  };
  for (const auto& s : b.train) emit(s, clean ? s.clean : s.noisy);
  for (const auto& s : b.test) emit(s, s.clean);
}

std::vector<std::pair<std::size_t, Label>> read_labels(const fs::path& path, std::size_t c) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<std::pair<std::size_t, Label>> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::pair<std::size_t, Label> row;
    row.first = std::stoull(cell);
    while (std::getline(ss, cell, ',')) {
      if (cell != "0" && cell != "1") throw FormatError(path.string() + ": non-binary label cell");
      row.second.push_back(cell == "1" ? 1 : 0);
    }
    if (row.second.size() != c) throw FormatError(path.string() + ": wrong column count");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void save_dataset(const DatasetBundle& b, const fs::path& dir) {
  fs::create_directories(dir);

  json meta;
  meta["format_version"] = kMetaVersion;
  meta["num_classes"] = b.num_classes;
  meta["dim"] = b.dim;
  meta["gamma"] = b.gamma;
  meta["seed"] = b.seed;
  meta["noise_seed"] = b.noise_seed;
  meta["num_train"] = b.train.size();
  meta["num_test"] = b.test.size();
  meta["generator"] = generator_to_json(b.config);
  meta["split"] = {{"head", b.split.head}, {"medium", b.split.medium}, {"tail", b.split.tail}};
  const auto shift = label_shift(b.train, b.num_classes);
  meta["class_counts_clean"] = shift.clean_counts;
  meta["class_counts_noisy"] = shift.noisy_counts;
  meta["flipped_positives"] = shift.flipped_positives;
  meta["spurious_positives"] = shift.spurious_positives;
  json classes = json::array();
  for (const auto& c : b.classes) {
    classes.push_back({{"class_id", c.class_id},
                       {"group_id", c.group_id},
                       {"target_count", c.target_count},
                       {"prototype", c.prototype}});
  }
  meta["classes"] = classes;
  {
    std::ofstream os(dir / "meta.json", std::ios::binary);
    if (!os) throw FormatError("cannot write meta.json");
    os << meta.dump(2) << '\n';
  }

  {
    std::ofstream os(dir / "samples.bin", std::ios::binary);
    if (!os) throw FormatError("cannot write samples.bin");
    os.write(kSamplesMagic, sizeof(kSamplesMagic));
    binio::put<std::uint32_t>(os, kSamplesVersion);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(b.dim));
    binio::put<std::uint64_t>(os, b.train.size());
    binio::put<std::uint64_t>(os, b.test.size());
    auto emit = [&](const TokenBagSample& s) {
      binio::put<std::uint64_t>(os, s.sample_id);
      binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.tokens.size()));
      for (const auto& t : s.tokens) {
        if (t.size() != b.dim) throw FormatError("save_dataset: token width != dim");
        binio::put_doubles(os, t);
      }
    };
    for (const auto& s : b.train) emit(s);
    for (const auto& s : b.test) emit(s);
  }

  write_labels(dir / "labels_clean.csv", b, true);
  write_labels(dir / "labels_noisy.csv", b, false);
}

DatasetBundle load_dataset(const fs::path& dir) {
  DatasetBundle b;
  json meta;
  {
    std::ifstream is(dir / "meta.json", std::ios::binary);
    if (!is) throw FormatError("cannot read " + (dir / "meta.json").string());
    try {
      is >> meta;
    } catch (const json::exception& e) {
      throw FormatError(std::string("meta.json: ") + e.what());
    }
  }
  std::size_t num_train = 0;
  std::size_t num_test = 0;
  try {
    if (meta.at("format_version").get<int>() != kMetaVersion) {
      throw FormatError("meta.json: unsupported format_version");
    }
    b.num_classes = meta.at("num_classes").get<std::size_t>();
    b.dim = meta.at("dim").get<std::size_t>();
    b.gamma = meta.at("gamma").get<double>();
    b.seed = meta.at("seed").get<std::uint64_t>();
    b.noise_seed = meta.at("noise_seed").get<std::uint64_t>();
    b.config = generator_from_json(meta.at("generator"));
    b.split.head = meta.at("split").at("head").get<std::vector<std::size_t>>();
    b.split.medium = meta.at("split").at("medium").get<std::vector<std::size_t>>();
    b.split.tail = meta.at("split").at("tail").get<std::vector<std::size_t>>();
    for (const auto& c : meta.at("classes")) {
      ClassSpec spec;
      spec.class_id = c.at("class_id").get<std::size_t>();
      spec.group_id = c.at("group_id").get<std::size_t>();
      spec.target_count = c.at("target_count").get<std::size_t>();
      spec.prototype = c.at("prototype").get<Vec>();
      b.classes.push_back(std::move(spec));
    }
    num_train = meta.at("num_train").get<std::size_t>();
    num_test = meta.at("num_test").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("meta.json: ") + e.what());
  }

  {
    std::ifstream is(dir / "samples.bin", std::ios::binary);
    if (!is) throw FormatError("cannot read samples.bin");
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kSamplesMagic)) {
      throw FormatError("samples.bin: bad magic");
    }
    try {
      if (binio::get<std::uint32_t>(is) != kSamplesVersion) {
        throw FormatError("samples.bin: unsupported version");
      }
      if (binio::get<std::uint32_t>(is) != b.dim) throw FormatError("samples.bin: dim mismatch");
      if (binio::get<std::uint64_t>(is) != num_train || binio::get<std::uint64_t>(is) != num_test) {
        throw FormatError("samples.bin: sample counts disagree with meta.json");
      }
      auto read_one = [&]() {
        TokenBagSample s;
        s.sample_id = binio::get<std::uint64_t>(is);
        const auto n = binio::get<std::uint32_t>(is);
        s.tokens.assign(n, Token(b.dim));
        for (auto& t : s.tokens) binio::get_doubles(is, t);
        return s;
      };
      for (std::size_t i = 0; i < num_train; ++i) b.train.push_back(read_one());
      for (std::size_t i = 0; i < num_test; ++i) b.test.push_back(read_one());
    } catch (const FormatError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw FormatError(std::string("samples.bin: ") + e.what());
    }
  }

  const auto clean = read_labels(dir / "labels_clean.csv", b.num_classes);
  const auto noisy = read_labels(dir / "labels_noisy.csv", b.num_classes);
  if (clean.size() != num_train + num_test || noisy.size() != clean.size()) {
    throw FormatError("label files disagree with samples.bin row count");
  }
  auto attach = [&](TokenBagSample& s, std::size_t row) {
    if (clean[row].first != s.sample_id || noisy[row].first != s.sample_id) {
      throw FormatError("label files: sample_id order mismatch at row " + std::to_string(row));
    }
    s.clean = clean[row].second;
    s.noisy = noisy[row].second;
  };
  for (std::size_t i = 0; i < num_train; ++i) attach(b.train[i], i);
  for (std::size_t i = 0; i < num_test; ++i) attach(b.test[i], num_train + i);
  return b;
}

namespace {
bool samples_equal(const std::vector<TokenBagSample>& a, const std::vector<TokenBagSample>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].sample_id != b[i].sample_id || a[i].clean != b[i].clean ||
        a[i].noisy != b[i].noisy || a[i].tokens.size() != b[i].tokens.size()) {
      return false;
    }
    for (std::size_t t = 0; t < a[i].tokens.size(); ++t) {
      const auto& x = a[i].tokens[t];
      const auto& y = b[i].tokens[t];
      if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) {
        return false;
      }
    }
  }
  return true;
}
}  // namespace

bool datasets_equal(const DatasetBundle& a, const DatasetBundle& b) {
  if (a.num_classes != b.num_classes || a.dim != b.dim || a.seed != b.seed ||
      a.noise_seed != b.noise_seed || std::memcmp(&a.gamma, &b.gamma, sizeof(double)) != 0) {
    return false;
  }
  if (a.split.head != b.split.head || a.split.medium != b.split.medium ||
      a.split.tail != b.split.tail || a.classes.size() != b.classes.size()) {
    return false;
  }
  for (std::size_t k = 0; k < a.classes.size(); ++k) {
    const auto& x = a.classes[k];
    const auto& y = b.classes[k];
    if (x.class_id != y.class_id || x.group_id != y.group_id || x.target_count != y.target_count ||
        x.prototype != y.prototype) {
      return false;
    }
  }
  return samples_equal(a.train, b.train) && samples_equal(a.test, b.test);
}

}  // namespace stitchlearn
