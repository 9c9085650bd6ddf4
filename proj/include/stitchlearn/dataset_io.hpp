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

// On-disk dataset layout (one directory):
//
//   meta.json         C, d, gamma, seeds, generator config, split sets,
//                     per-class positive counts before/after corruption,
//                     class prototypes.
//   samples.bin       "STLSMP01", u32 version, u32 dim, u64 num_train,
//                     u64 num_test, then per sample (train first, then test):
//                     u64 sample_id, u32 token_count, token_count*dim f64.
//                     Everything little-endian.
//   labels_clean.csv  sample_id,c0..c{C-1}
//   labels_noisy.csv  same columns; test rows repeat the clean labels.
//
// Doubles are stored bit-exactly, so save/load round-trips.

#ifndef STITCHLEARN_DATASET_IO_HPP_
#define STITCHLEARN_DATASET_IO_HPP_

#include <filesystem>
#include <stdexcept>

#include "stitchlearn/synthgen.hpp"

namespace stitchlearn {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_dataset(const std::filesystem::path& dir);

bool datasets_equal(const DatasetBundle& a, const DatasetBundle& b);

}  // namespace stitchlearn

#endif  // STITCHLEARN_DATASET_IO_HPP_
