// Copyright 2026 The efqat Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EFQAT_DATASET_HPP_
#define EFQAT_DATASET_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "efqat/tensor.hpp"

namespace efqat {

/// In-memory classification set: row-major samples of `sample_shape`.
struct Dataset {
  Shape sample_shape;
  std::vector<float> features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t sample_numel() const noexcept { return shape_numel(sample_shape); }
  std::size_t num_classes() const;

  Tensor batch_inputs(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Dataset slice(std::size_t begin, std::size_t count) const;
  /// Throws ContractError when features/labels/shape are inconsistent.
  void validate() const;
};

struct DataSplit {
  Dataset train;
  Dataset eval;
};

/// Seeded Gaussian-blob classes. For image shapes [C×H×W] each class is a sum
/// of random 2-D Gaussian bumps, jittered by up to `shift` pixels per sample;
/// for flat shapes [D] each class is a Gaussian cluster around a random center.
struct SyntheticSpec {
  std::size_t classes = 32;
  Shape shape{1, 12, 12};
  std::size_t train_size = 8192;
  std::size_t eval_size = 4096;
  double noise = 0.4;
  std::size_t blobs = 2;
  std::size_t shift = 1;
  double separation = 1.0;
  std::uint64_t seed = 7;
};

DataSplit make_synthetic(const SyntheticSpec& spec);

/// IDX pair: images (magic 0x00000803, u8 pixels scaled to [0, 1], shape
/// [N×1×rows×cols]) and labels (magic 0x00000801). `source` names the inputs
/// in error messages.
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                  const std::string& source = "idx");
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

struct CsvOptions {
  bool header = true;
  /// Column holding the integer label: a header name, a 0-based index, or
  /// empty for the last column.
  std::string label_column;
};

Dataset parse_csv(std::string_view text, const CsvOptions& options = {}, const std::string& source = "csv");
Dataset load_csv(const std::string& path, const CsvOptions& options = {});

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace efqat

#endif  // EFQAT_DATASET_HPP_
