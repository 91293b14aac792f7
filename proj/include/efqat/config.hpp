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

#ifndef EFQAT_CONFIG_HPP_
#define EFQAT_CONFIG_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "efqat/dataset.hpp"
#include "efqat/netspec.hpp"
#include "efqat/trainer.hpp"

namespace efqat {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | idx | csv
  SyntheticSpec synthetic;
  bool synthetic_seed_set = false;  // otherwise the experiment seed is used
  std::string train_images, train_labels, eval_images, eval_labels;
  std::string train_csv, eval_csv;
  CsvOptions csv;
  /// Tail fraction of the training file held out when no eval file is given.
  double eval_fraction = 0.2;
};

/// Full-precision training used when a run needs an FP model and no
/// checkpoint was supplied.
struct PretrainConfig {
  std::size_t epochs = 4;
  SgdConfig sgd;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "runs/default";
  NetSpec net = NetSpec::reference_cnn(12, 32, 64);
  DatasetConfig data;
  PretrainConfig pretrain;
  TrainConfig train;
  std::string checkpoint;  // starting checkpoint; empty trains FP from scratch when needed
  bool dump_plan = false;  // train: write the final freeze plan to plan.txt
};

ExperimentConfig parse_config(std::string_view text, const std::string& source = "config");
ExperimentConfig load_config(const std::string& path);
/// Fully resolved document; parse_config(config_to_json(c)) == c.
std::string config_to_json(const ExperimentConfig& cfg);

/// Applies one command-line style override. Keys: mode, ratio, freeze-freq,
/// bits-w, bits-a, epochs, seed, lr, qparam-lr, qparam-transform,
/// calib-size, out, checkpoint, batch-size, dump-plan. Throws ConfigError naming the flag and leaves
/// `cfg` unchanged.
void set_option(ExperimentConfig& cfg, const std::string& key, const std::string& value);

}  // namespace efqat

#endif  // EFQAT_CONFIG_HPP_
