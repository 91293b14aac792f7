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

// Binary checkpoint layout (all integers little-endian):
//
//   bytes 0..7    magic "EFQCKPT\0"
//   u32           format version (kCheckpointVersion)
//   u32           header length H
//   H bytes       JSON header: network, metadata, quantizer settings,
//                 Adam step counters, and the ordered array directory
//   payload       each array as float32 in directory order
//   u64           FNV-1a 64 of every preceding byte
//
// Array names: "layer<i>.weight|bias|gamma|beta|running_mean|running_var",
// "layer<i>.weight.scale|log2_scale" and "layer<i>.input.scale|zero_point|
// log2_scale" for quantizers, "sgd/<param>" and "adam/<key>/m|v" for
// optimizer state.

#ifndef EFQAT_CHECKPOINT_HPP_
#define EFQAT_CHECKPOINT_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efqat/model.hpp"
#include "efqat/optim.hpp"

namespace efqat {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string kind;         // fp | ptq | final
  std::string mode;         // training mode that produced it
  std::string parent_hash;  // hash of the checkpoint this run started from
  std::uint64_t seed = 0;
  double ratio = 1.0;
  std::optional<double> eval_accuracy;

  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  NetSpec net;
  CheckpointMeta meta;
  Model model;
  bool has_optimizer = false;
  std::map<std::string, Tensor> sgd;
  std::map<std::string, Adam::Slot> adam;
};

Checkpoint make_checkpoint(const Model& model, CheckpointMeta meta, const Sgd* sgd = nullptr,
                           const Adam* adam = nullptr);
void restore_optimizer(const Checkpoint& ckpt, Sgd& sgd, Adam& adam);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, future version, hash mismatch or
/// inconsistent arrays. `source` names the input in messages.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source = "checkpoint");

/// Writes the file and returns its content hash.
std::string save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
/// 16 hex digits of the trailing FNV-1a hash.
std::string checkpoint_hash(std::span<const std::uint8_t> bytes);
std::string file_hash(const std::string& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace efqat

#endif  // EFQAT_CHECKPOINT_HPP_
