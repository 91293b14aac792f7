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

#include "efqat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <deque>
#include <fstream>

#include "efqat/dataset.hpp"
#include "efqat/error.hpp"
#include "json_io.hpp"

namespace efqat {

namespace {

constexpr char kMagic[8] = {'E', 'F', 'Q', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t off, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= std::uint64_t{b[off + i]} << (8 * i);
  return v;
}

json quant_meta(const QuantParams& q) {
  return json{{"bits", q.bits},
              {"symmetric", q.symmetric},
              {"granularity", q.granularity == Granularity::kPerChannel ? "channel" : "tensor"},
              {"axis", q.axis},
              {"transform", to_string(q.transform)}};
}

QuantParams quant_from_meta(const json& j, const std::string& path) {
  StrictObject o(j, path);
  QuantParams q;
  q.bits = o.require<int>("bits");
  q.symmetric = o.require<bool>("symmetric");
  const std::string g = o.require<std::string>("granularity");
  if (g != "channel" && g != "tensor") throw CheckpointError(path + ": bad granularity '" + g + "'");
  q.granularity = g == "channel" ? Granularity::kPerChannel : Granularity::kPerTensor;
  q.axis = o.require<std::size_t>("axis");
  q.transform = parse_scale_transform(o.require<std::string>("transform"));
  o.finish();
  return q;
}

std::vector<float> to_vec(const Tensor& t) { return std::vector<float>(t.data(), t.data() + t.numel()); }

Tensor from_vec(const std::vector<float>& v) { return Tensor({v.size()}, v); }

std::string layer_key(int id, const char* what) { return "layer" + std::to_string(id) + "." + what; }

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Checkpoint make_checkpoint(const Model& model, CheckpointMeta meta, const Sgd* sgd, const Adam* adam) {
  Checkpoint c;
  c.net = model.net();
  c.meta = std::move(meta);
  c.model = model;
  if (sgd || adam) {
    c.has_optimizer = true;
    if (sgd) c.sgd = sgd->buffers();
    if (adam) c.adam = adam->slots();
  }
  return c;
}

void restore_optimizer(const Checkpoint& ckpt, Sgd& sgd, Adam& adam) {
  if (!ckpt.has_optimizer) throw CheckpointError("checkpoint carries no optimizer state");
  sgd.buffers() = ckpt.sgd;
  adam.slots() = ckpt.adam;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  std::deque<Tensor> owned;  // vectors converted to tensors; deque keeps pointers stable
  auto own = [&](std::string name, const std::vector<float>& v) {
    owned.push_back(from_vec(v));
    arrays.emplace_back(std::move(name), &owned.back());
  };

  const auto& layers = c.model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerState& s = layers[i];
    for (const auto* p : {&s.weight, &s.bias, &s.gamma, &s.beta})
      if (*p) arrays.emplace_back((*p)->name, &(*p)->value);
    if (s.gamma) {
      own(layer_key(static_cast<int>(i), "running_mean"), s.running.mean);
      own(layer_key(static_cast<int>(i), "running_var"), s.running.var);
    }
  }
  json quant = json::array();
  for (const auto& [id, q] : c.model.quant()) {
    quant.push_back(json{{"layer", id}, {"weight", quant_meta(q.weight)}, {"input", quant_meta(q.input)}});
    own(layer_key(id, "weight.scale"), q.weight.scale);
    if (q.weight.transform == ScaleTransform::kLog2) own(layer_key(id, "weight.log2_scale"), q.weight.log2_scale);
    own(layer_key(id, "input.scale"), q.input.scale);
    own(layer_key(id, "input.zero_point"), q.input.zero_point);
    if (q.input.transform == ScaleTransform::kLog2) own(layer_key(id, "input.log2_scale"), q.input.log2_scale);
  }
  json adam_steps = json::object();
  if (c.has_optimizer) {
    for (const auto& [name, buf] : c.sgd) arrays.emplace_back("sgd/" + name, &buf);
    for (const auto& [key, slot] : c.adam) {
      own("adam/" + key + "/m", slot.m);
      own("adam/" + key + "/v", slot.v);
      adam_steps[key] = slot.t;
    }
  }

  json dir = json::array();
  for (const auto& [name, t] : arrays) dir.push_back(json{{"name", name}, {"shape", t->shape()}});
  json meta{{"kind", c.meta.kind}, {"mode", c.meta.mode}, {"parent_hash", c.meta.parent_hash},
            {"seed", c.meta.seed}, {"ratio", c.meta.ratio}};
  meta["eval_accuracy"] = c.meta.eval_accuracy ? json(*c.meta.eval_accuracy) : json(nullptr);
  json header{{"net", netspec_to_json(c.net)},
              {"meta", meta},
              {"quant", quant},
              {"optimizer", c.has_optimizer},
              {"adam_steps", adam_steps},
              {"arrays", dir}};
  const std::string hs = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(hs.size()));
  out.insert(out.end(), hs.begin(), hs.end());
  for (const auto& [name, t] : arrays) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t->data());
    out.insert(out.end(), p, p + t->numel() * sizeof(float));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> b, const std::string& source) {
  if (b.size() < 24) throw CheckpointError(source + ": truncated (" + std::to_string(b.size()) + " bytes)");
  if (std::memcmp(b.data(), kMagic, 8) != 0) throw CheckpointError(source + ": not a checkpoint (bad magic at byte 0)");
  const auto version = static_cast<std::uint32_t>(get_le(b, 8, 4));
  if (version > kCheckpointVersion) {
    throw CheckpointError(source + ": format version " + std::to_string(version) + " is newer than supported version " +
                          std::to_string(kCheckpointVersion));
  }
  if (version == 0) throw CheckpointError(source + ": invalid format version 0");
  const std::uint64_t stored = get_le(b, b.size() - 8, 8);
  if (fnv1a64(b.first(b.size() - 8)) != stored) {
    throw CheckpointError(source + ": content hash mismatch; the file is corrupted");
  }
  const auto hlen = static_cast<std::size_t>(get_le(b, 12, 4));
  if (16 + hlen > b.size() - 8) throw CheckpointError(source + ": header length exceeds file size");

  json header;
  try {
    header = json::parse(b.begin() + 16, b.begin() + 16 + static_cast<long>(hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(source + ": unreadable header: " + e.what());
  }

  Checkpoint c;
  try {
    c.net = netspec_from_json(header.at("net"), source + ":net");
    const json& m = header.at("meta");
    c.meta.kind = m.at("kind").get<std::string>();
    c.meta.mode = m.at("mode").get<std::string>();
    c.meta.parent_hash = m.at("parent_hash").get<std::string>();
    c.meta.seed = m.at("seed").get<std::uint64_t>();
    c.meta.ratio = m.at("ratio").get<double>();
    if (!m.at("eval_accuracy").is_null()) c.meta.eval_accuracy = m.at("eval_accuracy").get<double>();
    c.has_optimizer = header.at("optimizer").get<bool>();
  } catch (const json::exception& e) {
    throw CheckpointError(source + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(source + ": " + e.what());
  }

  std::map<std::string, Tensor> arrays;
  std::size_t off = 16 + hlen;
  for (const json& e : header.at("arrays")) {
    const std::string name = e.at("name").get<std::string>();
    const Shape shape = e.at("shape").get<Shape>();
    const std::size_t n = shape_numel(shape);
    if (off + n * sizeof(float) > b.size() - 8) throw CheckpointError(source + ": array '" + name + "' runs past the payload");
    std::vector<float> v(n);
    std::memcpy(v.data(), b.data() + off, n * sizeof(float));
    off += n * sizeof(float);
    arrays.emplace(name, Tensor(shape, std::move(v)));
  }
  if (off != b.size() - 8) throw CheckpointError(source + ": " + std::to_string(b.size() - 8 - off) + " stray payload bytes");

  auto take = [&](const std::string& name) -> Tensor {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError(source + ": missing array '" + name + "'");
    Tensor t = std::move(it->second);
    arrays.erase(it);
    return t;
  };
  c.model = Model(c.net, 0);
  for (std::size_t i = 0; i < c.model.layers().size(); ++i) {
    LayerState& s = c.model.layers()[i];
    for (auto* p : {&s.weight, &s.bias, &s.gamma, &s.beta}) {
      if (!*p) continue;
      Tensor t = take((*p)->name);
      if (t.shape() != (*p)->value.shape()) {
        throw CheckpointError(source + ": array '" + (*p)->name + "' has shape " + shape_str(t.shape()) + ", network expects " +
                              shape_str((*p)->value.shape()));
      }
      (*p)->value = std::move(t);
    }
    if (s.gamma) {
      s.running.mean = to_vec(take(layer_key(static_cast<int>(i), "running_mean")));
      s.running.var = to_vec(take(layer_key(static_cast<int>(i), "running_var")));
    }
  }
  for (const json& qj : header.at("quant")) {
    const int id = qj.at("layer").get<int>();
    QuantLayer q;
    q.weight = quant_from_meta(qj.at("weight"), source + ":quant.weight");
    q.input = quant_from_meta(qj.at("input"), source + ":quant.input");
    q.weight.scale = to_vec(take(layer_key(id, "weight.scale")));
    q.weight.zero_point.assign(q.weight.scale.size(), 0.0f);
    if (q.weight.transform == ScaleTransform::kLog2) q.weight.log2_scale = to_vec(take(layer_key(id, "weight.log2_scale")));
    q.input.scale = to_vec(take(layer_key(id, "input.scale")));
    q.input.zero_point = to_vec(take(layer_key(id, "input.zero_point")));
    if (q.input.transform == ScaleTransform::kLog2) q.input.log2_scale = to_vec(take(layer_key(id, "input.log2_scale")));
    try {
      q.weight.validate();
      q.input.validate();
    } catch (const ConfigError& e) {
      throw CheckpointError(source + ": layer " + std::to_string(id) + " quantizer: " + e.what());
    }
    q.weight_grad.reset(q.weight.slices());
    q.input_grad.reset(q.input.slices());
    c.model.quant()[id] = std::move(q);
  }
  if (c.has_optimizer) {
    for (auto it = arrays.begin(); it != arrays.end();) {
      if (it->first.rfind("sgd/", 0) == 0) {
        c.sgd.emplace(it->first.substr(4), std::move(it->second));
        it = arrays.erase(it);
      } else {
        ++it;
      }
    }
    for (const auto& [key, steps] : header.at("adam_steps").items()) {
      Adam::Slot slot;
      slot.m = to_vec(take("adam/" + key + "/m"));
      slot.v = to_vec(take("adam/" + key + "/v"));
      slot.t = steps.get<std::vector<std::uint64_t>>();
      c.adam.emplace(key, std::move(slot));
    }
  }
  if (!arrays.empty()) throw CheckpointError(source + ": unexpected array '" + arrays.begin()->first + "'");
  return c;
}

std::string checkpoint_hash(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw CheckpointError("checkpoint too short to carry a hash");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(get_le(bytes, bytes.size() - 8, 8)));
  return buf;
}

std::string save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
  return checkpoint_hash(bytes);
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return deserialize_checkpoint(bytes, path);
}

std::string file_hash(const std::string& path) { return checkpoint_hash(read_file_bytes(path)); }

}  // namespace efqat
