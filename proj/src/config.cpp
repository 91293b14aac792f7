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

#include "efqat/config.hpp"

#include <charconv>

#include "efqat/error.hpp"
#include "json_io.hpp"

namespace efqat {

namespace {

SgdConfig read_sgd(StrictObject& parent, const std::string& key, SgdConfig d) {
  if (!parent.has(key)) return d;
  StrictObject o(parent.raw(key), parent.where(key));
  d.lr = o.get<double>("lr", d.lr);
  d.momentum = o.get<double>("momentum", d.momentum);
  d.weight_decay = o.get<double>("weight_decay", d.weight_decay);
  o.finish();
  if (d.lr < 0.0 || d.momentum < 0.0 || d.weight_decay < 0.0) {
    throw ConfigError(parent.where(key) + ": lr, momentum and weight_decay must not be negative");
  }
  return d;
}

json sgd_json(const SgdConfig& s) {
  return json{{"lr", s.lr}, {"momentum", s.momentum}, {"weight_decay", s.weight_decay}};
}

void read_dataset(StrictObject& root, DatasetConfig& d) {
  if (!root.has("dataset")) return;
  StrictObject o(root.raw("dataset"), root.where("dataset"));
  d.kind = o.get<std::string>("kind", d.kind);
  d.eval_fraction = o.get<double>("eval_fraction", d.eval_fraction);
  if (!(d.eval_fraction > 0.0 && d.eval_fraction < 1.0)) throw ConfigError(o.where("eval_fraction") + ": must lie in (0, 1)");
  if (d.kind == "synthetic") {
    SyntheticSpec& s = d.synthetic;
    s.classes = o.get<std::size_t>("classes", s.classes);
    if (o.has("shape")) {
      try {
        s.shape = o.raw("shape").get<Shape>();
      } catch (const json::exception&) {
        throw ConfigError(o.where("shape") + ": expected an array of positive integers");
      }
    }
    s.train_size = o.get<std::size_t>("train_size", s.train_size);
    s.eval_size = o.get<std::size_t>("eval_size", s.eval_size);
    s.noise = o.get<double>("noise", s.noise);
    s.blobs = o.get<std::size_t>("blobs", s.blobs);
    s.shift = o.get<std::size_t>("shift", s.shift);
    s.separation = o.get<double>("separation", s.separation);
    if (o.has("seed")) {
      s.seed = o.require<std::uint64_t>("seed");
      d.synthetic_seed_set = true;
    }
  } else if (d.kind == "idx") {
    d.train_images = o.require<std::string>("train_images");
    d.train_labels = o.require<std::string>("train_labels");
    d.eval_images = o.get<std::string>("eval_images", "");
    d.eval_labels = o.get<std::string>("eval_labels", "");
    if (d.eval_images.empty() != d.eval_labels.empty()) {
      throw ConfigError(o.where("eval_images") + ": eval_images and eval_labels must be given together");
    }
  } else if (d.kind == "csv") {
    d.train_csv = o.require<std::string>("train");
    d.eval_csv = o.get<std::string>("eval", "");
    d.csv.header = o.get<bool>("header", d.csv.header);
    d.csv.label_column = o.get<std::string>("label_column", d.csv.label_column);
  } else {
    throw ConfigError(o.where("kind") + ": unknown dataset kind '" + d.kind + "' (expected synthetic, idx or csv)");
  }
  o.finish();
}

json dataset_json(const DatasetConfig& d) {
  json j{{"kind", d.kind}, {"eval_fraction", d.eval_fraction}};
  if (d.kind == "synthetic") {
    const SyntheticSpec& s = d.synthetic;
    j.update(json{{"classes", s.classes},
                  {"shape", s.shape},
                  {"train_size", s.train_size},
                  {"eval_size", s.eval_size},
                  {"noise", s.noise},
                  {"blobs", s.blobs},
                  {"shift", s.shift},
                  {"separation", s.separation}});
    if (d.synthetic_seed_set) j["seed"] = s.seed;
  } else if (d.kind == "idx") {
    j.update(json{{"train_images", d.train_images}, {"train_labels", d.train_labels}});
    if (!d.eval_images.empty()) j.update(json{{"eval_images", d.eval_images}, {"eval_labels", d.eval_labels}});
  } else {
    j.update(json{{"train", d.train_csv}, {"header", d.csv.header}, {"label_column", d.csv.label_column}});
    if (!d.eval_csv.empty()) j["eval"] = d.eval_csv;
  }
  return j;
}

void check_train(const TrainConfig& t) {
  if (!(t.ratio >= 0.0 && t.ratio <= 1.0)) throw ConfigError("train.ratio must lie in [0, 1], got " + std::to_string(t.ratio));
  if (t.epochs == 0) throw ConfigError("train.epochs must be positive");
  if (t.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (t.calib_size == 0) throw ConfigError("train.calib_size must be positive (calibration set is empty)");
  if (t.adam.lr < 0.0) throw ConfigError("train.adam.lr must not be negative");
  if (!(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0 && t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0)) {
    throw ConfigError("train.adam betas must lie in [0, 1)");
  }
}

template <typename T>
T parse_number(const std::string& flag, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("--" + flag + ": '" + value + "' is not a valid number");
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": invalid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  ExperimentConfig cfg;
  StrictObject o(root, source);
  cfg.seed = o.get<std::uint64_t>("seed", cfg.seed);
  cfg.out = o.get<std::string>("out", cfg.out);
  cfg.checkpoint = o.get<std::string>("checkpoint", cfg.checkpoint);
  cfg.dump_plan = o.get<bool>("dump_plan", cfg.dump_plan);
  if (o.has("net")) cfg.net = netspec_from_json(o.raw("net"), o.where("net"));
  read_dataset(o, cfg.data);
  if (o.has("pretrain")) {
    StrictObject p(o.raw("pretrain"), o.where("pretrain"));
    cfg.pretrain.epochs = p.get<std::size_t>("epochs", cfg.pretrain.epochs);
    cfg.pretrain.sgd = read_sgd(p, "sgd", cfg.pretrain.sgd);
    p.finish();
  }
  if (o.has("train")) {
    StrictObject t(o.raw("train"), o.where("train"));
    TrainConfig& tc = cfg.train;
    if (t.has("mode")) tc.mode = parse_train_mode(t.require<std::string>("mode"));
    tc.ratio = t.get<double>("ratio", tc.ratio);
    tc.freeze_freq = t.get<std::uint64_t>("freeze_freq", tc.freeze_freq);
    tc.epochs = t.get<std::size_t>("epochs", tc.epochs);
    tc.batch_size = t.get<std::size_t>("batch_size", tc.batch_size);
    tc.sgd = read_sgd(t, "sgd", tc.sgd);
    if (t.has("adam")) {
      StrictObject a(t.raw("adam"), t.where("adam"));
      tc.adam.lr = a.get<double>("lr", tc.adam.lr);
      tc.adam.beta1 = a.get<double>("beta1", tc.adam.beta1);
      tc.adam.beta2 = a.get<double>("beta2", tc.adam.beta2);
      tc.adam.eps = a.get<double>("eps", tc.adam.eps);
      a.finish();
    }
    if (t.has("qparam_transform")) tc.qparam_transform = parse_scale_transform(t.require<std::string>("qparam_transform"));
    tc.calib_size = t.get<std::size_t>("calib_size", tc.calib_size);
    tc.import_optimizer_state = t.get<bool>("import_optimizer_state", tc.import_optimizer_state);
    t.finish();
  }
  o.finish();
  check_train(cfg.train);
  cfg.train.seed = cfg.seed;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

std::string config_to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  json j{{"seed", c.seed},
         {"out", c.out},
         {"checkpoint", c.checkpoint},
         {"dump_plan", c.dump_plan},
         {"net", netspec_to_json(c.net)},
         {"dataset", dataset_json(c.data)},
         {"pretrain", json{{"epochs", c.pretrain.epochs}, {"sgd", sgd_json(c.pretrain.sgd)}}},
         {"train",
          json{{"mode", to_string(t.mode)},
               {"ratio", t.ratio},
               {"freeze_freq", t.freeze_freq},
               {"epochs", t.epochs},
               {"batch_size", t.batch_size},
               {"sgd", sgd_json(t.sgd)},
               {"adam", json{{"lr", t.adam.lr}, {"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
               {"qparam_transform", to_string(t.qparam_transform)},
               {"calib_size", t.calib_size},
               {"import_optimizer_state", t.import_optimizer_state}}}};
  return j.dump(2) + "\n";
}

void set_option(ExperimentConfig& target, const std::string& key, const std::string& value) {
  ExperimentConfig cfg = target;
  TrainConfig& t = cfg.train;
  if (key == "mode") {
    t.mode = parse_train_mode(value);
  } else if (key == "ratio") {
    t.ratio = parse_number<double>(key, value);
  } else if (key == "freeze-freq") {
    t.freeze_freq = parse_number<std::uint64_t>(key, value);
  } else if (key == "bits-w" || key == "bits-a") {
    const int bits = parse_number<int>(key, value);
    if (bits < 2 || bits > 16) throw ConfigError("--" + key + ": bit-width must lie in [2, 16], got " + value);
    (key == "bits-w" ? cfg.net.bits_w : cfg.net.bits_a) = bits;
  } else if (key == "epochs") {
    t.epochs = parse_number<std::size_t>(key, value);
  } else if (key == "batch-size") {
    t.batch_size = parse_number<std::size_t>(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_number<std::uint64_t>(key, value);
    t.seed = cfg.seed;
  } else if (key == "lr") {
    t.sgd.lr = parse_number<double>(key, value);
    if (t.sgd.lr < 0.0) throw ConfigError("--lr must not be negative");
  } else if (key == "qparam-lr") {
    t.adam.lr = parse_number<double>(key, value);
  } else if (key == "qparam-transform") {
    t.qparam_transform = parse_scale_transform(value);
  } else if (key == "calib-size") {
    t.calib_size = parse_number<std::size_t>(key, value);
  } else if (key == "out") {
    if (value.empty()) throw ConfigError("--out must not be empty");
    cfg.out = value;
  } else if (key == "checkpoint") {
    cfg.checkpoint = value;
  } else if (key == "dump-plan") {
    if (value != "true" && value != "false") throw ConfigError("--dump-plan: expected true or false, got '" + value + "'");
    cfg.dump_plan = value == "true";
  } else {
    throw ConfigError("unknown option '" + key + "'");
  }
  try {
    check_train(t);
  } catch (const ConfigError& e) {
    throw ConfigError("--" + key + " " + value + ": " + e.what());
  }
  target = std::move(cfg);
}

}  // namespace efqat
