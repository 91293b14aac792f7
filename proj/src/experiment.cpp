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

#include "efqat/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <tuple>

#include "efqat/error.hpp"
#include "json_io.hpp"

namespace efqat {

namespace fs = std::filesystem;

namespace {

constexpr double kRatioGrid[] = {0.0, 0.05, 0.1, 0.25, 0.5, 1.0};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("short write to '" + path + "'");
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

template <typename T>
void put_opt(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
std::optional<T> get_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

Dataset split_tail(Dataset& all, double fraction, const std::string& source) {
  const auto n_eval = static_cast<std::size_t>(static_cast<double>(all.size()) * fraction);
  if (n_eval == 0 || n_eval >= all.size()) {
    throw ConfigError(source + ": " + std::to_string(all.size()) + " samples cannot be split with eval_fraction " +
                      std::to_string(fraction));
  }
  Dataset eval = all.slice(all.size() - n_eval, n_eval);
  all = all.slice(0, all.size() - n_eval);
  return eval;
}

}  // namespace

std::string summary_to_json(const RunSummary& s) {
  json j{{"command", s.command},
         {"mode", s.mode},
         {"seed", s.seed},
         {"theoretical_speedup", s.theoretical_speedup},
         {"theoretical_bwd_macs", s.theoretical_bwd_macs},
         {"measured_bwd_macs", s.measured_bwd_macs},
         {"bwd_seconds", s.bwd_seconds},
         {"steps", s.steps},
         {"refreshes", s.refreshes},
         {"checkpoint", s.checkpoint},
         {"checkpoint_hash", s.checkpoint_hash},
         {"parent_hash", s.parent_hash},
         {"warnings", s.warnings}};
  put_opt(j, "ratio", s.ratio);
  put_opt(j, "freeze_freq", s.freeze_freq);
  put_opt(j, "effective_freeze_freq", s.effective_freeze_freq);
  put_opt(j, "fp_accuracy", s.fp_accuracy);
  put_opt(j, "ptq_accuracy", s.ptq_accuracy);
  put_opt(j, "final_accuracy", s.final_accuracy);
  put_opt(j, "eval_loss", s.eval_loss);
  put_opt(j, "recorded_accuracy", s.recorded_accuracy);
  put_opt(j, "frozen_fraction", s.frozen_fraction);
  return j.dump(2) + "\n";
}

RunSummary summary_from_json(const std::string& text, const std::string& source) {
  RunSummary s;
  try {
    const json j = json::parse(text);
    s.command = j.at("command").get<std::string>();
    s.mode = j.at("mode").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.theoretical_speedup = j.at("theoretical_speedup").get<double>();
    s.theoretical_bwd_macs = j.at("theoretical_bwd_macs").get<std::uint64_t>();
    s.measured_bwd_macs = j.at("measured_bwd_macs").get<std::uint64_t>();
    s.bwd_seconds = j.at("bwd_seconds").get<double>();
    s.steps = j.at("steps").get<std::size_t>();
    s.refreshes = j.at("refreshes").get<std::size_t>();
    s.checkpoint = j.at("checkpoint").get<std::string>();
    s.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
    s.parent_hash = j.at("parent_hash").get<std::string>();
    s.warnings = j.at("warnings").get<std::vector<std::string>>();
    s.ratio = get_opt<double>(j, "ratio");
    s.freeze_freq = get_opt<std::uint64_t>(j, "freeze_freq");
    s.effective_freeze_freq = get_opt<std::uint64_t>(j, "effective_freeze_freq");
    s.fp_accuracy = get_opt<double>(j, "fp_accuracy");
    s.ptq_accuracy = get_opt<double>(j, "ptq_accuracy");
    s.final_accuracy = get_opt<double>(j, "final_accuracy");
    s.eval_loss = get_opt<double>(j, "eval_loss");
    s.recorded_accuracy = get_opt<double>(j, "recorded_accuracy");
    s.frozen_fraction = get_opt<double>(j, "frozen_fraction");
  } catch (const json::exception& e) {
    throw ParseError(source + ": " + e.what());
  }
  return s;
}

std::string metrics_to_json(const MetricsRecord& r) {
  json j{{"step", r.step},
         {"epoch", r.epoch},
         {"samples", r.samples},
         {"loss", r.loss},
         {"eval_accuracy", r.eval_accuracy ? json(*r.eval_accuracy) : json(nullptr)},
         {"frozen_fraction", r.frozen_fraction},
         {"theoretical_bwd_macs", r.theoretical_bwd_macs},
         {"measured_bwd_macs", r.measured_bwd_macs},
         {"bwd_seconds", r.bwd_seconds},
         {"refreshed", r.refreshed}};
  return j.dump();
}

DataSplit load_data(const ExperimentConfig& cfg) {
  const DatasetConfig& d = cfg.data;
  DataSplit split;
  if (d.kind == "synthetic") {
    SyntheticSpec spec = d.synthetic;
    if (!d.synthetic_seed_set) spec.seed = cfg.seed;
    split = make_synthetic(spec);
  } else if (d.kind == "idx") {
    split.train = load_idx(d.train_images, d.train_labels);
    split.eval = d.eval_images.empty() ? split_tail(split.train, d.eval_fraction, d.train_images)
                                       : load_idx(d.eval_images, d.eval_labels);
  } else if (d.kind == "csv") {
    split.train = load_csv(d.train_csv, d.csv);
    split.eval = d.eval_csv.empty() ? split_tail(split.train, d.eval_fraction, d.train_csv) : load_csv(d.eval_csv, d.csv);
  } else {
    throw ConfigError("unknown dataset kind '" + d.kind + "'");
  }
  for (const Dataset* ds : {&split.train, &split.eval}) {
    if (ds->sample_shape != cfg.net.input) {
      throw ConfigError("dataset samples have shape " + shape_str(ds->sample_shape) + " but the network input is " +
                        shape_str(cfg.net.input));
    }
    if (ds->num_classes() > cfg.net.num_classes()) {
      throw ConfigError("dataset has labels up to " + std::to_string(ds->num_classes() - 1) + " but the network has " +
                        std::to_string(cfg.net.num_classes()) + " outputs");
    }
  }
  return split;
}

std::string describe_net_mismatch(const NetSpec& a, const NetSpec& b) {
  if (a.input != b.input) return "input shape " + shape_str(a.input) + " vs " + shape_str(b.input);
  if (a.bits_w != b.bits_w || a.bits_a != b.bits_a) {
    return "bit-widths W" + std::to_string(a.bits_w) + "A" + std::to_string(a.bits_a) + " vs W" +
           std::to_string(b.bits_w) + "A" + std::to_string(b.bits_a);
  }
  if (a.layers.size() != b.layers.size()) {
    return std::to_string(a.layers.size()) + " layers vs " + std::to_string(b.layers.size());
  }
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const LayerSpec &x = a.layers[i], &y = b.layers[i];
    if (x == y) continue;
    std::ostringstream os;
    os << "layer " << i << ": " << to_string(x.kind) << " " << x.in_channels << "->" << x.out_channels << " k"
       << x.kernel << " vs " << to_string(y.kind) << " " << y.in_channels << "->" << y.out_channels << " k" << y.kernel;
    if (x.quantize != y.quantize) os << " (quantize flag differs)";
    return os.str();
  }
  return "";
}

// ---------------------------------------------------------------------------

Experiment::Experiment(ExperimentConfig cfg, std::ostream* log) : cfg_(std::move(cfg)), log_(log) {
  cfg_.train.seed = cfg_.seed;
}

void Experiment::prepare_out() {
  std::error_code ec;
  fs::create_directories(cfg_.out, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg_.out + "': " + ec.message());
  write_text(out_path("config.json"), config_to_json(cfg_));
}

std::string Experiment::out_path(const std::string& name) const { return (fs::path(cfg_.out) / name).string(); }

void Experiment::note(const std::string& line) const {
  if (log_) *log_ << line << std::endl;
}

Checkpoint Experiment::load_matching(const std::string& path) const {
  Checkpoint ck = load_checkpoint(path);
  const std::string diff = describe_net_mismatch(cfg_.net, ck.net);
  if (!diff.empty()) throw ConfigError("checkpoint '" + path + "' does not match the configured network: " + diff);
  return ck;
}

Experiment::Start Experiment::full_precision(const DataSplit& data) {
  Start s;
  if (!cfg_.checkpoint.empty()) {
    Checkpoint ck = load_matching(cfg_.checkpoint);
    s.model = std::move(ck.model);
    s.model.clear_quant();
    s.hash = file_hash(cfg_.checkpoint);
    note("loaded " + cfg_.checkpoint + " (" + ck.meta.kind + ", hash " + s.hash + ")");
  } else {
    s.model = Model(cfg_.net, cfg_.seed);
    TrainConfig tc = cfg_.train;
    tc.mode = TrainMode::kFp;
    tc.sgd = cfg_.pretrain.sgd;
    Trainer tr(s.model, tc);
    for (std::size_t e = 0; e < cfg_.pretrain.epochs; ++e) {
      const EpochSummary es = tr.train_epoch(data.train);
      note("fp epoch " + std::to_string(e) + ": mean loss " + std::to_string(es.mean_loss));
    }
    CheckpointMeta meta{"fp", "fp", "", cfg_.seed, 1.0, std::nullopt};
    meta.eval_accuracy = evaluate(s.model, data.eval, false).accuracy;
    s.hash = save_checkpoint(make_checkpoint(s.model, meta, &tr.sgd(), &tr.adam()), out_path("fp.ckpt"));
    note("wrote " + out_path("fp.ckpt") + " (hash " + s.hash + ")");
  }
  s.fp_accuracy = evaluate(s.model, data.eval, false).accuracy;
  note("fp accuracy " + pct(*s.fp_accuracy));
  return s;
}

Experiment::Start Experiment::calibrated(Start s, const DataSplit& data) {
  const Dataset calib = calibration_subset(data.train, cfg_.train.calib_size, cfg_.seed);
  s.warnings = efqat::calibrate(s.model, calib, cfg_.train.qparam_transform);
  for (const auto& w : s.warnings) note("warning: " + w);
  s.ptq_accuracy = evaluate(s.model, data.eval, true).accuracy;
  CheckpointMeta meta{"ptq", "ptq", s.hash, cfg_.seed, 1.0, s.ptq_accuracy};
  s.hash = save_checkpoint(make_checkpoint(s.model, meta), out_path("ptq.ckpt"));
  note("ptq accuracy " + pct(*s.ptq_accuracy) + "; wrote " + out_path("ptq.ckpt") + " (hash " + s.hash + ")");
  return s;
}

Experiment::Start Experiment::quantized(const DataSplit& data) {
  if (!cfg_.checkpoint.empty()) {
    Checkpoint ck = load_matching(cfg_.checkpoint);
    if (ck.model.quantized()) {
      Start s;
      s.model = std::move(ck.model);
      s.hash = file_hash(cfg_.checkpoint);
      s.ptq_accuracy = evaluate(s.model, data.eval, true).accuracy;
      note("loaded " + cfg_.checkpoint + " (" + ck.meta.kind + ", quantized accuracy " + pct(*s.ptq_accuracy) + ")");
      return s;
    }
  }
  return calibrated(full_precision(data), data);
}

void Experiment::write_summary(const RunSummary& s, const std::string& file) const {
  write_text(out_path(file), summary_to_json(s));
}

RunSummary Experiment::calibrate() {
  const DataSplit data = load_data(cfg_);
  prepare_out();
  Start s = calibrated(full_precision(data), data);
  RunSummary r;
  r.command = "calibrate";
  r.mode = "ptq";
  r.seed = cfg_.seed;
  r.fp_accuracy = s.fp_accuracy;
  r.ptq_accuracy = s.ptq_accuracy;
  r.final_accuracy = s.ptq_accuracy;
  r.checkpoint = out_path("ptq.ckpt");
  r.checkpoint_hash = s.hash;
  r.parent_hash = load_checkpoint(r.checkpoint).meta.parent_hash;
  r.warnings = s.warnings;
  write_summary(r, "summary.json");
  return r;
}

RunSummary Experiment::train() {
  const TrainMode mode = cfg_.train.mode;
  if (mode == TrainMode::kPtq) return calibrate();
  const DataSplit data = load_data(cfg_);
  prepare_out();

  Start s;
  std::optional<Checkpoint> source;
  if (is_quantized(mode)) {
    s = quantized(data);
  } else if (mode == TrainMode::kFpPlus1) {
    s = full_precision(data);
  } else if (!cfg_.checkpoint.empty()) {
    s = full_precision(data);  // fp: continue training the given model
  } else {
    s.model = Model(cfg_.net, cfg_.seed);
  }

  Trainer tr(s.model, cfg_.train);
  std::vector<std::string> warnings = s.warnings;
  if (cfg_.train.import_optimizer_state) {
    if (cfg_.checkpoint.empty()) {
      warnings.push_back("import_optimizer_state is set but no checkpoint was given; starting with fresh state");
    } else {
      Checkpoint ck = load_checkpoint(cfg_.checkpoint);
      if (ck.has_optimizer) {
        restore_optimizer(ck, tr.sgd(), tr.adam());
      } else {
        warnings.push_back("checkpoint has no optimizer state; starting with fresh state");
      }
    }
  }

  std::ofstream metrics(out_path("metrics.jsonl"), std::ios::trunc);
  if (!metrics) throw IoError("cannot write '" + out_path("metrics.jsonl") + "'");
  tr.set_sink([&metrics](const MetricsRecord& rec) { metrics << metrics_to_json(rec) << "\n"; });

  RunSummary r;
  r.command = "train";
  r.mode = to_string(mode);
  r.seed = cfg_.seed;
  r.fp_accuracy = s.fp_accuracy;
  r.ptq_accuracy = s.ptq_accuracy;
  r.parent_hash = s.hash;
  for (std::size_t e = 0; e < cfg_.train.epochs; ++e) {
    const EpochSummary es = tr.train_epoch(data.train, &data.eval);
    r.steps += es.steps;
    r.refreshes += es.refreshes;
    r.bwd_seconds += es.bwd_seconds;
    r.theoretical_bwd_macs += es.theoretical_bwd_macs;
    r.measured_bwd_macs += es.measured_bwd_macs;
    note(std::string(to_string(mode)) + " epoch " + std::to_string(e) + ": mean loss " + std::to_string(es.mean_loss) +
         ", eval accuracy " + pct(es.eval->accuracy));
  }
  metrics.close();
  if (!metrics) throw IoError("short write to '" + out_path("metrics.jsonl") + "'");

  const EvalResult ev = evaluate(s.model, data.eval, is_quantized(mode));
  r.final_accuracy = ev.accuracy;
  r.eval_loss = ev.loss;
  const FreezePlan dense;
  const FreezePlan* plan = tr.plan();
  r.theoretical_speedup = network_report(cfg_.net, plan ? *plan : dense, cfg_.train.batch_size).speedup;
  if (mode == TrainMode::kQat) r.ratio = 1.0;
  if (plan) {
    const std::uint64_t f = cfg_.train.freeze_freq, b = cfg_.train.batch_size;
    r.ratio = cfg_.train.ratio;
    r.freeze_freq = f;
    r.effective_freeze_freq = f == kNeverRefresh ? 0 : (f + b - 1) / b * b;
    r.frozen_fraction = plan->frozen_fraction(cfg_.net);
    if (cfg_.dump_plan) write_text(out_path("plan.txt"), plan_report(*plan, cfg_.net));
  }
  if (tr.scale_clamps()) warnings.push_back(std::to_string(tr.scale_clamps()) + " scale updates were clamped to the minimum scale");
  r.warnings = warnings;

  CheckpointMeta meta{"final", r.mode, s.hash, cfg_.seed, r.ratio.value_or(1.0), ev.accuracy};
  r.checkpoint = out_path("final.ckpt");
  r.checkpoint_hash = save_checkpoint(make_checkpoint(s.model, meta, &tr.sgd(), &tr.adam()), r.checkpoint);
  write_summary(r, "summary.json");
  note("final accuracy " + pct(ev.accuracy) + "; wrote " + r.checkpoint);
  return r;
}

RunSummary Experiment::eval() {
  const std::string path = cfg_.checkpoint.empty() ? out_path("final.ckpt") : cfg_.checkpoint;
  Checkpoint ck = load_matching(path);
  const DataSplit data = load_data(cfg_);
  const EvalResult ev = evaluate(ck.model, data.eval, ck.model.quantized());
  RunSummary r;
  r.command = "eval";
  r.mode = ck.meta.mode;
  r.seed = ck.meta.seed;
  r.final_accuracy = ev.accuracy;
  r.eval_loss = ev.loss;
  r.recorded_accuracy = ck.meta.eval_accuracy;
  r.checkpoint = path;
  r.checkpoint_hash = file_hash(path);
  r.parent_hash = ck.meta.parent_hash;
  std::error_code ec;
  fs::create_directories(cfg_.out, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg_.out + "': " + ec.message());
  write_summary(r, "eval.json");
  return r;
}

std::string Experiment::cost() {
  std::optional<Checkpoint> ck;
  if (!cfg_.checkpoint.empty()) ck = load_matching(cfg_.checkpoint);
  const FreezeMode fmode = is_efqat(cfg_.train.mode) ? freeze_mode_of(cfg_.train.mode) : FreezeMode::kCwpn;
  const std::size_t batch = cfg_.train.batch_size;

  json reports = json::array();
  std::string tables;
  for (double r : kRatioGrid) {
    OpsReport rep;
    json plan_rows = json::array();
    if (ck) {
      const FreezePlan plan = make_plan(fmode, cfg_.net, ck->model.weight_set(), r);
      rep = network_report(cfg_.net, plan, batch);
      for (const auto& [id, mask] : plan.masks) {
        std::string bits;
        for (std::size_t i = 0; i < mask.size(); ++i) bits += mask[i] ? '1' : '0';
        plan_rows.push_back(json{{"layer", id}, {"rows", bits}});
      }
    } else {
      rep = ratio_report(cfg_.net, r, batch);
    }
    json layers = json::array();
    for (const LayerOps& l : rep.layers) {
      layers.push_back(json{{"layer", l.layer},
                            {"kind", to_string(l.kind)},
                            {"c_out", l.c_out},
                            {"unfrozen", l.unfrozen},
                            {"input_macs", l.input_macs},
                            {"weight_macs", l.weight_macs},
                            {"total", l.theoretical}});
    }
    json rj{{"mode", rep.mode},    {"ratio", r},          {"batch", batch},          {"total", rep.total},
            {"dense_total", rep.dense_total}, {"speedup", rep.speedup}, {"layers", layers}};
    if (ck) rj["plan"] = plan_rows;
    reports.push_back(std::move(rj));
    tables += render_table(rep) + "\n";
  }
  std::error_code ec;
  fs::create_directories(cfg_.out, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg_.out + "': " + ec.message());
  write_text(out_path("cost.json"), json{{"source", ck ? "checkpoint" : "ratio"}, {"reports", reports}}.dump(2) + "\n");
  return tables;
}

// ---------------------------------------------------------------------------

PlotDataResult write_plot_data(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  PlotDataResult res;
  std::vector<RunSummary> runs;
  for (const std::string& dir : run_dirs) {
    const fs::path p = fs::path(dir) / "summary.json";
    if (!fs::exists(p)) {
      res.warnings.push_back("no summary.json in '" + dir + "'; skipped");
      continue;
    }
    const auto bytes = read_file_bytes(p.string());
    RunSummary s = summary_from_json(std::string(bytes.begin(), bytes.end()), p.string());
    if (s.command != "train" || !s.final_accuracy) {
      res.warnings.push_back("'" + dir + "' holds a " + s.command + " summary, not a training run; skipped");
      continue;
    }
    runs.push_back(std::move(s));
  }
  if (runs.empty()) res.warnings.push_back("no training runs found; writing header-only tables");
  std::stable_sort(runs.begin(), runs.end(), [](const RunSummary& a, const RunSummary& b) {
    return std::make_tuple(a.mode, a.ratio.value_or(-1.0), a.freeze_freq.value_or(0), a.seed) <
           std::make_tuple(b.mode, b.ratio.value_or(-1.0), b.freeze_freq.value_or(0), b.seed);
  });

  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  std::ostringstream acc, spd;
  acc << kAccuracyCsvHeader << "\n";
  spd << kSpeedupCsvHeader << "\n";
  for (const RunSummary& s : runs) {
    const std::string ff = s.freeze_freq ? std::to_string(*s.freeze_freq) : "";
    acc << s.mode << "," << num(s.ratio) << "," << ff << "," << s.seed << "," << num(s.fp_accuracy) << ","
        << num(s.ptq_accuracy) << "," << num(s.final_accuracy) << "\n";
    spd << s.mode << "," << num(s.ratio) << "," << s.seed << "," << num(s.theoretical_speedup) << ","
        << s.theoretical_bwd_macs << "," << s.measured_bwd_macs << "," << num(s.bwd_seconds) << "\n";
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());
  res.accuracy_path = (fs::path(out_dir) / "accuracy_vs_ratio.csv").string();
  res.speedup_path = (fs::path(out_dir) / "speedup_vs_ratio.csv").string();
  write_text(res.accuracy_path, acc.str());
  write_text(res.speedup_path, spd.str());
  res.rows = runs.size();
  return res;
}

}  // namespace efqat
