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

// efqat command-line driver. Talks to the engine only through efqat.h.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "efqat/efqat.h"

namespace {

// Flags forwarded verbatim to efqat_experiment_set_option.
struct Flag {
  const char* name;
  const char* help;
};

// Forwarded verbatim to efqat_experiment_set_option.
constexpr Flag kRunFlags[] = {
    {"ratio", "Unfrozen fraction in [0, 1]"},
    {"freeze-freq", "Samples between freeze-plan refreshes (0: never)"},
    {"bits-w", "Weight bit-width"},
    {"bits-a", "Activation bit-width"},
    {"epochs", "Training epochs"},
    {"seed", "Seed for data order, init and synthetic data"},
    {"lr", "SGD learning rate for weights, biases and normalize params"},
    {"qparam-lr", "Adam learning rate for scales and zero points"},
    {"calib-size", "Calibration samples (default 512)"},
    {"out", "Output directory"},
    {"checkpoint", "Starting checkpoint"},
    {"batch-size", "Mini-batch size"},
};

struct RunArgs {
  std::string config;
  bool quiet = false;
  std::vector<std::pair<std::string, std::string>> values;  // filled in flag order
};

int exit_code(efqat_status s) {
  switch (s) {
    case EFQAT_OK: return 0;
    case EFQAT_ERR_CONFIG:
    case EFQAT_ERR_PARSE:
    case EFQAT_ERR_INVALID_ARGUMENT: return 2;
    default: return 1;
  }
}

int report(efqat_status s) {
  std::cerr << "efqat: " << efqat_status_name(s) << " error: " << efqat_last_error() << "\n";
  return exit_code(s);
}

CLI::App* add_run_command(CLI::App& app, const char* name, const char* help, RunArgs& args) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", args.config, "JSON experiment config (defaults apply when omitted)");
  sub->add_flag("--quiet", args.quiet, "Suppress progress lines on stderr");
  sub->add_option_function<std::string>(
         "--mode", [&args](const std::string& v) { args.values.emplace_back("mode", v); },
         "fp, fp+1, ptq, qat, efqat-cwpl, efqat-cwpn or efqat-lwpn")
      ->check(CLI::IsMember({"fp", "fp+1", "ptq", "qat", "efqat-cwpl", "efqat-cwpn", "efqat-lwpn"}));
  sub->add_option_function<std::string>(
         "--qparam-transform", [&args](const std::string& v) { args.values.emplace_back("qparam-transform", v); },
         "Scale parametrization: raw or log2")
      ->check(CLI::IsMember({"raw", "log2"}));
  sub->add_flag_callback("--dump-plan", [&args] { args.values.emplace_back("dump-plan", "true"); },
                         "Write the final freeze plan to plan.txt (train)");
  for (const Flag& f : kRunFlags) {
    const std::string key = f.name;
    sub->add_option_function<std::string>(
        "--" + key, [&args, key](const std::string& v) { args.values.emplace_back(key, v); }, f.help);
  }
  return sub;
}

efqat_status make_experiment(const RunArgs& args, efqat_experiment** exp) {
  efqat_status s = efqat_experiment_create(args.config.empty() ? nullptr : args.config.c_str(), exp);
  if (s != EFQAT_OK) return s;
  for (const auto& [key, value] : args.values) {
    s = efqat_experiment_set_option(*exp, key.c_str(), value.c_str());
    if (s != EFQAT_OK) return s;
  }
  return efqat_experiment_set_log(*exp, args.quiet ? 0 : 1);
}

int run(const RunArgs& args, efqat_status (*fn)(efqat_experiment*, char**)) {
  efqat_experiment* exp = nullptr;
  efqat_status s = make_experiment(args, &exp);
  char* out = nullptr;
  if (s == EFQAT_OK) s = fn(exp, &out);
  efqat_experiment_destroy(exp);
  if (s != EFQAT_OK) return report(s);
  std::fputs(out, stdout);
  efqat_free_string(out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"efqat: efficient quantization-aware training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", efqat_version());

  RunArgs calib_args, train_args, eval_args, cost_args;
  CLI::App* calibrate = add_run_command(app, "calibrate", "Calibrate an FP model into a PTQ checkpoint", calib_args);
  CLI::App* train = add_run_command(app, "train", "Train in the selected mode", train_args);
  CLI::App* eval = add_run_command(app, "eval", "Evaluate a checkpoint on the eval split", eval_args);
  CLI::App* cost = add_run_command(app, "cost", "Backward MAC tables over the ratio grid", cost_args);

  std::vector<std::string> run_dirs;
  std::string plot_out = "plots";
  CLI::App* plot = app.add_subcommand("plot-data", "Aggregate run summaries into CSV tables");
  plot->add_option("runs", run_dirs, "Run output directories");
  plot->add_option("--out", plot_out, "Directory for the CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (calibrate->parsed()) return run(calib_args, efqat_run_calibrate);
  if (train->parsed()) return run(train_args, efqat_run_train);
  if (eval->parsed()) return run(eval_args, efqat_run_eval);
  if (cost->parsed()) return run(cost_args, efqat_run_cost);

  std::vector<const char*> dirs;
  for (const auto& d : run_dirs) dirs.push_back(d.c_str());
  size_t rows = 0;
  char* warnings = nullptr;
  const efqat_status s = efqat_plot_data(dirs.data(), dirs.size(), plot_out.c_str(), &rows, &warnings);
  if (s != EFQAT_OK) return report(s);
  if (std::string(warnings) != "[]") std::cerr << "efqat: warnings " << warnings << "\n";
  std::cout << "wrote " << rows << " rows to " << plot_out << "/accuracy_vs_ratio.csv and " << plot_out
            << "/speedup_vs_ratio.csv\n";
  efqat_free_string(warnings);
  return 0;
}
