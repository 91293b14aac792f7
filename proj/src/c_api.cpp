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

#include "efqat/efqat.h"

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <new>
#include <string>
#include <vector>

#include "efqat/config.hpp"
#include "efqat/cost_model.hpp"
#include "efqat/error.hpp"
#include "efqat/experiment.hpp"
#include "json_io.hpp"

struct efqat_experiment {
  efqat::ExperimentConfig cfg;
  bool log = false;
};

namespace {

thread_local std::string g_last_error;

efqat_status fail(efqat_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <typename F>
efqat_status guarded(F&& f) {
  try {
    f();
    return EFQAT_OK;
  } catch (const efqat::Error& e) {
    return fail(static_cast<efqat_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(EFQAT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(EFQAT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(EFQAT_ERR_INTERNAL, "unknown exception");
  }
}

#define EFQAT_REQUIRE(cond, what) \
  if (!(cond)) return fail(EFQAT_ERR_INVALID_ARGUMENT, what)

efqat_status run(efqat_experiment* exp, char** out, efqat::RunSummary (efqat::Experiment::*fn)()) {
  EFQAT_REQUIRE(exp && out, "experiment and output pointer must not be null");
  *out = nullptr;
  return guarded([&] {
    efqat::Experiment e(exp->cfg, exp->log ? &std::cerr : nullptr);
    *out = dup_string(efqat::summary_to_json((e.*fn)()));
  });
}

}  // namespace

extern "C" {

const char* efqat_version(void) { return "0.1.0"; }

const char* efqat_status_name(efqat_status status) {
  switch (status) {
    case EFQAT_OK: return "ok";
    case EFQAT_ERR_DIMENSION: return "dimension";
    case EFQAT_ERR_CONFIG: return "config";
    case EFQAT_ERR_CONTRACT: return "contract";
    case EFQAT_ERR_DEGENERATE_RANGE: return "degenerate-range";
    case EFQAT_ERR_IO: return "io";
    case EFQAT_ERR_PARSE: return "parse";
    case EFQAT_ERR_CHECKPOINT: return "checkpoint";
    case EFQAT_ERR_DIVERGED: return "diverged";
    case EFQAT_ERR_RECONCILE: return "reconcile";
    case EFQAT_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case EFQAT_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* efqat_last_error(void) { return g_last_error.c_str(); }

void efqat_free_string(char* s) { std::free(s); }

efqat_status efqat_experiment_create(const char* config_path, efqat_experiment** out) {
  EFQAT_REQUIRE(out, "output pointer must not be null");
  *out = nullptr;
  return guarded([&] {
    auto* e = new efqat_experiment;
    try {
      if (config_path) e->cfg = efqat::load_config(config_path);
    } catch (...) {
      delete e;
      throw;
    }
    *out = e;
  });
}

efqat_status efqat_experiment_create_from_json(const char* json_text, efqat_experiment** out) {
  EFQAT_REQUIRE(json_text && out, "json text and output pointer must not be null");
  *out = nullptr;
  return guarded([&] {
    efqat::ExperimentConfig cfg = efqat::parse_config(json_text, "json");
    *out = new efqat_experiment{std::move(cfg)};
  });
}

void efqat_experiment_destroy(efqat_experiment* exp) { delete exp; }

efqat_status efqat_experiment_set_option(efqat_experiment* exp, const char* key, const char* value) {
  EFQAT_REQUIRE(exp && key && value, "experiment, key and value must not be null");
  return guarded([&] {
    efqat::ExperimentConfig next = exp->cfg;
    efqat::set_option(next, key, value);
    exp->cfg = std::move(next);
  });
}

efqat_status efqat_experiment_set_log(efqat_experiment* exp, int enabled) {
  EFQAT_REQUIRE(exp, "experiment must not be null");
  exp->log = enabled != 0;
  return EFQAT_OK;
}

efqat_status efqat_experiment_config(const efqat_experiment* exp, char** json_out) {
  EFQAT_REQUIRE(exp && json_out, "experiment and output pointer must not be null");
  *json_out = nullptr;
  return guarded([&] { *json_out = dup_string(efqat::config_to_json(exp->cfg)); });
}

efqat_status efqat_run_calibrate(efqat_experiment* exp, char** summary_json) {
  return run(exp, summary_json, &efqat::Experiment::calibrate);
}

efqat_status efqat_run_train(efqat_experiment* exp, char** summary_json) {
  return run(exp, summary_json, &efqat::Experiment::train);
}

efqat_status efqat_run_eval(efqat_experiment* exp, char** summary_json) {
  return run(exp, summary_json, &efqat::Experiment::eval);
}

efqat_status efqat_run_cost(efqat_experiment* exp, char** tables) {
  EFQAT_REQUIRE(exp && tables, "experiment and output pointer must not be null");
  *tables = nullptr;
  return guarded([&] {
    efqat::Experiment e(exp->cfg, exp->log ? &std::cerr : nullptr);
    *tables = dup_string(e.cost());
  });
}

efqat_status efqat_plot_data(const char* const* run_dirs, size_t n_dirs, const char* out_dir, size_t* rows,
                             char** warnings_json) {
  EFQAT_REQUIRE(out_dir && (run_dirs || n_dirs == 0), "run directories and output directory must not be null");
  if (warnings_json) *warnings_json = nullptr;
  return guarded([&] {
    std::vector<std::string> dirs;
    for (size_t i = 0; i < n_dirs; ++i) {
      if (!run_dirs[i]) throw efqat::ConfigError("run directory " + std::to_string(i) + " is null");
      dirs.emplace_back(run_dirs[i]);
    }
    const efqat::PlotDataResult res = efqat::write_plot_data(dirs, out_dir);
    if (rows) *rows = res.rows;
    if (warnings_json) *warnings_json = dup_string(efqat::json(res.warnings).dump());
  });
}

efqat_status efqat_ops_linear_bwd(uint64_t c_in, uint64_t c_out, uint64_t m, double ratio, efqat_bwd_macs* out) {
  EFQAT_REQUIRE(out, "output pointer must not be null");
  return guarded([&] {
    const efqat::BackwardMacs b = efqat::ops_linear_bwd(c_in, c_out, m, ratio);
    *out = {b.weight, b.input};
  });
}

efqat_status efqat_ops_conv_bwd(uint64_t c_in, uint64_t c_out, uint64_t k, uint64_t h_out, uint64_t w_out, uint64_t n,
                                double ratio, efqat_bwd_macs* out) {
  EFQAT_REQUIRE(out, "output pointer must not be null");
  return guarded([&] {
    const efqat::BackwardMacs b = efqat::ops_conv_bwd(c_in, c_out, k, h_out, w_out, n, ratio);
    *out = {b.weight, b.input};
  });
}

}  // extern "C"
