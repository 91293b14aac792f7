/* Copyright 2026 The efqat Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/* Stable C interface to the efqat engine.
 *
 * Every call returns an efqat_status. On failure efqat_last_error() holds a
 * message for the calling thread until its next failing call. Strings handed
 * out through char** must be released with efqat_free_string. */

#ifndef EFQAT_EFQAT_H_
#define EFQAT_EFQAT_H_

#include <stddef.h>
#include <stdint.h>

#if defined(EFQAT_BUILDING_LIBRARY)
#define EFQAT_API __attribute__((visibility("default")))
#else
#define EFQAT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum efqat_status {
  EFQAT_OK = 0,
  EFQAT_ERR_DIMENSION = 1,
  EFQAT_ERR_CONFIG = 2,
  EFQAT_ERR_CONTRACT = 3,
  EFQAT_ERR_DEGENERATE_RANGE = 4,
  EFQAT_ERR_IO = 5,
  EFQAT_ERR_PARSE = 6,
  EFQAT_ERR_CHECKPOINT = 7,
  EFQAT_ERR_DIVERGED = 8,
  EFQAT_ERR_RECONCILE = 9,
  EFQAT_ERR_INVALID_ARGUMENT = 10,
  EFQAT_ERR_INTERNAL = 11
} efqat_status;

typedef struct efqat_experiment efqat_experiment;

typedef struct efqat_bwd_macs {
  uint64_t weight;
  uint64_t input;
} efqat_bwd_macs;

EFQAT_API const char* efqat_version(void);
EFQAT_API const char* efqat_status_name(efqat_status status);
EFQAT_API const char* efqat_last_error(void);
EFQAT_API void efqat_free_string(char* s);

/* config_path may be NULL for the built-in defaults. */
EFQAT_API efqat_status efqat_experiment_create(const char* config_path, efqat_experiment** out);
EFQAT_API efqat_status efqat_experiment_create_from_json(const char* json_text, efqat_experiment** out);
EFQAT_API void efqat_experiment_destroy(efqat_experiment* exp);

/* Keys match the long command-line flags without dashes:
 * mode, ratio, freeze-freq, bits-w, bits-a, epochs, batch-size, seed, lr,
 * qparam-lr, qparam-transform, calib-size, out, checkpoint, dump-plan. */
EFQAT_API efqat_status efqat_experiment_set_option(efqat_experiment* exp, const char* key, const char* value);
/* Progress lines go to stderr when enabled (default off). */
EFQAT_API efqat_status efqat_experiment_set_log(efqat_experiment* exp, int enabled);
/* Resolved configuration as JSON. */
EFQAT_API efqat_status efqat_experiment_config(const efqat_experiment* exp, char** json_out);

/* Each run writes its artifacts under the configured output directory and
 * returns the run summary as JSON. */
EFQAT_API efqat_status efqat_run_calibrate(efqat_experiment* exp, char** summary_json);
EFQAT_API efqat_status efqat_run_train(efqat_experiment* exp, char** summary_json);
EFQAT_API efqat_status efqat_run_eval(efqat_experiment* exp, char** summary_json);
/* Returns the rendered cost tables; cost.json holds the structured form. */
EFQAT_API efqat_status efqat_run_cost(efqat_experiment* exp, char** tables);

/* Aggregates summary.json from each run directory into two CSV files under
 * out_dir. warnings_json (optional) receives a JSON array of strings. */
EFQAT_API efqat_status efqat_plot_data(const char* const* run_dirs, size_t n_dirs, const char* out_dir,
                                       size_t* rows, char** warnings_json);

EFQAT_API efqat_status efqat_ops_linear_bwd(uint64_t c_in, uint64_t c_out, uint64_t m, double ratio,
                                            efqat_bwd_macs* out);
EFQAT_API efqat_status efqat_ops_conv_bwd(uint64_t c_in, uint64_t c_out, uint64_t k, uint64_t h_out, uint64_t w_out,
                                          uint64_t n, double ratio, efqat_bwd_macs* out);

#ifdef __cplusplus
}
#endif

#endif /* EFQAT_EFQAT_H_ */
