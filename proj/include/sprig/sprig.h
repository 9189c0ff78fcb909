/* C interface to the SPRIG training library.
 *
 * All functions return sprig_status; on failure sprig_last_error() carries a
 * human-readable message for the calling thread. Objects are opaque handles
 * released with their matching _free function.
 */
#ifndef SPRIG_SPRIG_H_
#define SPRIG_SPRIG_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SPRIG_API __declspec(dllexport)
#else
#define SPRIG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as CLI exit codes. */
typedef enum sprig_status {
  SPRIG_OK = 0,
  SPRIG_VERIFY_FAILED = 1, /* a property suite reported a failing property */
  SPRIG_CONFIG_ERROR = 2,  /* bad key, value, range, file or argument */
  SPRIG_RUNTIME_ERROR = 3  /* any other failure during execution */
} sprig_status;

SPRIG_API const char* sprig_version(void);

/* Message from the most recent failing call on this thread ("" if none). */
SPRIG_API const char* sprig_last_error(void);

/* Frees strings returned through char** out-parameters. */
SPRIG_API void sprig_string_free(char* s);

/* --- training configuration ------------------------------------------- */

typedef struct sprig_config sprig_config;

/* Defaults for every hyperparameter. */
SPRIG_API sprig_status sprig_config_create(sprig_config** out);
/* Flat "key = value" file; unknown keys and range violations are rejected. */
SPRIG_API sprig_status sprig_config_load(const char* path, sprig_config** out);
SPRIG_API sprig_status sprig_config_set(sprig_config* cfg, const char* key, const char* value);
SPRIG_API sprig_status sprig_config_get(const sprig_config* cfg, const char* key, char** value);
SPRIG_API sprig_status sprig_config_save(const sprig_config* cfg, const char* path);
/* 16-hex-digit hash of the full config snapshot. */
SPRIG_API sprig_status sprig_config_hash(const sprig_config* cfg, char** hash);
SPRIG_API void sprig_config_free(sprig_config* cfg);

/* --- training / evaluation --------------------------------------------- */

/* One full training run. Writes metrics.csv, timing.csv, manifest.txt and
 * checkpoints under out_dir. Deterministic in (config, seed). */
SPRIG_API sprig_status sprig_train_run(const sprig_config* cfg, uint64_t run_seed,
                                       const char* out_dir);

/* Derives the seed of run `index` from a master seed. */
SPRIG_API uint64_t sprig_derive_seed(uint64_t master_seed, uint64_t index);

/* Greedy-policy evaluation of a checkpoint. env_id NULL keeps the
 * environment recorded in the checkpoint. */
SPRIG_API sprig_status sprig_evaluate(const char* checkpoint_path, const char* env_id,
                                      int episodes, uint64_t seed, double* mean_return,
                                      double* std_return);

/* --- verification ------------------------------------------------------ */

/* suite: "tabular", "gradients", "gae" or "all". *report receives the
 * per-property pass/fail text. Returns SPRIG_VERIFY_FAILED when any
 * property fails. */
SPRIG_API sprig_status sprig_verify(const char* suite, uint64_t master_seed, char** report);

/* --- curve export ------------------------------------------------------ */

/* Aggregates per-seed metrics.csv files into (mode, step, mean, std) rows. */
SPRIG_API sprig_status sprig_export_curves(const char* const* metrics_paths, size_t n_paths,
                                           const char* out_csv);

/* --- exact tabular engine ----------------------------------------------- */

typedef struct sprig_tabular_game sprig_tabular_game;

SPRIG_API sprig_status sprig_tabular_game_load(const char* path, sprig_tabular_game** out);
SPRIG_API void sprig_tabular_game_free(sprig_tabular_game* game);
SPRIG_API sprig_status sprig_tabular_dims(const sprig_tabular_game* game, uint32_t* n_states,
                                          uint32_t* n_actions);

/* Runs value iteration with the Stackelberg-Bellman operator. `values`, when
 * non-NULL, receives the fixed point (n_states * n_actions doubles, s-major).
 */
SPRIG_API sprig_status sprig_tabular_value_iteration(const sprig_tabular_game* game, double tol,
                                                     uint64_t max_iters, double* values,
                                                     uint64_t* iterations, double* final_residual);

/* ||T_S f1 - T_S f2||_inf / ||f1 - f2||_inf for caller-provided tables. */
SPRIG_API sprig_status sprig_tabular_contraction_ratio(const sprig_tabular_game* game,
                                                       const double* f1, const double* f2,
                                                       double* ratio);

#ifdef __cplusplus
}
#endif

#endif /* SPRIG_SPRIG_H_ */
