/* SPDX-License-Identifier: Apache-2.0 */
#ifndef NOPKIT_NOPKIT_H
#define NOPKIT_NOPKIT_H

/*
 * C interface of the nopkit shared library.
 *
 * Every function returns a status code. On failure a message describing the
 * error is available from nopkit_last_error() until the next call on the same
 * thread. Handles are opaque and owned by the caller, who releases them with
 * the matching *_free function (passing NULL is allowed).
 */

#include <stddef.h>
#include <stdint.h>

#if defined(NOPKIT_BUILDING)
#define NOPKIT_API __attribute__((visibility("default")))
#else
#define NOPKIT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nopkit_status {
    NOPKIT_OK = 0,
    NOPKIT_ERR_INTERNAL = 1,
    NOPKIT_ERR_CONFIG = 2,
    NOPKIT_ERR_SOLVER = 3,
    NOPKIT_ERR_DIVERGENCE = 4,
    NOPKIT_ERR_IO = 5,
    NOPKIT_ERR_SHAPE = 6,
    NOPKIT_ERR_CONTRACT = 7,
    NOPKIT_ERR_PLAN = 8,
    NOPKIT_ERR_OPTIMIZER = 9,
    NOPKIT_ERR_ARGUMENT = 10
} nopkit_status;

typedef struct nopkit_config nopkit_config;
typedef struct nopkit_model nopkit_model;

NOPKIT_API const char* nopkit_version(void);
NOPKIT_API const char* nopkit_status_name(nopkit_status status);
/* Message of the last failed call on this thread ("" if none). */
NOPKIT_API const char* nopkit_last_error(void);
/* Caps worker threads for every parallel section (0 = hardware concurrency). */
NOPKIT_API void nopkit_set_threads(size_t threads);

/* ---- Configuration ------------------------------------------------------ */

/* Reads an INI file (path may be NULL for all defaults) and applies
 * "section.key=value" overrides in order. */
NOPKIT_API nopkit_status nopkit_config_load(const char* path, const char* const* overrides, size_t n_overrides,
                                            nopkit_config** out);
NOPKIT_API nopkit_status nopkit_config_parse(const char* text, const char* const* overrides, size_t n_overrides,
                                             nopkit_config** out);
/* Canonical text. Writes at most cap bytes including the terminator; *len
 * receives the full length without terminator, so a call with cap = 0 sizes
 * the buffer. */
NOPKIT_API nopkit_status nopkit_config_dump(const nopkit_config* cfg, char* buf, size_t cap, size_t* len);
NOPKIT_API void nopkit_config_free(nopkit_config* cfg);

/* ---- Commands ----------------------------------------------------------- */

/* Generates n samples from seed into out_dir (inputs.ntns, outputs.ntns, manifest.txt). */
NOPKIT_API nopkit_status nopkit_gen_data(const nopkit_config* cfg, size_t n, uint64_t seed, const char* out_dir);

typedef struct nopkit_epoch {
    size_t epoch;
    double train_loss;
    double test_l2;
    double test_h1;
    double lr;
    double seconds;
} nopkit_epoch;

typedef void (*nopkit_epoch_fn)(const nopkit_epoch* row, void* user);

/* Trains on the dataset in data_dir and writes out_dir/checkpoint,
 * out_dir/metrics.csv and out_dir/config.ini. The model is initialized and the
 * batches are shuffled from train.seed. A dataset finer than data.resolution by
 * an integer factor is subsampled. on_epoch may be NULL. */
NOPKIT_API nopkit_status nopkit_train(const nopkit_config* cfg, const char* data_dir, const char* out_dir,
                                      nopkit_epoch_fn on_epoch, void* user);

/* ---- Models ------------------------------------------------------------- */

NOPKIT_API nopkit_status nopkit_model_load(const char* checkpoint_dir, nopkit_model** out);
/* Randomly initialized model of a configuration. */
NOPKIT_API nopkit_status nopkit_model_create(const nopkit_config* cfg, uint64_t seed, nopkit_model** out);
NOPKIT_API nopkit_status nopkit_model_save(const nopkit_model* model, const char* checkpoint_dir);
NOPKIT_API void nopkit_model_free(nopkit_model* model);

typedef struct nopkit_info {
    size_t d;
    size_t width;
    size_t layers;
    size_t param_count;       /* complex entries counted once */
    size_t dense_param_count; /* same architecture with dense spectral weights */
    double model_compression;
    double weight_compression;
    char form[8];
    int multigrid;
    size_t mg_levels;
    size_t mg_padding;
    size_t mg_regions;
    size_t mg_grid_extent;
    double domain_compression;
} nopkit_info;

NOPKIT_API nopkit_status nopkit_model_info(const nopkit_model* model, nopkit_info* out);
/* Accounting of a configuration without allocating its weights. */
NOPKIT_API nopkit_status nopkit_config_info(const nopkit_config* cfg, nopkit_info* out);
/* Human-readable report; buffer protocol as nopkit_config_dump. */
NOPKIT_API nopkit_status nopkit_model_describe(const nopkit_model* model, char* buf, size_t cap, size_t* len);
NOPKIT_API nopkit_status nopkit_config_describe(const nopkit_config* cfg, char* buf, size_t cap, size_t* len);

/* Forward pass of a batch [shape[0], ..., channels] (row-major). output must
 * hold out_cap doubles; *out_len receives the number written. Multi-grid
 * checkpoints run through their decomposition plan. */
NOPKIT_API nopkit_status nopkit_model_predict(const nopkit_model* model, const double* input, const size_t* shape,
                                              size_t ndim, double* output, size_t out_cap, size_t* out_len);

typedef struct nopkit_eval_row {
    size_t resolution;
    double rel_l2;
    double rel_h1;
} nopkit_eval_row;

/* Relative errors on the dataset in data_dir at each requested resolution
 * (other resolutions by band-limited resampling). last > 0 restricts the
 * evaluation to the trailing `last` samples (the held-out split of training).
 * rows holds n entries. */
NOPKIT_API nopkit_status nopkit_eval(const nopkit_model* model, const char* data_dir, size_t last,
                                     const size_t* resolutions, size_t n, nopkit_eval_row* rows);

#ifdef __cplusplus
}
#endif

#endif /* NOPKIT_NOPKIT_H */
