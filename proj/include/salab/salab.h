#ifndef SALAB_H
#define SALAB_H

/* C interface to the sparse-attention text classification library.
 *
 * Every function returns a salab_status. On failure the message is
 * available from salab_last_error() on the same thread until the next call.
 * Strings are copied out with the (buf, cap, needed) convention: `needed`
 * receives the length including the terminating NUL, and a buffer that is
 * too small gives SALAB_ERR_OUT_OF_RANGE without writing.
 */

#include <stddef.h>

#if defined(_WIN32)
#define SALAB_API __declspec(dllexport)
#else
#define SALAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum salab_status {
  SALAB_OK = 0,
  SALAB_ERR_INVALID_ARGUMENT = 1,
  SALAB_ERR_SHAPE = 2,
  SALAB_ERR_OUT_OF_RANGE = 3,
  SALAB_ERR_EMPTY = 4,
  SALAB_ERR_CONFIG = 5,
  SALAB_ERR_IO = 6,
  SALAB_ERR_POISONED_GRADIENT = 7,
  SALAB_ERR_UNDEFINED_METRIC = 8,
  SALAB_ERR_FORMAT = 9,
  SALAB_ERR_CAPACITY = 10,
  SALAB_ERR_INTERNAL = 11
} salab_status;

SALAB_API const char* salab_status_name(salab_status status);
SALAB_API const char* salab_last_error(void);
SALAB_API const char* salab_version(void);

/* Run configuration: key=value settings layered over the defaults. Keys
 * accept '-' in place of '_' (embed-dim == embed_dim). */
typedef struct salab_config salab_config;

SALAB_API salab_status salab_config_create(salab_config** out);
SALAB_API void salab_config_destroy(salab_config* cfg);
/* Unknown keys and malformed values are rejected immediately. */
SALAB_API salab_status salab_config_set(salab_config* cfg, const char* key, const char* value);
/* Reads a key=value file into cfg; keys set later override it. */
SALAB_API salab_status salab_config_load(salab_config* cfg, const char* path);
SALAB_API salab_status salab_config_get(const salab_config* cfg, const char* key, char* buf,
                                        size_t cap, size_t* needed);
/* The fully resolved configuration as key=value text. */
SALAB_API salab_status salab_config_dump(const salab_config* cfg, char* buf, size_t cap,
                                         size_t* needed);

/* Runs gen-data, train, eval, gradcheck or heatmap, logging to stdout.
 * `outcome` (optional) receives 0, or 1 when gradcheck found a failing
 * check. */
SALAB_API salab_status salab_run(const char* command, const salab_config* cfg, int* outcome);

/* Simplex mappings by name: softmax, sparsemax, entmax15, entmax,
 * entmax:<alpha>. */
SALAB_API salab_status salab_map(const char* mapping, const double* z, size_t n, double* p);
/* Vector-Jacobian product at output p for upstream gradient u. */
SALAB_API salab_status salab_map_backward(const char* mapping, const double* p, const double* u,
                                          size_t n, double* dz);

/* Metrics over n (score, label) pairs; ties in ranking break by index. */
SALAB_API salab_status salab_auc_roc(const double* scores, const int* labels, size_t n,
                                     double* out);
SALAB_API salab_status salab_auc_pr(const double* scores, const int* labels, size_t n,
                                    double* out);
SALAB_API salab_status salab_brier(const double* scores, const int* labels, size_t n,
                                   double* out);

/* A trained classifier loaded from a checkpoint. */
typedef struct salab_model salab_model;

/* `mapping` may be NULL to keep the stored one. */
SALAB_API salab_status salab_model_load(const char* checkpoint, const char* mapping,
                                        salab_model** out);
SALAB_API void salab_model_destroy(salab_model* model);
SALAB_API salab_status salab_model_mapping(const salab_model* model, char* buf, size_t cap,
                                           size_t* needed);
/* Probabilities for the documents of a JSON Lines file, in file order.
 * Documents empty after truncation get NaN. `count` receives the number of
 * documents; with cap < count nothing is written and OUT_OF_RANGE is
 * returned. */
SALAB_API salab_status salab_model_score(salab_model* model, const char* vocab_path,
                                         const char* jsonl_path, double* probs, size_t cap,
                                         size_t* count);

#ifdef __cplusplus
}
#endif

#endif
