/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef DSFACTO_H
#define DSFACTO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DSF_TASK_REGRESSION 0

#define DSF_TASK_CLASSIFICATION 1

#define DSF_LOSS_SQUARED 0

#define DSF_LOSS_LOGISTIC 1

#define DSF_MODE_SERIAL_BATCH 0

#define DSF_MODE_SERIAL_INCREMENTAL 1

#define DSF_MODE_DSFACTO 2

#define DSF_ROUTING_RING 0

#define DSF_ROUTING_RANDOM 1

typedef enum DsfStatus {
  DSF_STATUS_OK = 0,
  // A required pointer argument was null.
  DSF_STATUS_NULL = 1,
  DSF_STATUS_INVALID_ARGUMENT = 2,
  DSF_STATUS_PARSE = 3,
  DSF_STATUS_IO = 4,
  DSF_STATUS_RUNTIME = 5,
  // A Rust panic was caught at the boundary.
  DSF_STATUS_PANIC = 6,
} DsfStatus;

// Opaque dataset handle.
typedef struct DsfDataset DsfDataset;

// Opaque model handle.
typedef struct DsfModel DsfModel;

// Training settings. Fill with `dsf_train_config_default` before changing
// individual fields.
typedef struct DsfTrainConfig {
  // One of the `DSF_TASK_*` constants.
  uint32_t task;
  // One of the `DSF_LOSS_*` constants.
  uint32_t loss;
  // One of the `DSF_MODE_*` constants.
  uint32_t mode;
  // One of the `DSF_ROUTING_*` constants.
  uint32_t routing;
  size_t k;
  size_t epochs;
  size_t workers;
  double eta;
  double decay;
  double lambda_w;
  double lambda_v;
  double init_sd;
  uint64_t seed;
  bool local_a_refresh;
  bool deterministic;
} DsfTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *dsf_version(void);

// Message for the last failed call on this thread, or NULL after a
// successful call. The pointer stays valid until the next `dsf_*` call on
// the same thread.
const char *dsf_last_error_message(void);

// Writes the library defaults (dsfacto mode, one worker, ring routing) for
// `task` into `out`.
//
// # Safety
// `out` must be null or point to writable memory for one `DsfTrainConfig`.
enum DsfStatus dsf_train_config_default(uint32_t task, struct DsfTrainConfig *out);

// Loads a LIBSVM file. `dim = 0` infers the dimension from the largest
// index.
//
// # Safety
// `path` must be null or a NUL-terminated string; `out` must be null or
// point to writable storage for one pointer.
enum DsfStatus dsf_dataset_load_libsvm(const char *path,
                                       uint32_t task,
                                       size_t dim,
                                       struct DsfDataset **out);

// Builds a dataset from compressed sparse rows. Row `i` holds entries
// `row_ptr[i]..row_ptr[i+1]` of `indices` (1-based) and `values`.
//
// # Safety
// `row_ptr` must hold `n + 1` entries, `labels` `n` entries, and
// `indices` / `values` `row_ptr[n]` entries each.
enum DsfStatus dsf_dataset_from_csr(size_t n,
                                    const size_t *row_ptr,
                                    const uint32_t *indices,
                                    const double *values,
                                    const double *labels,
                                    size_t dim,
                                    uint32_t task,
                                    struct DsfDataset **out);

// Number of examples, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t dsf_dataset_len(const struct DsfDataset *ds);

// Feature dimension, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t dsf_dataset_dim(const struct DsfDataset *ds);

// # Safety
// `ds` must be null or a handle not yet freed.
void dsf_dataset_free(struct DsfDataset *ds);

// Trains a model. `test` may be null. When `final_objective` is non-null
// it receives the training objective of the returned model.
//
// # Safety
// Handles must be live; `config` must point to an initialized config;
// `out` must be null or writable; `final_objective` null or writable.
enum DsfStatus dsf_train(const struct DsfTrainConfig *config,
                         const struct DsfDataset *train,
                         const struct DsfDataset *test,
                         struct DsfModel **out,
                         double *final_objective);

// # Safety
// `model` must be null or a live handle.
size_t dsf_model_dim(const struct DsfModel *model);

// # Safety
// `model` must be null or a live handle.
size_t dsf_model_k(const struct DsfModel *model);

// Writes the raw score of every example in `ds` to `out[0..len)`.
//
// # Safety
// Handles must be live; `out` must hold `out_len` doubles.
enum DsfStatus dsf_model_score(const struct DsfModel *model,
                               const struct DsfDataset *ds,
                               double *out,
                               size_t out_len);

// RMSE (regression) or accuracy (classification) of `model` on `ds`.
//
// # Safety
// Handles must be live; `out` must be null or writable.
enum DsfStatus dsf_model_evaluate(const struct DsfModel *model,
                                  const struct DsfDataset *ds,
                                  double *out);

// Copies the parameters out. `w` receives `dim` values and `v` receives
// `dim * k` values in row-major order (row `j - 1` for feature `j`). Any
// of the output pointers may be null to skip that part.
//
// # Safety
// `model` must be live; non-null outputs must hold the stated lengths.
enum DsfStatus dsf_model_params(const struct DsfModel *model,
                                double *w0,
                                double *w,
                                size_t w_len,
                                double *v,
                                size_t v_len);

// # Safety
// `model` must be null or a handle not yet freed.
void dsf_model_free(struct DsfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSFACTO_H */
