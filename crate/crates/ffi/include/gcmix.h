/* C interface for the gcmix Gaussian copula library. */

#ifndef GCMIX_H
#define GCMIX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define GCMIX_OK 0

/**
 * A required pointer argument was null.
 */
#define GCMIX_ERR_NULL_ARGUMENT 1

/**
 * A string argument was not valid UTF-8.
 */
#define GCMIX_ERR_UTF8 2

/**
 * File could not be read or written.
 */
#define GCMIX_ERR_IO 3

/**
 * Model file rejected (bad format, version, or inconsistent contents).
 */
#define GCMIX_ERR_MODEL 4

/**
 * An argument had the wrong length or an index was out of range.
 */
#define GCMIX_ERR_DIMENSION 5

/**
 * Numerical failure (covariance not positive definite, bad data value).
 */
#define GCMIX_ERR_NUMERIC 6

/**
 * Unexpected internal failure.
 */
#define GCMIX_ERR_INTERNAL 7

/**
 * Impute discrete cells with the most probable category.
 */
#define GCMIX_RULE_ARGMAX 0

/**
 * Impute binary/ordinal cells with the distribution median.
 */
#define GCMIX_RULE_MEDIAN 1

/**
 * An opaque fitted-model handle.
 */
typedef struct GcmixModel GcmixModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread.
 *
 * The pointer stays valid until the next failing call on the same thread.
 * Never returns null.
 */
const char *gcmix_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gcmix_version(void);

/**
 * Loads a fitted model from the JSON file written by `gcmix fit`.
 *
 * On success writes a handle to `*out`; free it with [`gcmix_model_free`].
 * # Safety
 *
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t gcmix_model_load(const char *path, struct GcmixModel **out);

/**
 * Frees a model handle. Passing null is a no-op.
 * # Safety
 *
 * `model` must be a handle from [`gcmix_model_load`] not yet freed, or null.
 */
void gcmix_model_free(struct GcmixModel *model);

/**
 * Number of variables (CSV columns) the model was fitted on.
 * # Safety
 *
 * `model` must be a live handle or null.
 */
uintptr_t gcmix_model_n_variables(const struct GcmixModel *model);

/**
 * Number of categories of variable `index`: 1 for continuous, 2 for
 * binary, the level count for ordinal/multinomial. Returns 0 if the
 * handle is null or the index is out of range.
 * # Safety
 *
 * `model` must be a live handle or null.
 */
uintptr_t gcmix_model_n_categories(const struct GcmixModel *model, uintptr_t index);

/**
 * Copies the name of variable `index` into `buf` (NUL-terminated,
 * truncated to `buf_len`). Returns the full name length in bytes,
 * excluding the terminator, or -1 on a bad handle or index.
 * # Safety
 *
 * `model` must be a live handle or null; `buf` must point to `buf_len` writable bytes (or be null).
 */
intptr_t gcmix_model_variable_name(const struct GcmixModel *model,
                                   uintptr_t index,
                                   char *buf,
                                   uintptr_t buf_len);

/**
 * Copies the latent correlation matrix (row-major, `w x w` where `w` is
 * the latent dimension) into `out`, which must hold `out_len` doubles.
 * Returns the latent dimension, or -1 if the handle is null, or -2 if
 * `out` is too small (call with `out` null to query the size).
 * # Safety
 *
 * `model` must be a live handle or null; `out` must point to `out_len` writable doubles (or be null).
 */
intptr_t gcmix_model_latent_correlation(const struct GcmixModel *model,
                                        double *out,
                                        uintptr_t out_len);

/**
 * Imputes one row in place semantics: reads `n` doubles from `values`
 * (NaN marks a missing cell) and writes the completed row to `out`
 * (also `n` doubles; `values` and `out` may alias). `rule` is
 * `GCMIX_RULE_ARGMAX` or `GCMIX_RULE_MEDIAN`. `row_index` seeds the
 * integration, so a fixed (model, row_index, values) triple always
 * produces identical output; use the row's position in your dataset to
 * match the CLI's `impute` command.
 * # Safety
 *
 * `model` must be a live handle; `values` must point to `n` readable doubles and `out` to `n` writable ones.
 */
int32_t gcmix_impute_row(const struct GcmixModel *model,
                         const double *values,
                         uintptr_t n,
                         int32_t rule,
                         uintptr_t row_index,
                         double *out);

/**
 * Conditional category probabilities for one missing discrete cell.
 *
 * `values` is the row as in [`gcmix_impute_row`]; `column` must be a
 * discrete variable whose entry is NaN. Writes
 * `gcmix_model_n_categories(model, column)` probabilities to `probs`
 * (capacity `probs_len`).
 * # Safety
 *
 * `model` must be a live handle; `values` must point to `n` readable doubles and `probs` to `probs_len` writable ones.
 */
int32_t gcmix_cell_probabilities(const struct GcmixModel *model,
                                 const double *values,
                                 uintptr_t n,
                                 uintptr_t column,
                                 uintptr_t row_index,
                                 double *probs,
                                 uintptr_t probs_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GCMIX_H */
