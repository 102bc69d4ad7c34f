#ifndef BALANCEREG_H
#define BALANCEREG_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Model architecture selector.
 */
typedef enum BalanceregModelKind {
  BALANCEREG_MODEL_KIND_TWO_HEAD = 0,
  BALANCEREG_MODEL_KIND_SEPARATE_HEADS = 1,
} BalanceregModelKind;

/**
 * Prognostic-regularizer variant selector.
 */
typedef enum BalanceregPrgVariant {
  BALANCEREG_PRG_VARIANT_SOFT_KS = 0,
  BALANCEREG_PRG_VARIANT_SMD = 1,
} BalanceregPrgVariant;

/**
 * Status codes returned by every fallible function.
 */
typedef enum BalanceregStatus {
  BALANCEREG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  BALANCEREG_STATUS_NULL_POINTER = 1,
  /**
   * Invalid argument or contract violation (bad shapes, bad enum value,
   * invalid configuration).
   */
  BALANCEREG_STATUS_INVALID_ARGUMENT = 2,
  /**
   * File could not be read, written or parsed.
   */
  BALANCEREG_STATUS_IO = 3,
  /**
   * A numeric precondition failed (e.g. degenerate data).
   */
  BALANCEREG_STATUS_NUMERIC = 4,
  /**
   * Internal panic; the library state is still consistent.
   */
  BALANCEREG_STATUS_INTERNAL = 5,
} BalanceregStatus;

/**
 * Opaque handle to a loaded or generated dataset.
 */
typedef struct BalanceregDataset BalanceregDataset;

/**
 * Opaque handle to a trained model.
 */
typedef struct BalanceregModel BalanceregModel;

/**
 * Synthetic-generator configuration; mirrors the library defaults when
 * initialized with `balancereg_synth_config_default`.
 */
typedef struct BalanceregSynthConfig {
  uintptr_t n;
  uintptr_t d;
  double treated_fraction;
  double coefficient_sparsity;
  double noise_scale;
  double target_mean_effect;
  uint64_t seed;
} BalanceregSynthConfig;

/**
 * Training options; initialize with `balancereg_train_options_default`.
 */
typedef struct BalanceregTrainOptions {
  enum BalanceregModelKind model_kind;
  uint64_t seed;
  uintptr_t epochs;
  uintptr_t batch_size;
  double lr;
  double rho;
  double gamma;
  double lambda;
  enum BalanceregPrgVariant prg_variant;
} BalanceregTrainOptions;

/**
 * Cross-run error decomposition; `mse_mean = bias_sq + variance` exactly.
 */
typedef struct BalanceregMetrics {
  double bias_sq;
  double variance;
  double mse_mean;
  double mse_std;
} BalanceregMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the message for the most recent error on this thread into `buf`
 * (NUL-terminated, truncated to `cap` bytes). Returns the full message
 * length in bytes, excluding the terminator; call with `buf = NULL` or
 * `cap = 0` to query the length.
 */
uintptr_t balancereg_last_error(char *buf, uintptr_t cap);

/**
 * Fill `out` with the default synthetic-generator configuration.
 */
enum BalanceregStatus balancereg_synth_config_default(struct BalanceregSynthConfig *out);

/**
 * Generate a synthetic dataset. On success writes a new handle to `out`;
 * free it with `balancereg_dataset_free`.
 */
enum BalanceregStatus balancereg_dataset_synth(const struct BalanceregSynthConfig *config,
                                               struct BalanceregDataset **out);

/**
 * Load a dataset from a CSV file with columns
 * t, y_factual, y_cfactual, mu0, mu1, x1..xd. On success writes a new
 * handle to `out`; free it with `balancereg_dataset_free`.
 */
enum BalanceregStatus balancereg_dataset_from_csv(const char *path,
                                                  bool has_header,
                                                  struct BalanceregDataset **out);

/**
 * Number of units in the dataset; 0 if `dataset` is null.
 */
uintptr_t balancereg_dataset_len(const struct BalanceregDataset *dataset);

/**
 * Covariate dimension of the dataset; 0 if `dataset` is null.
 */
uintptr_t balancereg_dataset_dim(const struct BalanceregDataset *dataset);

/**
 * Destroy a dataset handle. Null is a no-op.
 */
void balancereg_dataset_free(struct BalanceregDataset *dataset);

/**
 * Fill `out` with the default training options (two-head model, 50 epochs,
 * batch 64, learning rate 1e-4, no balance regularization).
 */
enum BalanceregStatus balancereg_train_options_default(struct BalanceregTrainOptions *out);

/**
 * Train a model on every unit of `dataset`. On success writes a new handle
 * to `out`; free it with `balancereg_model_free`.
 */
enum BalanceregStatus balancereg_train(const struct BalanceregDataset *dataset,
                                       const struct BalanceregTrainOptions *options,
                                       struct BalanceregModel **out);

/**
 * Total number of trainable parameters; 0 if `model` is null.
 */
uintptr_t balancereg_model_param_count(const struct BalanceregModel *model);

/**
 * Inductive impact estimates for `n` units with covariates `x`
 * (row-major, `n` by `d`). Writes `n` values to `out`.
 */
enum BalanceregStatus balancereg_predict_impacts(const struct BalanceregModel *model,
                                                 const double *x,
                                                 uintptr_t n,
                                                 uintptr_t d,
                                                 double *out);

/**
 * Transductive impact estimates: the factual outcome `y` replaces the
 * predicted head for each unit's observed arm (`t` in {0, 1}). Writes `n`
 * values to `out`.
 */
enum BalanceregStatus balancereg_predict_impacts_transductive(const struct BalanceregModel *model,
                                                              const double *x,
                                                              const uint8_t *t,
                                                              const double *y,
                                                              uintptr_t n,
                                                              uintptr_t d,
                                                              double *out);

/**
 * Destroy a model handle. Null is a no-op.
 */
void balancereg_model_free(struct BalanceregModel *model);

/**
 * Aggregate `n_runs` repeated estimates of the same `n_units` true effects
 * into the bias-squared / variance / MSE decomposition. `estimates` is
 * row-major, `n_runs` by `n_units`.
 */
enum BalanceregStatus balancereg_aggregate(const double *truth,
                                           uintptr_t n_units,
                                           const double *estimates,
                                           uintptr_t n_runs,
                                           struct BalanceregMetrics *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* BALANCEREG_H */
