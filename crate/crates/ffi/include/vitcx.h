/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef VITCX_H
#define VITCX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VcxMaskMode {
  VCX_MASK_MODE_VIT = 0,
  VCX_MASK_MODE_VIT_UNCLUSTERED = 1,
  VCX_MASK_MODE_RANDOM = 2,
} VcxMaskMode;

typedef enum VcxScoreMode {
  VCX_SCORE_MODE_DEBIASED = 0,
  VCX_SCORE_MODE_RAW = 1,
} VcxScoreMode;

/**
 * Result code of every fallible call.
 */
typedef enum VcxStatus {
  VCX_STATUS_OK = 0,
  VCX_STATUS_NULL_POINTER = 1,
  VCX_STATUS_INVALID_ARGUMENT = 2,
  VCX_STATUS_IO = 3,
  VCX_STATUS_ORACLE = 4,
  VCX_STATUS_PANIC = 5,
} VcxStatus;

/**
 * The result of one explanation run.
 */
typedef struct VcxExplanation VcxExplanation;

/**
 * A connected classifier.
 */
typedef struct VcxOracle VcxOracle;

/**
 * Explanation parameters. Obtain defaults from
 * [`vcx_explain_config_default`] and override fields as needed. Enum
 * fields must hold one of their declared enumerators.
 */
typedef struct VcxExplainConfig {
  /**
   * Block whose embeddings become masks; negative selects the last block.
   */
  int64_t block_index;
  double delta;
  double sigma;
  enum VcxMaskMode mask_mode;
  uintptr_t num_random_masks;
  uintptr_t random_grid;
  double random_keep_prob;
  enum VcxScoreMode score_mode;
  bool pcb;
  uint64_t seed;
  /**
   * Class to explain; negative selects the oracle's top-1 class.
   */
  int64_t target_class;
  uintptr_t batch_size;
} VcxExplainConfig;

typedef struct VcxOracleInfo {
  uintptr_t input_height;
  uintptr_t input_width;
  uintptr_t channels;
  uintptr_t num_classes;
  uintptr_t num_blocks;
} VcxOracleInfo;

/**
 * Half-open pixel box `[x0, x1) × [y0, y1)`.
 */
typedef struct VcxBox {
  uintptr_t x0;
  uintptr_t y0;
  uintptr_t x1;
  uintptr_t y1;
} VcxBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Text of the last error raised on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *vcx_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vcx_version(void);

struct VcxExplainConfig vcx_explain_config_default(void);

/**
 * Open an oracle from a spec string: `builtin-toy`,
 * `subprocess:<command>` or `tcp:<host:port>`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VcxStatus vcx_oracle_open(const char *spec, struct VcxOracle **out);

/**
 * # Safety
 * `oracle` must come from [`vcx_oracle_open`] and not be used afterwards.
 * Null is accepted.
 */
void vcx_oracle_free(struct VcxOracle *oracle);

/**
 * # Safety
 * `oracle` must be a live handle and `out` a valid pointer.
 */
enum VcxStatus vcx_oracle_info(const struct VcxOracle *oracle, struct VcxOracleInfo *out);

/**
 * Explain one image. `pixels` holds `height * width * channels` values.
 * A null `config` uses the defaults.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` must be writable.
 */
enum VcxStatus vcx_explain(const struct VcxOracle *oracle,
                           const float *pixels,
                           uintptr_t height,
                           uintptr_t width,
                           uintptr_t channels,
                           const struct VcxExplainConfig *config,
                           struct VcxExplanation **out);

/**
 * # Safety
 * `explanation` must come from [`vcx_explain`] and not be used afterwards.
 * Null is accepted.
 */
void vcx_explanation_free(struct VcxExplanation *explanation);

/**
 * Borrow the normalized saliency map (`height * width` values in `[0, 1]`).
 *
 * # Safety
 * `explanation` must be a live handle; out-pointers must be writable.
 */
enum VcxStatus vcx_explanation_saliency(const struct VcxExplanation *explanation,
                                        const float **data,
                                        uintptr_t *height,
                                        uintptr_t *width);

/**
 * Borrow the per-mask scores used for aggregation.
 *
 * # Safety
 * `explanation` must be a live handle; out-pointers must be writable.
 */
enum VcxStatus vcx_explanation_scores(const struct VcxExplanation *explanation,
                                      const double **data,
                                      uintptr_t *len);

/**
 * Target class, mask count, and mean score `μ` of an explanation.
 *
 * # Safety
 * `explanation` must be a live handle; out-pointers may be null to skip.
 */
enum VcxStatus vcx_explanation_summary(const struct VcxExplanation *explanation,
                                       uintptr_t *target_class,
                                       uintptr_t *num_masks,
                                       double *mu);

/**
 * Write the normalized saliency map as a VCX1 raw file.
 *
 * # Safety
 * `explanation` must be a live handle and `path` a NUL-terminated string.
 */
enum VcxStatus vcx_explanation_write_vcx1(const struct VcxExplanation *explanation,
                                          const char *path);

/**
 * `noisy_masked + (clean_full − noisy_full)`.
 */
double vcx_debiased_score(double noisy_masked, double clean_full, double noisy_full);

/**
 * Trapezoidal area under a curve whose fractions ascend from 0 to 1.
 *
 * # Safety
 * `fractions` and `scores` must hold `len` values; `out` must be writable.
 */
enum VcxStatus vcx_auc(const double *fractions, const double *scores, uintptr_t len, double *out);

/**
 * Whether the peak of `saliency` (lowest row-major index on ties) falls in
 * any of `boxes`.
 *
 * # Safety
 * `saliency` must hold `height * width` values, `boxes` `num_boxes`
 * entries; `hit` must be writable.
 */
enum VcxStatus vcx_pointing_game(const float *saliency,
                                 uintptr_t height,
                                 uintptr_t width,
                                 const struct VcxBox *boxes,
                                 uintptr_t num_boxes,
                                 bool *hit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VITCX_H */
