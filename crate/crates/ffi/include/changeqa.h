#ifndef CHANGEQA_H
#define CHANGEQA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Patch filter outcome.
typedef enum CqaPatchDecision {
  CQA_PATCH_DECISION_KEEP = 0,
  CQA_PATCH_DECISION_REJECT_UNIFORMITY = 1,
  CQA_PATCH_DECISION_REJECT_SATURATION = 2,
  CQA_PATCH_DECISION_REJECT_VEGETATION = 3,
} CqaPatchDecision;

// Result code of every fallible call.
typedef enum CqaStatus {
  CQA_STATUS_OK = 0,
  CQA_STATUS_NULL_POINTER = 1,
  CQA_STATUS_INVALID_ARGUMENT = 2,
  CQA_STATUS_SHAPE = 3,
  CQA_STATUS_SCHEMA = 4,
  CQA_STATUS_FORMAT = 5,
  CQA_STATUS_CONTRACT = 6,
  CQA_STATUS_CONFIG = 7,
  CQA_STATUS_IO = 8,
  CQA_STATUS_BACKEND = 9,
  CQA_STATUS_DEGENERATE_DATA = 10,
  CQA_STATUS_OTHER = 11,
  CQA_STATUS_PANIC = 12,
} CqaStatus;

// Binary raster.
typedef struct CqaBinaryMask CqaBinaryMask;

// Semantic label raster.
typedef struct CqaMask CqaMask;

// Extracted candidate regions.
typedef struct CqaRegionList CqaRegionList;

// Uniform gate parameters for [`cqa_extract_candidates`].
typedef struct CqaThresholds {
  size_t min_size;
  double changed_threshold;
  double iou_threshold;
  // 0 rejects IoU below the threshold, 1 rejects IoU above it.
  uint8_t reject_above;
  // 4 or 8.
  uint8_t connectivity;
} CqaThresholds;

// One candidate region.
typedef struct CqaRegion {
  uint32_t class_id;
  size_t size;
  uint32_t x0;
  uint32_t y0;
  uint32_t w;
  uint32_t h;
  double iou;
  double changed_ratio;
} CqaRegion;

// Counters of a finished run.
typedef struct CqaRunSummary {
  size_t pairs_total;
  size_t pairs_failed;
  size_t total_candidates;
  size_t kept;
  size_t change_rows;
  size_t no_change_rows;
} CqaRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next failing call.
const char *cqa_last_error(void);

// Creates a mask from `width*height` row-major labels, each below `num_classes`.
//
// # Safety
// `labels` must point to `len` readable bytes; `out` must be writable.
enum CqaStatus cqa_mask_new(uint32_t width,
                            uint32_t height,
                            uint32_t num_classes,
                            const uint8_t *labels,
                            size_t len,
                            struct CqaMask **out);

// # Safety
// `mask` must come from [`cqa_mask_new`] and not be used afterwards. Null is ignored.
void cqa_mask_free(struct CqaMask *mask);

// Pixels whose labels differ between the two masks.
//
// # Safety
// Handles must be live; `out` must be writable.
enum CqaStatus cqa_diff_mask(const struct CqaMask *before,
                             const struct CqaMask *after,
                             struct CqaBinaryMask **out);

// Creates a binary mask from `width*height` bytes (nonzero = set).
//
// # Safety
// `bits` must point to `len` readable bytes; `out` must be writable.
enum CqaStatus cqa_binary_mask_new(uint32_t width,
                                   uint32_t height,
                                   const uint8_t *bits,
                                   size_t len,
                                   struct CqaBinaryMask **out);

// # Safety
// `mask` must be a live handle or null.
size_t cqa_binary_mask_count(const struct CqaBinaryMask *mask);

// # Safety
// `mask` must not be used afterwards. Null is ignored.
void cqa_binary_mask_free(struct CqaBinaryMask *mask);

// Labels connected components: `labels_out[y*width+x]` is 0 off the mask and
// `1 + component index` on it, components ordered by first pixel in row-major
// order. `connectivity` is 4 or 8.
//
// # Safety
// `labels_out` must hold `len >= width*height` writable values.
enum CqaStatus cqa_connected_components(const struct CqaBinaryMask *mask,
                                        uint8_t connectivity,
                                        uint32_t *labels_out,
                                        size_t len,
                                        size_t *n_components);

// Runs region extraction with the same gates for every class.
//
// # Safety
// Handles and `th` must be valid; `out` must be writable.
enum CqaStatus cqa_extract_candidates(const struct CqaMask *before,
                                      const struct CqaMask *after,
                                      const struct CqaThresholds *th,
                                      struct CqaRegionList **out);

// # Safety
// `list` must be a live handle or null.
size_t cqa_region_list_len(const struct CqaRegionList *list);

// # Safety
// `list` must be live and `out` writable.
enum CqaStatus cqa_region_list_get(const struct CqaRegionList *list,
                                   size_t index,
                                   struct CqaRegion *out);

// # Safety
// `list` must not be used afterwards. Null is ignored.
void cqa_region_list_free(struct CqaRegionList *list);

// Applies the appearance filters to `n_pixels` unit-scale RGB triples.
//
// # Safety
// `rgb` must hold `3*n_pixels` readable values; `out` must be writable.
enum CqaStatus cqa_keep_patch(const double *rgb,
                              size_t n_pixels,
                              double tau_std,
                              double tau_sat,
                              double tau_exg,
                              enum CqaPatchDecision *out);

// `1 − (1 − p)^n`.
//
// # Safety
// `out` must be writable.
enum CqaStatus cqa_acceptance_probability(double p, uint32_t n, double *out);

// Reward-tilted distribution `∝ reference · exp(reward / beta)` written to `out[0..n]`.
//
// # Safety
// All arrays must hold `n` values.
enum CqaStatus cqa_preference_distribution(const double *reference,
                                           const double *reward,
                                           size_t n,
                                           double beta,
                                           double *out);

// ROC summary of `n` scores with labels (nonzero = positive).
//
// # Safety
// Arrays must hold `n` values; outputs may be null when not wanted.
enum CqaStatus cqa_roc(const double *scores,
                       const uint8_t *labels,
                       size_t n,
                       uint8_t lower_is_positive,
                       double *auc,
                       double *best_threshold,
                       double *youden_j);

// Runs the pipeline described by a TOML config over a pairs manifest and
// writes the dataset, candidate trails and stats into `out_dir`.
//
// # Safety
// Strings must be NUL-terminated UTF-8; `summary` may be null.
enum CqaStatus cqa_run_pipeline(const char *config_path,
                                const char *manifest_path,
                                const char *out_dir,
                                struct CqaRunSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHANGEQA_H */
