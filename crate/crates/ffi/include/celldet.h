#ifndef CELLDET_H
#define CELLDET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CelldetStatus {
  CELLDET_STATUS_OK = 0,
  CELLDET_STATUS_NULL_POINTER = 1,
  CELLDET_STATUS_INVALID_ARGUMENT = 2,
  CELLDET_STATUS_CONFIG = 3,
  CELLDET_STATUS_SHAPE = 4,
  CELLDET_STATUS_IO = 5,
  CELLDET_STATUS_PARSE = 6,
  CELLDET_STATUS_DIVERGENCE = 7,
  CELLDET_STATUS_BUFFER_TOO_SMALL = 8,
  CELLDET_STATUS_PANIC = 9,
} CelldetStatus;

/**
 * Opaque decoder: trained parameters plus the number of slots per cell.
 */
typedef struct CelldetDecoder CelldetDecoder;

/**
 * Layout of a loaded decoder.
 */
typedef struct CelldetDecoderInfo {
  size_t feature_dim;
  size_t hidden_size;
  size_t num_layers;
  size_t num_classes;
  size_t coord_arity;
  /**
   * Slots decoded per cell.
   */
  size_t steps;
  /**
   * Values per slot record, `2 + num_classes + coord_arity`.
   */
  size_t slot_width;
} CelldetDecoderInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to fit). Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t celldet_last_error(char *buf, size_t len);

/**
 * Load decoder parameters from a tensor container file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CelldetStatus celldet_decoder_load(const char *path,
                                        size_t steps,
                                        struct CelldetDecoder **out);

/**
 * Release a decoder. Null is ignored.
 *
 * # Safety
 * `decoder` must come from [`celldet_decoder_load`] and not be used afterwards.
 */
void celldet_decoder_free(struct CelldetDecoder *decoder);

/**
 * # Safety
 * `decoder` must be a live handle; `out` must be writable.
 */
enum CelldetStatus celldet_decoder_info(const struct CelldetDecoder *decoder,
                                        struct CelldetDecoderInfo *out);

/**
 * Decode a `batch × height × width × feature_dim` feature grid into
 * `batch × height × width × steps × slot_width` prediction values.
 *
 * # Safety
 * `features` must hold the full grid and `out` must have `out_len` writable values.
 */
enum CelldetStatus celldet_decoder_forward(const struct CelldetDecoder *decoder,
                                           const double *features,
                                           size_t batch,
                                           size_t height,
                                           size_t width,
                                           size_t feature_dim,
                                           double *out,
                                           size_t out_len);

/**
 * Minimum-cost assignment of a row-major `rows × cols` cost matrix, `rows >= cols`.
 * `matches[j]` receives the row matched to column `j`.
 *
 * # Safety
 * `cost` must hold `rows * cols` values and `matches` must have `cols` writable slots.
 */
enum CelldetStatus celldet_solve_assignment(const double *cost,
                                            size_t rows,
                                            size_t cols,
                                            size_t *matches,
                                            double *total_cost);

/**
 * All-points average precision of `n` scored detections (`flags[i]` nonzero = true positive).
 *
 * # Safety
 * `flags` and `scores` must each hold `n` values; `ap` must be writable.
 */
enum CelldetStatus celldet_average_precision(const uint8_t *flags,
                                             const double *scores,
                                             size_t n,
                                             size_t n_gt,
                                             double *ap);

/**
 * Column-wise count RMSE over row-major `n_images × n_classes` count matrices.
 *
 * # Safety
 * `truth` and `predicted` must hold `n_images * n_classes` values,
 * `per_class` must have `n_classes` writable slots (or be null), `mean` must be writable.
 */
enum CelldetStatus celldet_column_rmse(const uint64_t *truth,
                                       const uint64_t *predicted,
                                       size_t n_images,
                                       size_t n_classes,
                                       double *per_class,
                                       double *mean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CELLDET_H */
