#ifndef NWSR_H
#define NWSR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum NwsrStatus {
  NWSR_STATUS_OK = 0,
  NWSR_STATUS_NULL_POINTER = 1,
  NWSR_STATUS_INVALID_ARGUMENT = 2,
  NWSR_STATUS_SHAPE = 3,
  NWSR_STATUS_LAYOUT = 4,
  NWSR_STATUS_DEGENERATE = 5,
  NWSR_STATUS_IO = 6,
  NWSR_STATUS_CHECKPOINT = 7,
  NWSR_STATUS_BUFFER_TOO_SMALL = 8,
  NWSR_STATUS_PANIC = 99,
} NwsrStatus;

/**
 * Fiber layout handle.
 */
typedef struct NwsrLayout NwsrLayout;

/**
 * Trained network handle.
 */
typedef struct NwsrModel NwsrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *nwsr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nwsr_version(void);

/**
 * Generates a seeded hexagonal-jitter layout inside a circular field of view.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum NwsrStatus nwsr_layout_generate(double fov_radius,
                                     double mean_spacing,
                                     uint64_t seed,
                                     struct NwsrLayout **out);

/**
 * Builds a layout from `n` interleaved `(x, y)` centres.
 *
 * # Safety
 * `xy` must point to `2 * n` doubles; `out` must be writable.
 */
enum NwsrStatus nwsr_layout_from_centres(const double *xy,
                                         size_t n,
                                         double fov_cx,
                                         double fov_cy,
                                         double fov_radius,
                                         struct NwsrLayout **out);

/**
 * Number of fibers; 0 for a null handle.
 *
 * # Safety
 * `layout` must be null or a live handle.
 */
size_t nwsr_layout_len(const struct NwsrLayout *layout);

/**
 * Side of the square image grid enclosing the field of view; 0 for null.
 *
 * # Safety
 * `layout` must be null or a live handle.
 */
size_t nwsr_layout_side(const struct NwsrLayout *layout);

/**
 * Writes the field-of-view centre and radius.
 *
 * # Safety
 * `cx`, `cy` and `radius` must be writable.
 */
enum NwsrStatus nwsr_layout_fov(const struct NwsrLayout *layout,
                                double *cx,
                                double *cy,
                                double *radius);

/**
 * Copies the centres as interleaved `(x, y)` pairs into `out`.
 *
 * # Safety
 * `out` must point to `out_len` writable doubles.
 */
enum NwsrStatus nwsr_layout_centres(const struct NwsrLayout *layout, double *out, size_t out_len);

/**
 * # Safety
 * `layout` must be null or a handle not yet freed.
 */
void nwsr_layout_free(struct NwsrLayout *layout);

/**
 * Averages a `width x height` image over each fiber's Voronoi cell.
 *
 * # Safety
 * `hr` must point to `width * height` doubles and `out` to `out_len`.
 */
enum NwsrStatus nwsr_voronoi_downsample(const struct NwsrLayout *layout,
                                        const double *hr,
                                        size_t width,
                                        size_t height,
                                        double *out,
                                        size_t out_len);

/**
 * Delaunay (INTER) reconstruction; pixels outside the hull are 0.
 *
 * # Safety
 * `signals` must point to one double per fiber; `out` to `out_len` doubles.
 */
enum NwsrStatus nwsr_reconstruct_delaunay(const struct NwsrLayout *layout,
                                          const double *signals,
                                          size_t n_signals,
                                          size_t width,
                                          size_t height,
                                          double *out,
                                          size_t out_len);

/**
 * Gaussian Nadaraya-Watson reconstruction. A `sigma <= 0` picks the
 * default width from the mean fiber spacing.
 *
 * # Safety
 * `signals` must point to one double per fiber; `out` to `out_len` doubles.
 */
enum NwsrStatus nwsr_reconstruct_nw_gauss(const struct NwsrLayout *layout,
                                          const double *signals,
                                          size_t n_signals,
                                          double sigma,
                                          size_t width,
                                          size_t height,
                                          double *out,
                                          size_t out_len);

/**
 * PSNR in dB; infinite for identical images.
 *
 * # Safety
 * `pred` and `reference` must each point to `width * height` doubles.
 */
enum NwsrStatus nwsr_psnr(const double *pred,
                          const double *reference,
                          size_t width,
                          size_t height,
                          double data_range,
                          double *out);

/**
 * Mean SSIM with an 11x11 Gaussian window.
 *
 * # Safety
 * `pred` and `reference` must each point to `width * height` doubles.
 */
enum NwsrStatus nwsr_ssim(const double *pred,
                          const double *reference,
                          size_t width,
                          size_t height,
                          double data_range,
                          double *out);

/**
 * Loads a checkpoint descriptor (JSON) and its parameter blob.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum NwsrStatus nwsr_model_load(const char *path, struct NwsrModel **out);

/**
 * 1 if the model consumes a sparse signal plus mask, 0 for a dense image,
 * -1 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
int32_t nwsr_model_is_sparse(const struct NwsrModel *model);

/**
 * Runs the network on a normalized frame. Dense models ignore `mask`,
 * which may be null; sparse models require it.
 *
 * # Safety
 * `input` (and `mask` when used) must point to `width * height` doubles;
 * `out` to `out_len` doubles.
 */
enum NwsrStatus nwsr_model_predict(const struct NwsrModel *model,
                                   const double *input,
                                   const double *mask,
                                   size_t width,
                                   size_t height,
                                   double *out,
                                   size_t out_len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void nwsr_model_free(struct NwsrModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NWSR_H */
