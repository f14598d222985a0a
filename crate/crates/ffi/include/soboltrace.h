#ifndef SOBOLTRACE_H
#define SOBOLTRACE_H

/* Generated by cbindgen from soboltrace-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status of every fallible call. Anything but ST_OK leaves the output
// parameters untouched; st_last_error() then describes the failure.
typedef enum st_status {
  ST_OK = 0,
  // A required pointer argument was NULL.
  ST_NULL_ARG = 1,
  // A string argument was not valid UTF-8.
  ST_INVALID_UTF8 = 2,
  // Malformed specification: unknown model or case string, bad subset,
  // invalid sizes or levels.
  ST_CONFIG = 3,
  // Structurally valid input outside an operation's mathematical domain.
  ST_DOMAIN = 4,
  // Output variance or eigenvalue gap too small; the quantity is
  // undefined on this data.
  ST_DEGENERATE = 5,
  // Exact enumeration cap exceeded.
  ST_CAPACITY = 6,
  // Operation not defined for this model/case combination.
  ST_UNSUPPORTED = 7,
  // No sample size up to the search cap meets the requested risk.
  ST_UNATTAINABLE = 8,
  // External model subprocess failed or answered garbage.
  ST_EXTERNAL = 9,
  // Filesystem or pipe failure.
  ST_IO = 10,
  // Internal panic; treat the library state as poisoned.
  ST_PANIC = 11,
} st_status;

// A model resolved together with its input law and case, ready to sample.
typedef struct st_model st_model;

// One paired pick-and-freeze sample (Y, Y^u) for a fixed subset.
typedef struct st_sample st_sample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty string when
// nothing failed yet. Valid until the next failing call on the same
// thread. Never NULL.
const char *st_last_error(void);

// Library version as a static NUL-terminated string.
const char *st_version(void);

// Builds a model from its string form
// (`polar | mass-spring | aniso:A | bilinear:A,B | external:CMD:K`).
// `case` selects the input law (`"gaussian"` or `"uniform"`); NULL means
// the model's native case. `p` is the input dimension — required for
// external commands, otherwise 0 (or the model's true dimension).
//
// # Safety
// `spec` and `case` (when non-NULL) must point to NUL-terminated strings;
// `out` must be writable.
enum st_status st_model_new(const char *spec, const char *case_, size_t p, struct st_model **out);

// Releases a model handle; NULL is a no-op.
//
// # Safety
// `model` must have come from [`st_model_new`] and not be freed twice.
void st_model_free(struct st_model *model);

// Number of inputs the model consumes.
//
// # Safety
// Handles must come from this library and still be live; non-NULL output
// pointers must be writable.
enum st_status st_model_input_dim(const struct st_model *model, size_t *out);

// Number of output components per evaluation.
//
// # Safety
// Handles must come from this library and still be live; non-NULL output
// pointers must be writable.
enum st_status st_model_output_dim(const struct st_model *model, size_t *out);

// Exact index for the subset `u` (1-based indices, `u_len` of them) where
// a closed form exists; ST_UNSUPPORTED otherwise.
//
// # Safety
// Handles must come from this library and still be live; non-NULL output
// pointers must be writable. `u` must hold `u_len` readable indices.
enum st_status st_model_true_index(const struct st_model *model,
                                   const size_t *u,
                                   size_t u_len,
                                   double *out);

// Draws a paired design of size `n` for the subset `u` (1-based indices)
// and evaluates the model on both replicas. Identical (model, u, n, seed)
// reproduce the identical sample.
//
// # Safety
// Handles must come from this library and still be live; non-NULL output
// pointers must be writable. `u` must hold `u_len` readable indices.
enum st_status st_sample_generate(const struct st_model *model,
                                  const size_t *u,
                                  size_t u_len,
                                  size_t n,
                                  uint64_t seed,
                                  struct st_sample **out);

// Releases a sample handle; NULL is a no-op.
//
// # Safety
// `sample` must have come from [`st_sample_generate`] and not be freed
// twice.
void st_sample_free(struct st_sample *sample);

// Number of pick-and-freeze pairs in the sample.
//
// # Safety
// Handles must come from this library and still be live; non-NULL output
// pointers must be writable.
enum st_status st_sample_len(const struct st_sample *sample, size_t *out);

// Number of output components carried by each observation.
//
// # Safety
// Handles must come from this library and still be live; non-NULL output
// pointers must be writable.
enum st_status st_sample_output_dim(const struct st_sample *sample, size_t *out);

// Trace-ratio index estimate of the sample's subset.
//
// # Safety
// Handles must come from this library and still be live; non-NULL output
// pointers must be writable.
enum st_status st_estimate_index(const struct st_sample *sample, double *out);

// Two-sided asymptotic interval at `level` (e.g. 0.95): writes the point
// estimate, both endpoints, and the plug-in variance.
//
// # Safety
// Handles must come from this library and still be live; non-NULL output
// pointers must be writable.
enum st_status st_confidence_interval(const struct st_sample *sample,
                                      double level,
                                      double *estimate,
                                      double *lo,
                                      double *hi,
                                      double *sigma2);

// Per-component first-order indices, written into `out[0..out_len]`.
// `out_len` must equal the sample's output dimension.
//
// # Safety
// Handles must come from this library and still be live; non-NULL output
// pointers must be writable. `out` must hold `out_len` writable slots.
enum st_status st_estimate_componentwise(const struct st_sample *sample,
                                         double *out,
                                         size_t out_len);

// Smallest sample size whose worst-case two-sided deviation risk at
// relative deviation `t` is at most `alpha`, for V = (sum_l v_l)^2.
//
// # Safety
// `out` must be writable when non-NULL.
enum st_status st_min_sample_size(double t, double alpha, double v_total, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOBOLTRACE_H */
