#ifndef DEGENCONTROL_H
#define DEGENCONTROL_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_POINTER = 1,
  DC_STATUS_INVALID_UTF8 = 2,
  DC_STATUS_CONFIG = 3,
  DC_STATUS_NUMERICAL = 4,
  DC_STATUS_IO = 5,
  DC_STATUS_PANIC = 6,
} DcStatus;

/**
 * Opaque handle.
 */
typedef struct DcLab DcLab;

typedef struct DcControlSummary {
  double final_norm;
  double free_final_norm;
  double reduction;
  double optimality_residual;
  double control_norm;
  uint64_t iterations;
} DcControlSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dc_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *dc_last_error_message(void);

/**
 * Builds a lab from JSON config text. Relative paths resolve against `base_dir`
 * (may be null for the current directory).
 *
 * # Safety
 * `json` and `base_dir` must be null or valid NUL-terminated strings; `out` must be
 * a valid pointer. The handle must be released with `dc_lab_free`.
 */
enum DcStatus dc_lab_new(const char *json, const char *base_dir, struct DcLab **out);

/**
 * # Safety
 * `lab` must be null or a handle from `dc_lab_new` that has not been freed.
 */
void dc_lab_free(struct DcLab *lab);

/**
 * Number of unknowns of the assembled operator.
 *
 * # Safety
 * `lab` must be a live handle and `out` a valid pointer.
 */
enum DcStatus dc_lab_unknowns(const struct DcLab *lab, uint64_t *out);

/**
 * Runs a pipeline (`solve`, `control`, `observability`, `carleman-audit`) and
 * writes its result files into `out_dir`.
 *
 * # Safety
 * `lab` must be a live handle; string arguments must be valid NUL-terminated strings.
 */
enum DcStatus dc_lab_run(const struct DcLab *lab, const char *subcommand, const char *out_dir);

/**
 * Computes the penalized HUM control for the configured initial state.
 *
 * # Safety
 * `lab` must be a live handle and `out` a valid pointer.
 */
enum DcStatus dc_lab_control(const struct DcLab *lab, struct DcControlSummary *out);

/**
 * Lower bound for the observability constant on the configured collar.
 *
 * # Safety
 * `lab` must be a live handle and `out` a valid pointer.
 */
enum DcStatus dc_lab_observability(const struct DcLab *lab, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEGENCONTROL_H */
