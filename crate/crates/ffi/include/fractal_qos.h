#ifndef FRACTAL_QOS_H
#define FRACTAL_QOS_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FqStatus {
  FQ_STATUS_OK = 0,
  FQ_STATUS_NULL_POINTER = 1,
  FQ_STATUS_INVALID_ARGUMENT = 2,
  FQ_STATUS_DEGENERATE_INPUT = 3,
  FQ_STATUS_IO = 4,
  FQ_STATUS_PARSE = 5,
  FQ_STATUS_INTERNAL = 6,
} FqStatus;

/**
 * Opaque calibration table.
 */
typedef struct FqTable FqTable;

/**
 * Opaque traffic trace.
 */
typedef struct FqTrace FqTrace;

typedef struct FqGeneratorSpec {
  double target_h;
  double target_intensity;
  size_t length;
  uint64_t seed;
  /**
   * 0 disables the cascade.
   */
  uint32_t cascade_depth;
  double cascade_weight;
  double envelope_cv;
} FqGeneratorSpec;

typedef struct FqSignature {
  double intensity_lambda;
  double hurst_h;
  double delta_h;
  double sigma_var;
  size_t window_len;
} FqSignature;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *fq_last_error(void);

/**
 * # Safety
 * `spec` must point to a valid spec and `out` to writable storage.
 */
enum FqStatus fq_generate(const struct FqGeneratorSpec *spec, struct FqTrace **out);

/**
 * Copies `len` nonnegative values into a new trace.
 *
 * # Safety
 * `values` must point to `len` readable doubles and `out` to writable storage.
 */
enum FqStatus fq_trace_from_values(const double *values, size_t len, struct FqTrace **out);

/**
 * # Safety
 * `trace` must be a live handle and `len` writable.
 */
enum FqStatus fq_trace_len(const struct FqTrace *trace, size_t *len);

/**
 * Copies up to `cap` values into `buf`; `written` receives the count.
 *
 * # Safety
 * `buf` must have room for `cap` doubles.
 */
enum FqStatus fq_trace_values(const struct FqTrace *trace,
                              double *buf,
                              size_t cap,
                              size_t *written);

/**
 * # Safety
 * `trace` must come from this library and not be used afterwards. Null is a no-op.
 */
void fq_trace_free(struct FqTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle and `out` writable.
 */
enum FqStatus fq_analyze(const struct FqTrace *trace, struct FqSignature *out);

/**
 * Link cost after an announcement with signature `(h, sigma_var)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FqStatus fq_update_cost(double c, double h, double sigma_var, double c0, double *out);

/**
 * Loads a calibration table (CSV plus its `.meta.json` sidecar).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum FqStatus fq_table_load(const char *path, struct FqTable **out);

/**
 * Buffer needed at capacity `net` for traffic `(lambda, h, sigma_var)`.
 * `saturated` is set when no finite buffer meets the table's loss target.
 *
 * # Safety
 * `table` must be a live handle; `buffer` and `saturated` writable.
 */
enum FqStatus fq_table_required_buffer(const struct FqTable *table,
                                       double net,
                                       double lambda,
                                       double h,
                                       double sigma_var,
                                       double *buffer,
                                       bool *saturated);

/**
 * Smallest capacity whose required buffer fits in `buffer`.
 * `clamped` is set when the answer sits on the table boundary.
 *
 * # Safety
 * `table` must be a live handle; `capacity` and `clamped` writable.
 */
enum FqStatus fq_table_required_capacity(const struct FqTable *table,
                                         double buffer,
                                         double lambda,
                                         double h,
                                         double sigma_var,
                                         double *capacity,
                                         bool *clamped);

/**
 * # Safety
 * `table` must come from this library and not be used afterwards. Null is a no-op.
 */
void fq_table_free(struct FqTable *table);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACTAL_QOS_H */
