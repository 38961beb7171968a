#ifndef CHB_H
#define CHB_H

#include <stdbool.h>
#include <stddef.h>

typedef enum ChbStatus {
  CHB_STATUS_OK = 0,
  CHB_STATUS_NULL_POINTER = 1,
  CHB_STATUS_INVALID_ARGUMENT = 2,
  CHB_STATUS_PARSE = 3,
  CHB_STATUS_SINGULAR_MATRIX = 4,
  CHB_STATUS_NON_CONVERGENCE = 5,
  CHB_STATUS_CONSTRAINT = 6,
  CHB_STATUS_DOMAIN = 7,
  CHB_STATUS_IO = 8,
  CHB_STATUS_BUFFER_TOO_SMALL = 9,
  CHB_STATUS_PANIC = 10,
} ChbStatus;

typedef enum ChbField {
  CHB_FIELD_PHI = 0,
  CHB_FIELD_MU = 1,
  CHB_FIELD_UX = 2,
  CHB_FIELD_UY = 3,
  CHB_FIELD_THETA = 4,
  CHB_FIELD_PRESSURE = 5,
} ChbField;

/**
 * Opaque simulation handle.
 */
typedef struct ChbSimulation ChbSimulation;

typedef struct ChbEnergies {
  double total;
  double interface;
  double elastic;
  double fluid;
} ChbEnergies;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a simulation from `key = value` configuration text (may be empty
 * for the defaults) and stores the handle in `*out`.
 *
 * # Safety
 * `config` must be null or a NUL-terminated string; `out` must be writable.
 */
enum ChbStatus chb_simulation_new(const char *config, struct ChbSimulation **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sim` must be null or a handle from `chb_simulation_new` not yet freed.
 */
void chb_simulation_free(struct ChbSimulation *sim);

/**
 * Advances one time step. `converged` (optional) receives whether the
 * step met its stopping test.
 *
 * # Safety
 * `sim` must be a live handle; `converged` null or writable.
 */
enum ChbStatus chb_simulation_step(struct ChbSimulation *sim, bool *converged);

/**
 * # Safety
 * `sim` must be a live handle; `out` writable.
 */
enum ChbStatus chb_simulation_energies(const struct ChbSimulation *sim, struct ChbEnergies *out);

/**
 * Number of mesh vertices, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t chb_simulation_num_vertices(const struct ChbSimulation *sim);

/**
 * Current simulated time, or NaN for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
double chb_simulation_time(const struct ChbSimulation *sim);

/**
 * Copies nodal values of `field` into `buf` (length `len`, at least the
 * vertex count).
 *
 * # Safety
 * `sim` must be a live handle; `buf` valid for `len` writes.
 */
enum ChbStatus chb_simulation_copy_field(const struct ChbSimulation *sim,
                                         enum ChbField field,
                                         double *buf,
                                         size_t len);

/**
 * Copies the last error message on this thread into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length without the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t chb_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHB_H */
