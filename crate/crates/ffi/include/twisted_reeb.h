#ifndef TWISTED_REEB_H
#define TWISTED_REEB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible entry point.
 */
typedef enum TrStatus {
  TR_STATUS_OK = 0,
  TR_STATUS_NULL_POINTER = 1,
  TR_STATUS_DIMENSION_MISMATCH = 2,
  TR_STATUS_INVALID_PARAMETER = 3,
  TR_STATUS_UNSUPPORTED = 4,
  TR_STATUS_INTEGRATION_FAILURE = 5,
  TR_STATUS_NO_CONVERGENCE = 6,
  TR_STATUS_RANK_DEFICIENT = 7,
  TR_STATUS_NOT_CONTRACTIBLE = 8,
  TR_STATUS_INVALID_CERTIFICATE = 9,
  TR_STATUS_BUFFER_TOO_SMALL = 10,
  TR_STATUS_INVALID_TEXT = 11,
  TR_STATUS_INDEX_OUT_OF_RANGE = 12,
  TR_STATUS_PANIC = 13,
} TrStatus;

/**
 * Opaque twisted periodic orbit.
 */
typedef struct TrOrbit TrOrbit;

/**
 * Opaque list of orbits returned by a search.
 */
typedef struct TrOrbitList TrOrbitList;

/**
 * Opaque symplectic system.
 */
typedef struct TrSystem TrSystem;

/**
 * Scalar summary of an orbit.
 */
typedef struct TrOrbitInfo {
  double tau;
  double energy;
  double residual;
  size_t twist;
  size_t order;
  /**
   * Number of twisted segments after which the loop closes.
   */
  size_t closing_factor;
  size_t dim;
} TrOrbitInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the size needed including the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t tr_last_error(char *buf, size_t len);

/**
 * Static, NUL-terminated library version.
 */
const char *tr_version(void);

/**
 * Builds a system from a TOML table such as `kind = "henon-heiles"` (the
 * `[system]` section of an experiment config).
 *
 * # Safety
 * `spec` must be a NUL-terminated string; `out` must be writable.
 */
enum TrStatus tr_system_from_toml(const char *spec, struct TrSystem **out);

/**
 * Round sphere of radius `radius` in `C^n` with the diagonal rotation of order `order`.
 *
 * # Safety
 * `out` must be writable.
 */
enum TrStatus tr_system_sphere(size_t n, double radius, size_t order, struct TrSystem **out);

/**
 * Hénon–Heiles with its rotation of order 3.
 *
 * # Safety
 * `out` must be writable.
 */
enum TrStatus tr_system_henon_heiles(struct TrSystem **out);

/**
 * # Safety
 * `system` must be null or a handle from this library, freed at most once.
 */
void tr_system_free(struct TrSystem *system);

/**
 * Phase-space dimension, or 0 for a null handle.
 *
 * # Safety
 * `system` must be null or a live handle.
 */
size_t tr_system_dim(const struct TrSystem *system);

/**
 * Symmetry order, or 0 for a null handle.
 *
 * # Safety
 * `system` must be null or a live handle.
 */
size_t tr_system_symmetry_order(const struct TrSystem *system);

/**
 * # Safety
 * `system` must be a live handle; `out` must be writable.
 */
enum TrStatus tr_system_default_energy(const struct TrSystem *system, double *out);

/**
 * # Safety
 * `x` must hold `len` values; `out` must be writable.
 */
enum TrStatus tr_system_energy(const struct TrSystem *system,
                               const double *x,
                               size_t len,
                               double *out);

/**
 * Hamiltonian flow of `x` for time `t`, written to `out`.
 *
 * # Safety
 * `x` must hold `len` values and `out` must hold `out_len` values.
 */
enum TrStatus tr_system_flow(const struct TrSystem *system,
                             const double *x,
                             size_t len,
                             double t,
                             double *out,
                             size_t out_len);

/**
 * Newton refinement of a twisted orbit `Phi_tau(x) = phi^twist(x)` on `H = energy`.
 *
 * # Safety
 * `x0` must hold `len` values; `out` must be writable.
 */
enum TrStatus tr_orbit_refine(const struct TrSystem *system,
                              const double *x0,
                              size_t len,
                              double tau,
                              double energy,
                              size_t twist,
                              struct TrOrbit **out);

/**
 * Quasi-random multi-start search for twisted orbits with period in `[tau_min, tau_max]`.
 *
 * # Safety
 * `out` must be writable.
 */
enum TrStatus tr_orbit_search(const struct TrSystem *system,
                              double energy,
                              size_t twist,
                              double tau_min,
                              double tau_max,
                              size_t seeds,
                              uint64_t seed,
                              struct TrOrbitList **out);

/**
 * # Safety
 * `list` must be null or a live handle.
 */
size_t tr_orbit_list_len(const struct TrOrbitList *list);

/**
 * Copies entry `index` into a new orbit handle.
 *
 * # Safety
 * `list` must be a live handle; `out` must be writable.
 */
enum TrStatus tr_orbit_list_get(const struct TrOrbitList *list, size_t index, struct TrOrbit **out);

/**
 * # Safety
 * `list` must be null or a handle from this library, freed at most once.
 */
void tr_orbit_list_free(struct TrOrbitList *list);

/**
 * # Safety
 * `orbit` must be a live handle; `out` must be writable.
 */
enum TrStatus tr_orbit_info(const struct TrOrbit *orbit, struct TrOrbitInfo *out);

/**
 * Initial point of the orbit.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum TrStatus tr_orbit_point(const struct TrOrbit *orbit, double *out, size_t len);

/**
 * Action of the orbit, normalized per twisted segment.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum TrStatus tr_orbit_action(const struct TrSystem *system,
                              const struct TrOrbit *orbit,
                              double *out);

/**
 * Reduced Floquet multipliers, interleaved as `re0, im0, re1, im1, ...`.
 * `count` receives the number of multipliers; `len` is the buffer length in doubles.
 *
 * # Safety
 * Handles must be live; `re_im` must hold `len` values; `count` must be writable.
 */
enum TrStatus tr_orbit_floquet(const struct TrSystem *system,
                               const struct TrOrbit *orbit,
                               double *re_im,
                               size_t len,
                               size_t *count);

/**
 * # Safety
 * `orbit` must be null or a handle from this library, freed at most once.
 */
void tr_orbit_free(struct TrOrbit *orbit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWISTED_REEB_H */
