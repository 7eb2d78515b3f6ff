#ifndef PEARCEY_H
#define PEARCEY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PearceyStatus {
  PEARCEY_STATUS_OK = 0,
  PEARCEY_STATUS_NULL_POINTER = 1,
  PEARCEY_STATUS_INVALID_ARGUMENT = 2,
  PEARCEY_STATUS_NON_CONVERGENCE = 3,
  PEARCEY_STATUS_SINGULAR = 4,
  PEARCEY_STATUS_OUT_OF_RANGE = 5,
  PEARCEY_STATUS_INFEASIBLE = 6,
  PEARCEY_STATUS_BUFFER_TOO_SMALL = 7,
  PEARCEY_STATUS_PANIC = 8,
} PearceyStatus;

/**
 * A matrix kernel: the extended Pearcey kernel, its order-R variant or a finite-n kernel.
 */
typedef struct PearceyKernelHandle PearceyKernelHandle;

/**
 * A discretized operator I − Kχ on a fixed family of regions.
 */
typedef struct PearceySystemHandle PearceySystemHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next call into the library from the same thread.
 */
const char *pearcey_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pearcey_version(void);

/**
 * φ^{(deriv)}(x) at time `tau`; order 1 is the canonical Pearcey function.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum PearceyStatus pearcey_phi(double tau, size_t order_r, double x, size_t deriv, double *out);

/**
 * ψ^{(deriv)}(y) at time `tau`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum PearceyStatus pearcey_psi(double tau, size_t order_r, double y, size_t deriv, double *out);

/**
 * Extended kernel on `m` increasing times. Order 1 gives the canonical
 * quartic kernel, orders 2..=8 the scaled higher-order kernels.
 *
 * # Safety
 * `taus` must be valid for `m` reads and `out` for one write.
 */
enum PearceyStatus pearcey_kernel_new(const double *taus,
                                      size_t m,
                                      size_t order_r,
                                      struct PearceyKernelHandle **out);

/**
 * Finite-n kernel for `n` Brownian bridges from `starts` (null means all
 * zero) to distinct `ends`, observed at `m` times in (0, 1).
 *
 * # Safety
 * `starts` (if non-null) and `ends` must be valid for `n` reads, `taus`
 * for `m` reads, `out` for one write.
 */
enum PearceyStatus pearcey_finite_n_kernel_new(const double *starts,
                                               const double *ends,
                                               size_t n,
                                               const double *taus,
                                               size_t m,
                                               struct PearceyKernelHandle **out);

/**
 * # Safety
 * `handle` must come from a `_new` function and not be freed twice.
 */
void pearcey_kernel_free(struct PearceyKernelHandle *handle);

/**
 * # Safety
 * `handle` must be null or live; `out` must be valid for one write.
 */
enum PearceyStatus pearcey_kernel_num_times(const struct PearceyKernelHandle *handle, size_t *out);

/**
 * ∂x^dx ∂y^dy K_ij(x, y) with 0-based time indices.
 *
 * # Safety
 * `handle` must be null or live; `out` must be valid for one write.
 */
enum PearceyStatus pearcey_kernel_entry(const struct PearceyKernelHandle *handle,
                                        size_t i,
                                        size_t j,
                                        double x,
                                        double y,
                                        size_t dx,
                                        size_t dy,
                                        double *out);

/**
 * Discretize I − Kχ with `nodes_per_interval` Gauss–Legendre nodes. The
 * system keeps its own reference to the kernel, which may be freed first.
 *
 * # Safety
 * `counts` must be valid for `num_times` reads, `bounds` for twice their
 * sum, `out` for one write.
 */
enum PearceyStatus pearcey_system_new(const struct PearceyKernelHandle *kernel,
                                      const double *bounds,
                                      const size_t *counts,
                                      size_t nodes_per_interval,
                                      struct PearceySystemHandle **out);

/**
 * # Safety
 * `handle` must come from `pearcey_system_new` and not be freed twice.
 */
void pearcey_system_free(struct PearceySystemHandle *handle);

/**
 * det(I − Kχ), checked to lie in [0, 1] up to 1e−8.
 *
 * # Safety
 * `handle` must be null or live; `out` must be valid for one write.
 */
enum PearceyStatus pearcey_system_gap_probability(const struct PearceySystemHandle *handle,
                                                  double *out);

/**
 * Resolvent kernel ∂x^dx ∂y^dy R_ij(x, y).
 *
 * # Safety
 * `handle` must be null or live; `out` must be valid for one write.
 */
enum PearceyStatus pearcey_system_resolvent(const struct PearceySystemHandle *handle,
                                            size_t i,
                                            double x,
                                            size_t j,
                                            double y,
                                            size_t dx,
                                            size_t dy,
                                            double *out);

/**
 * ∂ log det / ∂ endpoint, in the order the bounds were given.
 *
 * # Safety
 * `handle` must be null or live; `grad` must be valid for `cap` writes
 * and `len` for one write. `len` receives the number of endpoints even
 * when `cap` is too small.
 */
enum PearceyStatus pearcey_system_log_det_gradient(const struct PearceySystemHandle *handle,
                                                   double *grad,
                                                   size_t cap,
                                                   size_t *len);

/**
 * One-shot det(I − Kχ).
 *
 * # Safety
 * As for `pearcey_system_new`.
 */
enum PearceyStatus pearcey_gap_probability(const struct PearceyKernelHandle *kernel,
                                           const double *bounds,
                                           const size_t *counts,
                                           size_t nodes_per_interval,
                                           double *out);

/**
 * The R roots a_r of the order-R endpoint polynomial, sorted by real then
 * imaginary part.
 *
 * # Safety
 * `re` and `im` must be valid for `cap` writes, `len` for one write.
 */
enum PearceyStatus pearcey_roots(size_t order_r, double *re, double *im, size_t cap, size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEARCEY_H */
