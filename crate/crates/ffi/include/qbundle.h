#ifndef QBUNDLE_H
#define QBUNDLE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QbStatus {
  QB_STATUS_OK = 0,
  QB_STATUS_NULL_POINTER = 1,
  QB_STATUS_INVALID_ARGUMENT = 2,
  QB_STATUS_DIMENSION_MISMATCH = 3,
  // Exceptional point: the Hamiltonian cannot be diagonalized.
  QB_STATUS_NON_DIAGONALIZABLE = 4,
  QB_STATUS_COMPLEX_SPECTRUM = 5,
  QB_STATUS_DEGENERATE_LEVEL = 6,
  QB_STATUS_OUT_OF_DOMAIN = 7,
  QB_STATUS_NUMERICAL = 8,
  // A Rust panic was caught at the boundary.
  QB_STATUS_INTERNAL = 9,
} QbStatus;

// Opaque Hamiltonian family.
typedef struct QbFamily QbFamily;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// `H(γ) = [[iγ, 1], [1, −iγ]]`.
struct QbFamily *qb_family_pt_dimer(void);

// Spin-½ in a magnetic field with parameters (θ, φ). Null if `mu_b` is zero or not finite.
struct QbFamily *qb_family_spin_half(double mu_b);

// `H(q) = h0 + Σ q_i V_i`.
//
// `h0` holds `2·dim²` doubles and `couplings` holds `n_params` such matrices back to back.
//
// # Safety
// Both buffers must be valid for the lengths above.
struct QbFamily *qb_family_linear(uintptr_t dim,
                                  const double *h0,
                                  uintptr_t n_params,
                                  const double *couplings);

// # Safety
// `family` must come from a `qb_family_*` constructor and not be freed twice. Null is ignored.
void qb_family_free(struct QbFamily *family);

// Hilbert-space dimension, or 0 for a null handle.
//
// # Safety
// `family` must be null or a live handle.
uintptr_t qb_family_dim(const struct QbFamily *family);

// Number of parameters, or 0 for a null handle.
//
// # Safety
// `family` must be null or a live handle.
uintptr_t qb_family_n_params(const struct QbFamily *family);

// Eigenvalues at `(t, q)` in ascending real part, written as `2·dim` doubles.
//
// # Safety
// `q` must hold `n_q` doubles and `out` must have room for `2·dim`.
enum QbStatus qb_eigenvalues(const struct QbFamily *family,
                             double t,
                             const double *q,
                             uintptr_t n_q,
                             double *out);

// Canonical adiabatic generator `K_i = t·K1 + K0` at `q`; each output takes `2·dim²` doubles.
//
// # Safety
// `q` must hold `n_q` doubles; `k1` and `k0` must have room for `2·dim²` each.
enum QbStatus qb_generator(const struct QbFamily *family,
                           const double *q,
                           uintptr_t n_q,
                           uintptr_t direction,
                           double *k1,
                           double *k0);

// Fidelity susceptibility of `level` along `direction`, written as `(re, im)`.
//
// # Safety
// `q` must hold `n_q` doubles and `out` must have room for 2.
enum QbStatus qb_susceptibility(const struct QbFamily *family,
                                const double *q,
                                uintptr_t n_q,
                                uintptr_t direction,
                                uintptr_t level,
                                double *out);

// Berry curvature `Ω_ij` of `level`, written as `(re, im)`; the imaginary part vanishes for Hermitian families.
//
// # Safety
// `q` must hold `n_q` doubles and `out` must have room for 2.
enum QbStatus qb_berry_curvature(const struct QbFamily *family,
                                 const double *q,
                                 uintptr_t n_q,
                                 uintptr_t i,
                                 uintptr_t j,
                                 uintptr_t level,
                                 double *out);

// Chern number of `level` for a two-parameter family over θ ∈ [0, π] × φ ∈ [0, 2π] (midpoint rule).
//
// # Safety
// `out` must point to one double.
enum QbStatus qb_chern_number(const struct QbFamily *family,
                              uintptr_t n_theta,
                              uintptr_t n_phi,
                              uintptr_t level,
                              double *out);

// Copies the calling thread's last error message (NUL-terminated, truncated to `len`).
// Returns the full message length excluding the terminator.
//
// # Safety
// `buf` must be null or have room for `len` bytes.
uintptr_t qb_last_error(char *buf, uintptr_t len);

// Static description of a status code.
const char *qb_status_name(enum QbStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QBUNDLE_H */
