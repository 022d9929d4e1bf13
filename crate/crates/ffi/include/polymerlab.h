#ifndef POLYMERLAB_H
#define POLYMERLAB_H

#include <stddef.h>
#include <stdint.h>

typedef enum PlProfile {
  PL_PROFILE_BUMP = 0,
  PL_PROFILE_DIRECT_R_INDICATOR = 1,
} PlProfile;

typedef enum PlStatus {
  PL_STATUS_OK = 0,
  PL_STATUS_INVALID_PARAMETER = 1,
  PL_STATUS_UNSUPPORTED_MODE = 2,
  PL_STATUS_SINGULARITY = 3,
  PL_STATUS_OUT_OF_DOMAIN = 4,
  PL_STATUS_PATH_ESCAPE = 5,
  PL_STATUS_NUMERICAL_OVERFLOW = 6,
  PL_STATUS_SUPERCRITICAL_BETA = 7,
  PL_STATUS_INVALID_BRACKET = 8,
  PL_STATUS_UNSUPPORTED_ORDER = 9,
  PL_STATUS_INVALID_REFERENCE = 10,
  PL_STATUS_INNER_MC_DEGENERATE = 11,
  PL_STATUS_CONFIG = 12,
  PL_STATUS_IO = 13,
  PL_STATUS_NULL_POINTER = 14,
  PL_STATUS_PANIC = 15,
} PlStatus;

// Opaque radial solution of the 𝔥_β equation.
typedef struct PlHBetaSolution PlHBetaSolution;

// Opaque kernel specification.
typedef struct PlKernelSpec PlKernelSpec;

// Estimate with its standard error.
typedef struct PlEstimate {
  double value;
  double std_error;
  uint64_t n;
} PlEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; valid until the next failing call.
const char *pl_last_error_message(void);

// Library version, static storage.
const char *pl_version(void);

// # Safety
// `out` must be a valid pointer.
enum PlStatus pl_kernel_spec_new(size_t dim,
                                 enum PlProfile profile,
                                 double support_radius,
                                 struct PlKernelSpec **out);

// # Safety
// `spec` must come from `pl_kernel_spec_new` and not be used afterwards. Null is ignored.
void pl_kernel_spec_free(struct PlKernelSpec *spec);

// R(x) for a point of the spec's dimension.
//
// # Safety
// `x` must hold `dim` values.
enum PlStatus pl_kernel_r(const struct PlKernelSpec *spec,
                          const double *x,
                          size_t dim,
                          double *out);

// # Safety
// Pointers must be valid.
enum PlStatus pl_kernel_r0(const struct PlKernelSpec *spec, double *out);

// # Safety
// `x` must hold `dim` values.
enum PlStatus pl_heat_kernel(size_t dim, double t, const double *x, double *out);

// # Safety
// `z` must hold `dim` values.
enum PlStatus pl_yukawa(size_t dim, const double *z, double *out);

// Solves 𝔥 = 1 + K_β𝔥 with default solver options, reporting on m + 1 radii of [0, r_max].
//
// # Safety
// Pointers must be valid.
enum PlStatus pl_hbeta_solve(const struct PlKernelSpec *spec,
                             double beta,
                             double r_max,
                             size_t m,
                             struct PlHBetaSolution **out);

// # Safety
// `sol` must come from `pl_hbeta_solve` and not be used afterwards. Null is ignored.
void pl_hbeta_free(struct PlHBetaSolution *sol);

// 𝔥_β at radius r.
//
// # Safety
// Pointers must be valid.
enum PlStatus pl_hbeta_value_at(const struct PlHBetaSolution *sol, double r, double *out);

// Number of reported radii.
//
// # Safety
// Pointers must be valid.
enum PlStatus pl_hbeta_len(const struct PlHBetaSolution *sol, size_t *out);

// Copies min(len, pl_hbeta_len) radii and values into the caller's buffers.
//
// # Safety
// `radii` and `values` must each have room for `len` values.
enum PlStatus pl_hbeta_copy(const struct PlHBetaSolution *sol,
                            double *radii,
                            double *values,
                            size_t len);

// γ(β)² by quadrature from a solution.
//
// # Safety
// Pointers must be valid.
enum PlStatus pl_gamma_squared(const struct PlKernelSpec *spec,
                               const struct PlHBetaSolution *sol,
                               double *out);

// H_{β;(T,∞)}(x₁, x₂) from a solution at the same β.
//
// # Safety
// `x1` and `x2` must hold `dim` values.
enum PlStatus pl_kernel_h_t_inf(const struct PlHBetaSolution *sol,
                                double t,
                                const double *x1,
                                const double *x2,
                                size_t dim,
                                double *out);

// Bracket [lo, hi] for β_{L²}.
//
// # Safety
// Pointers must be valid.
enum PlStatus pl_beta_l2_estimate(const struct PlKernelSpec *spec,
                                  double lo,
                                  double hi,
                                  double tol,
                                  double *out_lo,
                                  double *out_hi);

// A_β(a, b, T) over n bridges with time step dt.
//
// # Safety
// `a` and `b` must hold `dim` values.
enum PlStatus pl_bridge_functional(const struct PlKernelSpec *spec,
                                   double beta,
                                   const double *a,
                                   const double *b,
                                   size_t dim,
                                   double t,
                                   double dt,
                                   size_t n,
                                   uint64_t seed,
                                   struct PlEstimate *out);

// 𝒵_T(x) on one noise realization drawn from `noise_seed`, with n paths drawn from `path_seed`.
//
// # Safety
// `x` must hold `dim` values.
enum PlStatus pl_partition_mc(const struct PlKernelSpec *spec,
                              double beta,
                              double t,
                              const double *x,
                              size_t dim,
                              double dx,
                              double dt,
                              size_t n_paths,
                              uint64_t noise_seed,
                              uint64_t path_seed,
                              struct PlEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYMERLAB_H */
