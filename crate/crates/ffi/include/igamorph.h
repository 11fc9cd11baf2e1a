#ifndef IGAMORPH_H
#define IGAMORPH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Problem kinds accepted by [`igm_model_new`].
typedef enum IgmProblem {
  IGM_PROBLEM_H1 = 0,
  IGM_PROBLEM_HCURL = 1,
} IgmProblem;

// Result codes. Values 1 to 5 follow the command-line exit codes.
typedef enum IgmStatus {
  IGM_STATUS_OK = 0,
  IGM_STATUS_IO = 1,
  // Malformed input or an invalid geometry mapping.
  IGM_STATUS_GEOMETRY = 2,
  // Assembly, factorization or eigen solver failure, or an out-of-range argument.
  IGM_STATUS_SOLVER = 3,
  // The requested eigenvalue is not simple.
  IGM_STATUS_MULTIPLICITY = 4,
  IGM_STATUS_NO_MATCH = 5,
  IGM_STATUS_NULL_POINTER = 10,
  IGM_STATUS_INVALID_ARGUMENT = 11,
  IGM_STATUS_PANIC = 12,
} IgmStatus;

// Morphing geometry.
typedef struct IgmGeometry IgmGeometry;

// Geometry together with a discrete space and quadrature rule.
typedef struct IgmModel IgmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *igm_last_error(void);

// Library version as a static NUL-terminated string.
const char *igm_version(void);

// Parses a geometry from its JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable pointer.
enum IgmStatus igm_geometry_from_json(const char *json, struct IgmGeometry **out);

// Five-patch disk morphing from `radius_start` to `radius_end`; the square
// core has half-width `core · radius`.
//
// # Safety
// `out` must be a writable pointer.
enum IgmStatus igm_geometry_disk(double radius_start,
                                 double radius_end,
                                 double core_start,
                                 double core_end,
                                 struct IgmGeometry **out);

// Spatial dimension, or 0 for a null handle.
//
// # Safety
// `geometry` must be null or a live handle.
size_t igm_geometry_dim(const struct IgmGeometry *geometry);

// Samples the Jacobian determinant at `t` with `samples` points per
// direction per element.
//
// # Safety
// `geometry` must be a live handle; `min_det` and `valid` writable pointers.
enum IgmStatus igm_geometry_validate(const struct IgmGeometry *geometry,
                                     double t,
                                     size_t samples,
                                     double *min_det,
                                     bool *valid);

// # Safety
// `geometry` must be null or a handle not yet freed.
void igm_geometry_free(struct IgmGeometry *geometry);

// Discretizes `geometry` with degree `degree` in every direction, each
// geometry element split into `refine` parts. `problem` is an [`IgmProblem`].
// The model keeps its own copy of the geometry.
//
// # Safety
// `geometry` must be a live handle and `out` a writable pointer.
enum IgmStatus igm_model_new(const struct IgmGeometry *geometry,
                             int32_t problem,
                             size_t degree,
                             size_t refine,
                             struct IgmModel **out);

// Number of free degrees of freedom, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t igm_model_n_dof(const struct IgmModel *model);

// # Safety
// `model` must be null or a handle not yet freed.
void igm_model_free(struct IgmModel *model);

// Writes the `count` smallest eigenvalues at `t` to `values` (the gradient
// kernel is skipped for H(curl)).
//
// # Safety
// `model` must be a live handle and `values` must hold `count` doubles.
enum IgmStatus igm_eigenvalues(const struct IgmModel *model,
                               double t,
                               size_t count,
                               double *values);

// Writes λ, λ′, …, λ⁽ᵒʳᵈᵉʳ⁾ of mode `mode` (1-based) at `t0` to `derivs`.
//
// # Safety
// `model` must be a live handle and `derivs` must hold `order + 1` doubles.
enum IgmStatus igm_eigenvalue_derivatives(const struct IgmModel *model,
                                          double t0,
                                          size_t mode,
                                          size_t order,
                                          double *derivs);

// Mean of the order-`order` Taylor model of mode `mode` about `t0` when the
// physical parameter `r = a + (b − a) t` is uniform on `[a, b]`.
//
// # Safety
// `model` must be a live handle and `mean` a writable pointer.
enum IgmStatus igm_uniform_expectation(const struct IgmModel *model,
                                       size_t mode,
                                       double t0,
                                       size_t order,
                                       double a,
                                       double b,
                                       double *mean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IGAMORPH_H */
