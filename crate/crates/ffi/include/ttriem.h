#ifndef TTRIEM_H
#define TTRIEM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Which quadratic functional of an operator to build.
typedef enum TtriemOperatorObjective {
  // `⟨AX, X⟩` for symmetric `A`.
  TTRIEM_OPERATOR_OBJECTIVE_QUADRATIC = 0,
  // `⟨AX, AX⟩`.
  TTRIEM_OPERATOR_OBJECTIVE_GRAM = 1,
  // `⟨AX, X⟩ / ⟨X, X⟩` for symmetric `A`.
  TTRIEM_OPERATOR_OBJECTIVE_RAYLEIGH = 2,
} TtriemOperatorObjective;

// Result of every fallible call.
typedef enum TtriemStatus {
  TTRIEM_STATUS_OK = 0,
  TTRIEM_STATUS_NULL_POINTER = 1,
  TTRIEM_STATUS_DIMENSION = 2,
  TTRIEM_STATUS_OVERSIZE = 3,
  TTRIEM_STATUS_INVALID_VALUE = 4,
  TTRIEM_STATUS_FORMAT = 5,
  TTRIEM_STATUS_UNSUPPORTED = 6,
  TTRIEM_STATUS_INVALID_TANGENT = 7,
  TTRIEM_STATUS_DEGENERATE_POINT = 8,
  TTRIEM_STATUS_INDEX = 9,
  TTRIEM_STATUS_INVALID_DATA = 10,
  TTRIEM_STATUS_UNAVAILABLE = 11,
  TTRIEM_STATUS_IO = 12,
  TTRIEM_STATUS_INTERNAL = 13,
  TTRIEM_STATUS_PANIC = 14,
} TtriemStatus;

// A differentiable objective.
typedef struct TtriemObjective TtriemObjective;

// A linear operator in TT-matrix format.
typedef struct TtriemOperator TtriemOperator;

// A tangent vector together with the point it is attached to.
typedef struct TtriemTangent TtriemTangent;

// A tensor in TT format.
typedef struct TtriemTensor TtriemTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread, or NULL if none.
// The string stays valid until the next failing call on the same thread.
const char *ttriem_last_error(void);

// Library version as a static NUL-terminated string.
const char *ttriem_version(void);

// Builds a tensor from `d` cores stored back to back, core `k` shaped
// `(ranks[k], modes[k], ranks[k+1])` with the last index fastest.
// `ranks` has `d + 1` entries, the first and last equal to 1.
//
// # Safety
// `modes` must point to `d` values, `ranks` to `d + 1` and `data` to
// `len` readable doubles; `out` must be writable.
enum TtriemStatus ttriem_tensor_from_cores(size_t d,
                                           const size_t *modes,
                                           const size_t *ranks,
                                           const double *data,
                                           size_t len,
                                           struct TtriemTensor **out);

// Random tensor with standard normal cores and interior ranks
// `min(rank, feasible)`.
//
// # Safety
// `modes` must point to `d` values; `out` must be writable.
enum TtriemStatus ttriem_tensor_random(size_t d,
                                       const size_t *modes,
                                       size_t rank,
                                       uint64_t seed,
                                       struct TtriemTensor **out);

// Reads a tensor in TTv1 format.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TtriemStatus ttriem_tensor_read(const char *path, struct TtriemTensor **out);

// Writes a tensor in TTv1 format.
//
// # Safety
// `x` must be a live handle and `path` a NUL-terminated string.
enum TtriemStatus ttriem_tensor_write(const struct TtriemTensor *x, const char *path);

// Number of modes.
//
// # Safety
// `x` must be a live handle and `out` writable.
enum TtriemStatus ttriem_tensor_order(const struct TtriemTensor *x, size_t *out);

// Copies the `d + 1` TT-ranks into `out`, which holds `cap` entries.
//
// # Safety
// `x` must be a live handle and `out` must have room for `cap` values.
enum TtriemStatus ttriem_tensor_ranks(const struct TtriemTensor *x, size_t *out, size_t cap);

// Frobenius norm.
//
// # Safety
// `x` must be a live handle and `out` writable.
enum TtriemStatus ttriem_tensor_norm(const struct TtriemTensor *x, double *out);

// Single entry at the multi-index `index` of length `d`.
//
// # Safety
// `x` must be a live handle, `index` must hold `d` values and `out` be
// writable.
enum TtriemStatus ttriem_tensor_entry(const struct TtriemTensor *x,
                                      const size_t *index,
                                      size_t d,
                                      double *out);

// TT rounding to interior ranks at most `max_rank` and relative accuracy
// `tol`.
//
// # Safety
// `x` must be a live handle and `out` writable.
enum TtriemStatus ttriem_tensor_round(const struct TtriemTensor *x,
                                      size_t max_rank,
                                      double tol,
                                      struct TtriemTensor **out);

// # Safety
// `x` must be NULL or a handle not freed before.
void ttriem_tensor_free(struct TtriemTensor *x);

// Identity operator on tensors with the given modes.
//
// # Safety
// `modes` must point to `d` values; `out` must be writable.
enum TtriemStatus ttriem_operator_identity(size_t d,
                                           const size_t *modes,
                                           struct TtriemOperator **out);

// Random symmetric operator of TT-rank at most `2 * rank`.
//
// # Safety
// `modes` must point to `d` values; `out` must be writable.
enum TtriemStatus ttriem_operator_random_symmetric(size_t d,
                                                   const size_t *modes,
                                                   size_t rank,
                                                   uint64_t seed,
                                                   struct TtriemOperator **out);

// Reads an operator in TMv1 format.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TtriemStatus ttriem_operator_read(const char *path, struct TtriemOperator **out);

// # Safety
// `a` must be NULL or a handle not freed before.
void ttriem_operator_free(struct TtriemOperator *a);

// Objective built from an operator; the operator is copied. `kind` is a
// `TtriemOperatorObjective` value.
//
// # Safety
// `a` must be a live handle and `out` writable.
enum TtriemStatus ttriem_objective_from_operator(uint32_t kind,
                                                 const struct TtriemOperator *a,
                                                 struct TtriemObjective **out);

// `⟨X, X⟩`.
//
// # Safety
// `out` must be writable.
enum TtriemStatus ttriem_objective_frobenius(struct TtriemObjective **out);

// Squared error over `count` observed entries. `indices` holds `count`
// multi-indices of length `d` back to back; `lambda > 0` adds
// `lambda * ⟨X, X⟩`.
//
// # Safety
// `modes` must point to `d` values, `indices` to `count * d` values and
// `values` to `count` doubles; `out` must be writable.
enum TtriemStatus ttriem_objective_completion(size_t d,
                                              const size_t *modes,
                                              size_t count,
                                              const size_t *indices,
                                              const double *values,
                                              double lambda,
                                              struct TtriemObjective **out);

// Objective value at `x`.
//
// # Safety
// `obj` and `x` must be live handles and `out` writable.
enum TtriemStatus ttriem_objective_value(const struct TtriemObjective *obj,
                                         const struct TtriemTensor *x,
                                         double *out);

// # Safety
// `obj` must be NULL or a handle not freed before.
void ttriem_objective_free(struct TtriemObjective *obj);

// Riemannian gradient of `obj` at `x`. `value` may be NULL; otherwise it
// receives `f(x)`.
//
// # Safety
// `obj` and `x` must be live handles and `out` writable.
enum TtriemStatus ttriem_riemannian_grad(const struct TtriemObjective *obj,
                                         const struct TtriemTensor *x,
                                         double *value,
                                         struct TtriemTangent **out);

// Riemannian Hessian applied to `z`, at the point `z` is attached to.
//
// # Safety
// `obj` and `z` must be live handles and `out` writable.
enum TtriemStatus ttriem_hess_vec(const struct TtriemObjective *obj,
                                  const struct TtriemTangent *z,
                                  struct TtriemTangent **out);

// Orthogonal projection of `z` onto the tangent space at `x`.
//
// # Safety
// `x` and `z` must be live handles and `out` writable.
enum TtriemStatus ttriem_project(const struct TtriemTensor *x,
                                 const struct TtriemTensor *z,
                                 struct TtriemTangent **out);

// Inner product of two tangent vectors at the same point.
//
// # Safety
// `a` and `b` must be live handles and `out` writable.
enum TtriemStatus ttriem_tangent_dot(const struct TtriemTangent *a,
                                     const struct TtriemTangent *b,
                                     double *out);

// Norm of a tangent vector.
//
// # Safety
// `t` must be a live handle and `out` writable.
enum TtriemStatus ttriem_tangent_norm(const struct TtriemTangent *t, double *out);

// Worst violation of the gauge condition, relative to the vector's size.
//
// # Safety
// `t` must be a live handle and `out` writable.
enum TtriemStatus ttriem_tangent_gauge_residual(const struct TtriemTangent *t, double *out);

// The tangent vector as a TT tensor of doubled rank.
//
// # Safety
// `t` must be a live handle and `out` writable.
enum TtriemStatus ttriem_tangent_to_tensor(const struct TtriemTangent *t,
                                           struct TtriemTensor **out);

// # Safety
// `t` must be NULL or a handle not freed before.
void ttriem_tangent_free(struct TtriemTangent *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TTRIEM_H */
