#ifndef KINV_H
#define KINV_H

#include <stdbool.h>
#include <stddef.h>

/*
 Result codes. The nonzero values match the exit codes of the `kinv` binary.
 */
typedef enum KinvStatus {
  KINV_STATUS_OK = 0,
  /*
   Null pointer, bad UTF-8 or a too-small buffer.
   */
  KINV_STATUS_INVALID_ARGUMENT = 1,
  KINV_STATUS_VALIDATION = 2,
  KINV_STATUS_SOLVER = 3,
  KINV_STATUS_IO = 4,
  KINV_STATUS_PANIC = 5,
} KinvStatus;

/*
 A dense field of rank 2 (`[Nx][Nv]`) or 3 (`[Nt + 1][Nx][Nv]`).
 */
typedef struct KinvField KinvField;

/*
 Outcome of an inverse solve.
 */
typedef struct KinvInverse KinvInverse;

/*
 A loaded and validated problem.
 */
typedef struct KinvProblem KinvProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *kinv_last_error(void);

/*
 Library version as a static string.
 */
const char *kinv_version(void);

/*
 Loads a JSON config file. Relative paths inside it resolve against its
 directory. With `strict`, validation warnings are errors too.

 # Safety
 `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum KinvStatus kinv_problem_load(const char *path, bool strict, struct KinvProblem **out);

/*
 Builds a problem from JSON text. `base_dir` may be null (current directory).

 # Safety
 `json` and a non-null `base_dir` must be nul-terminated strings and
 `out` a valid pointer.
 */
enum KinvStatus kinv_problem_from_json(const char *json,
                                       const char *base_dir,
                                       bool strict,
                                       struct KinvProblem **out);

/*
 # Safety
 `problem` must come from a `kinv_problem_*` constructor or be null.
 */
void kinv_problem_free(struct KinvProblem *problem);

/*
 Grid sizes of a problem.

 # Safety
 All pointers must be valid.
 */
enum KinvStatus kinv_problem_dims(const struct KinvProblem *problem,
                                  size_t *nx,
                                  size_t *nv,
                                  size_t *nt);

/*
 Solves the direct problem with the configured source; `out` receives the
 rank-3 solution.

 # Safety
 `problem` and `out` must be valid pointers.
 */
enum KinvStatus kinv_forward(const struct KinvProblem *problem, struct KinvField **out);

/*
 Solves the inverse problem of an inverse-mode config for its `psi`.

 # Safety
 `problem` and `out` must be valid pointers.
 */
enum KinvStatus kinv_inverse(const struct KinvProblem *problem, struct KinvInverse **out);

/*
 # Safety
 `inverse` must come from [`kinv_inverse`] or be null.
 */
void kinv_inverse_free(struct KinvInverse *inverse);

/*
 Recovered control `f` or `sigma` as a rank-2 field.

 # Safety
 `inverse` and `out` must be valid pointers.
 */
enum KinvStatus kinv_inverse_control(const struct KinvInverse *inverse, struct KinvField **out);

/*
 Final forward state as a rank-3 field.

 # Safety
 `inverse` and `out` must be valid pointers.
 */
enum KinvStatus kinv_inverse_state(const struct KinvInverse *inverse, struct KinvField **out);

/*
 Newton steps taken and the final residual `‖M(χ) − ψ‖_∞`.

 # Safety
 All pointers must be valid.
 */
enum KinvStatus kinv_inverse_stats(const struct KinvInverse *inverse,
                                   size_t *iterations,
                                   double *residual);

/*
 # Safety
 `field` must come from this library or be null.
 */
void kinv_field_free(struct KinvField *field);

/*
 Rank (2 or 3) and shape; `shape` must hold 3 entries, unused ones are 0.

 # Safety
 `field` and `rank` must be valid; `shape` must point to 3 writable values.
 */
enum KinvStatus kinv_field_shape(const struct KinvField *field, size_t *rank, size_t *shape);

/*
 Number of values in the field.

 # Safety
 `field` must be a valid pointer or null (returns 0).
 */
size_t kinv_field_len(const struct KinvField *field);

/*
 Copies the values in row-major order into `buf`, which holds `len`
 doubles; fails if `len` is smaller than [`kinv_field_len`].

 # Safety
 `buf` must point to `len` writable doubles.
 */
enum KinvStatus kinv_field_copy(const struct KinvField *field, double *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KINV_H */
