#ifndef AISC_H
#define AISC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>

// Result of every fallible call. Values 2 to 5 match the CLI exit codes.
typedef enum AiscStatus {
  AISC_STATUS_OK = 0,
  // A required pointer was null.
  AISC_STATUS_NULL_ARGUMENT = 1,
  AISC_STATUS_CONFIG = 2,
  // Invalid input data, file or format error.
  AISC_STATUS_DATA = 3,
  // Singular-value degeneracy on the SVD path or a rank-deficient shape.
  AISC_STATUS_DEGENERATE = 4,
  AISC_STATUS_DIVERGENCE = 5,
  // Internal panic; the library state is still usable.
  AISC_STATUS_INTERNAL = 6,
} AiscStatus;

// Which backward path [`aisc_backward`] uses.
typedef enum AiscBackwardPath {
  AISC_BACKWARD_PATH_SVD = 0,
  AISC_BACKWARD_PATH_PROJECTOR = 1,
} AiscBackwardPath;

// Trained model handle.
typedef struct AiscModel AiscModel;

// Landmark shape handle.
typedef struct AiscShape AiscShape;

// Output of [`aisc_model_predict`]. Branch probabilities that the model
// does not produce are reported as NaN with the matching flag cleared.
typedef struct AiscScore {
  double p_appearance;
  double p_shape;
  double p_fused;
  bool has_appearance;
  bool has_shape;
  bool is_kin;
} AiscScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL,
// so a caller can size the buffer with a first call passing `len = 0`.
//
// # Safety
// `buf` must point to `len` writable bytes, or be null with `len = 0`.
size_t aisc_last_error_message(char *buf, size_t len);

// Creates a shape from `m` landmarks given as `x0, y0, x1, y1, ...`.
//
// # Safety
// `xy` must point to `2 * m` doubles; `out` must be writable.
enum AiscStatus aisc_shape_new(const double *xy, size_t m, struct AiscShape **out);

// Loads a text or binary landmark file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum AiscStatus aisc_shape_load(const char *path, struct AiscShape **out);

// Number of landmarks, or 0 for a null handle.
//
// # Safety
// `shape` must be null or a live handle.
size_t aisc_shape_landmark_count(const struct AiscShape *shape);

// Releases a shape. Null is ignored.
//
// # Safety
// `shape` must be null or a handle not yet freed.
void aisc_shape_free(struct AiscShape *shape);

// Computes the comparison matrix of two shapes with the same landmark count.
//
// `b_out` (m × m) and `angles_out` (2 principal angles, ascending) may be
// null when not wanted; `norm_out` receives the Frobenius norm when non-null.
//
// # Safety
// Handles must be live; non-null outputs must have the stated sizes.
enum AiscStatus aisc_compare(const struct AiscShape *a,
                             const struct AiscShape *b,
                             bool centering,
                             double *b_out,
                             double *norm_out,
                             double *angles_out);

// Gradient of a loss with respect to both shapes, given its gradient with
// respect to the comparison matrix (`upstream`, m × m). Outputs are m × 2.
//
// The SVD path returns `AiscStatus::Degenerate` when a shape's two singular
// values nearly coincide; the projector path has no such restriction.
//
// # Safety
// Handles must be live; `upstream` holds m·m doubles, `grad_a`/`grad_b`
// each have room for 2·m.
enum AiscStatus aisc_backward(const struct AiscShape *a,
                              const struct AiscShape *b,
                              bool centering,
                              enum AiscBackwardPath path,
                              const double *upstream,
                              double *grad_a,
                              double *grad_b);

// Loads a checkpoint written by `aisc train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum AiscStatus aisc_model_load(const char *path, struct AiscModel **out);

// Landmark count the model was trained on, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t aisc_model_landmark_count(const struct AiscModel *model);

// Appearance vector length the model expects; 0 when it uses shape only.
//
// # Safety
// `model` must be null or a live handle.
size_t aisc_model_appearance_dim(const struct AiscModel *model);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void aisc_model_free(struct AiscModel *model);

// Scores one pair. `appearance_a`/`appearance_b` hold `dim` values each and
// must be null (with `dim = 0`) for shape-only models.
//
// # Safety
// Handles must be live; appearance pointers must hold `dim` doubles;
// `out` must be writable.
enum AiscStatus aisc_model_predict(const struct AiscModel *model,
                                   const struct AiscShape *a,
                                   const struct AiscShape *b,
                                   const double *appearance_a,
                                   const double *appearance_b,
                                   size_t dim,
                                   struct AiscScore *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AISC_H */
