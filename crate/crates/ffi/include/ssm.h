#ifndef SSM_H
#define SSM_H

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum SsmStatus {
  SSM_STATUS_OK = 0,
  SSM_STATUS_NULL_POINTER = 1,
  SSM_STATUS_INVALID_ARGUMENT = 2,
  SSM_STATUS_IO = 3,
  SSM_STATUS_MESH = 4,
  SSM_STATUS_MODEL = 5,
  SSM_STATUS_FIT = 6,
  SSM_STATUS_PANIC = 7,
} SsmStatus;

/*
 A finished fit: state plus fitted mesh.
 */
typedef struct SsmFit SsmFit;

/*
 A triangle mesh.
 */
typedef struct SsmMesh SsmMesh;

/*
 A statistical shape model.
 */
typedef struct SsmModel SsmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *ssm_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ssm_version(void);

/*
 Load an OBJ or PLY mesh.

 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
enum SsmStatus ssm_mesh_load(const char *path, struct SsmMesh **out);

/*
 Build a mesh from `3·vertex_count` coordinates and `3·triangle_count` indices.

 # Safety
 The arrays hold at least the stated number of elements; `out` is writable.
 */
enum SsmStatus ssm_mesh_from_arrays(const double *vertices,
                                    uintptr_t vertex_count,
                                    const uint32_t *triangles,
                                    uintptr_t triangle_count,
                                    struct SsmMesh **out);

/*
 Save as OBJ or binary PLY, chosen by extension.

 # Safety
 `mesh` is a live handle; `path` is a NUL-terminated string.
 */
enum SsmStatus ssm_mesh_save(const struct SsmMesh *mesh, const char *path);

/*
 Vertex count, 0 for a null handle.

 # Safety
 `mesh` is null or a live handle.
 */
uintptr_t ssm_mesh_vertex_count(const struct SsmMesh *mesh);

/*
 Triangle count, 0 for a null handle.

 # Safety
 `mesh` is null or a live handle.
 */
uintptr_t ssm_mesh_triangle_count(const struct SsmMesh *mesh);

/*
 Copy `x0, y0, z0, x1, …` into `buffer`, which holds `len` doubles (at least 3·V).

 # Safety
 `mesh` is a live handle; `buffer` holds `len` writable doubles.
 */
enum SsmStatus ssm_mesh_copy_vertices(const struct SsmMesh *mesh, double *buffer, uintptr_t len);

/*
 Enclosed volume (mm³) of a closed mesh.

 # Safety
 `mesh` is a live handle; `volume` is writable.
 */
enum SsmStatus ssm_mesh_volume(const struct SsmMesh *mesh, double *volume);

/*
 Symmetric mean and maximum surface distance between two meshes.

 # Safety
 Both handles are live; `mean` and `max` are writable.
 */
enum SsmStatus ssm_mesh_distance(const struct SsmMesh *a,
                                 const struct SsmMesh *b,
                                 double *mean,
                                 double *max);

/*
 # Safety
 `mesh` is null or a handle not yet freed.
 */
void ssm_mesh_free(struct SsmMesh *mesh);

/*
 Load a model written by `ssm train` (`<path>.ssm.json` + `.ssm.bin`).

 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
enum SsmStatus ssm_model_load(const char *path, struct SsmModel **out);

/*
 Number of components, 0 for a null handle.

 # Safety
 `model` is null or a live handle.
 */
uintptr_t ssm_model_component_count(const struct SsmModel *model);

/*
 Decode `beta` (length = component count) at identity pose.

 # Safety
 `model` is a live handle; `beta` holds `beta_len` doubles; `out` is writable.
 */
enum SsmStatus ssm_model_decode(const struct SsmModel *model,
                                const double *beta,
                                uintptr_t beta_len,
                                struct SsmMesh **out);

/*
 # Safety
 `model` is null or a handle not yet freed.
 */
void ssm_model_free(struct SsmModel *model);

/*
 Fit `model` to `scan`. `landmarks_json` (landmark file contents) and
 `config_json` (fit config) may be null; `coregister` non-zero adds the
 free-form stage.

 # Safety
 Handles are live; strings are null or NUL-terminated; `out` is writable.
 */
enum SsmStatus ssm_fit(const struct SsmModel *model,
                       const struct SsmMesh *scan,
                       const char *landmarks_json,
                       const char *config_json,
                       int coregister_flag,
                       struct SsmFit **out);

/*
 Copy of the fitted mesh.

 # Safety
 `fit` is a live handle; `out` is writable.
 */
enum SsmStatus ssm_fit_mesh(const struct SsmFit *fit, struct SsmMesh **out);

/*
 1 when the fit converged, 0 otherwise or for a null handle.

 # Safety
 `fit` is null or a live handle.
 */
int ssm_fit_converged(const struct SsmFit *fit);

/*
 Copy the pose: `beta` (up to `beta_len` values), rotation vector (3, radians)
 and translation (3, mm). Any output pointer may be null to skip it.
 `beta_count` receives the number of coefficients.

 # Safety
 `fit` is a live handle; non-null outputs hold the stated sizes.
 */
enum SsmStatus ssm_fit_pose(const struct SsmFit *fit,
                            double *beta,
                            uintptr_t beta_len,
                            uintptr_t *beta_count,
                            double *rotation,
                            double *translation);

/*
 Full fit state (pose, weights, energy history) as a JSON string, to be
 released with [`ssm_string_free`]. Null on failure.

 # Safety
 `fit` is null or a live handle.
 */
char *ssm_fit_state_json(const struct SsmFit *fit);

/*
 # Safety
 `fit` is null or a handle not yet freed.
 */
void ssm_fit_free(struct SsmFit *fit);

/*
 # Safety
 `s` is null or a string returned by this library and not yet freed.
 */
void ssm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSM_H */
