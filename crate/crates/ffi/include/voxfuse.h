#ifndef VOXFUSE_H
#define VOXFUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes returned by every fallible call.
typedef enum {
  VF_STATUS_OK = 0,
  VF_STATUS_NULL_POINTER = 1,
  VF_STATUS_INVALID_ARGUMENT = 2,
  VF_STATUS_IO = 3,
  VF_STATUS_PARSE = 4,
  VF_STATUS_WEIGHTS = 5,
  VF_STATUS_EMPTY_MESH = 6,
  VF_STATUS_INTERNAL = 7,
} VfStatus;

// Triangle mesh with `f32` vertices and `u32` indices.
typedef struct VfMesh VfMesh;

// Learned model: config plus weights.
typedef struct VfModel VfModel;

// Running reconstruction fed frame by frame.
typedef struct VfReconstruction VfReconstruction;

// Pinhole intrinsics in pixels.
typedef struct {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} VfIntrinsics;

// 3-D mesh comparison scores.
typedef struct {
  double acc;
  double comp;
  double prec;
  double recall;
  double fscore;
} VfMetrics3D;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version string of the library; static, never freed.
const char *vf_version(void);

// Message of the last failed call on this thread (empty if none). Valid
// until the next failing call on the same thread.
const char *vf_last_error(void);

// Creates a model with seeded weights. `config_path` may be null for the
// default configuration.
//
// # Safety
// `config_path` must be null or a NUL-terminated string; `out` must point
// to writable storage for one handle.
VfStatus vf_model_new_seeded(const char *config_path, uint64_t seed, VfModel **out);

// Loads a model from a weight file written by the library.
//
// # Safety
// As for [`vf_model_new_seeded`]; `weights_path` must be non-null.
VfStatus vf_model_load(const char *config_path, const char *weights_path, VfModel **out);

// # Safety
// `model` must be null or a handle from `vf_model_*` not yet freed.
void vf_model_free(VfModel *model);

// Starts an empty reconstruction. The model may be freed afterwards.
//
// # Safety
// `model` must be a live model handle; `out` must be writable.
VfStatus vf_recon_new(const VfModel *model, VfReconstruction **out);

// # Safety
// `recon` must be null or a live reconstruction handle.
void vf_recon_free(VfReconstruction *recon);

// Adds one depth frame. `pose` is the row-major 4×4 camera-to-world
// transform (OpenCV camera axes), `depth` holds `width * height` metric
// depths row by row with 0 marking invalid pixels. A fragment is
// reconstructed and fused whenever enough key frames have gathered.
//
// # Safety
// `recon` must be live; `pose` must point to 16 doubles and `depth` to
// `width * height` floats.
VfStatus vf_recon_add_depth_frame(VfReconstruction *recon,
                                  uint64_t index,
                                  const double *pose,
                                  VfIntrinsics intrinsics,
                                  const float *depth);

// Reconstructs the trailing partial fragment, if any.
//
// # Safety
// `recon` must be live.
VfStatus vf_recon_finish(VfReconstruction *recon);

// Number of fragments fused so far, or 0 for a null handle.
//
// # Safety
// `recon` must be null or live.
uint32_t vf_recon_fragment_count(const VfReconstruction *recon);

// Extracts the current global surface.
//
// # Safety
// `recon` must be live; `out` must be writable.
VfStatus vf_recon_extract_mesh(const VfReconstruction *recon, VfMesh **out);

// Reads a PLY or OBJ mesh.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
VfStatus vf_mesh_read(const char *path, VfMesh **out);

// Writes the mesh; the format follows the extension (.ply or .obj).
//
// # Safety
// `mesh` must be live; `path` must be a NUL-terminated string.
VfStatus vf_mesh_write(const VfMesh *mesh, const char *path);

// # Safety
// `mesh` must be null or live.
size_t vf_mesh_vertex_count(const VfMesh *mesh);

// # Safety
// `mesh` must be null or live.
size_t vf_mesh_triangle_count(const VfMesh *mesh);

// Pointer to `3 * vertex_count` floats, owned by the mesh.
//
// # Safety
// `mesh` must be null or live.
const float *vf_mesh_vertices(const VfMesh *mesh);

// Pointer to `3 * triangle_count` vertex indices, owned by the mesh.
//
// # Safety
// `mesh` must be null or live.
const uint32_t *vf_mesh_triangles(const VfMesh *mesh);

// # Safety
// `mesh` must be null or a mesh handle not yet freed.
void vf_mesh_free(VfMesh *mesh);

// Accuracy, completeness and F-score of `pred` against `gt` at threshold
// `tau` meters.
//
// # Safety
// Both meshes must be live; `out` must be writable.
VfStatus vf_eval_3d(const VfMesh *pred,
                    const VfMesh *gt,
                    double tau,
                    uint64_t seed,
                    VfMetrics3D *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOXFUSE_H */
