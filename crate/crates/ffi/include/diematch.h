/* C interface to the diematch coin-die analysis library. */

#ifndef DIEMATCH_H
#define DIEMATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of bins in a distance histogram.
 */
#define DM_HISTOGRAM_BINS 70

typedef enum DmStatus {
  DM_STATUS_OK = 0,
  DM_STATUS_NULL_POINTER = 1,
  DM_STATUS_INVALID_ARGUMENT = 2,
  DM_STATUS_IO = 3,
  DM_STATUS_PARSE = 4,
  DM_STATUS_REGISTRATION = 5,
  DM_STATUS_SCORING = 6,
  DM_STATUS_GRAPH = 7,
  DM_STATUS_BUFFER_TOO_SMALL = 8,
  DM_STATUS_PANIC = 9,
} DmStatus;

typedef enum DmMethod {
  DM_METHOD_ICP_RAND = 0,
  DM_METHOD_FPFH = 1,
} DmMethod;

typedef enum DmEditAction {
  DM_EDIT_ACTION_FORCED_LINK = 0,
  DM_EDIT_ACTION_FORCED_CUT = 1,
  DM_EDIT_ACTION_CLEAR = 2,
} DmEditAction;

typedef enum DmExportFormat {
  DM_EXPORT_FORMAT_CSV = 0,
  DM_EXPORT_FORMAT_JSON = 1,
} DmExportFormat;

typedef struct DmGraph DmGraph;

typedef struct DmModel DmModel;

typedef struct DmParams DmParams;

typedef struct DmPointCloud DmPointCloud;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dm_version(void);

/**
 * Copies this thread's last error message into `buf` (truncated to fit,
 * always NUL-terminated when `capacity > 0`). Returns the full message
 * length without the NUL.
 *
 * # Safety
 * `buf` must be valid for `capacity` bytes or null with `capacity == 0`.
 */
size_t dm_last_error_message(char *buf, size_t capacity);

/**
 * Loads a PLY file; the cloud id is the file stem.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum DmStatus dm_cloud_load_ply(const char *path, bool require_normals, struct DmPointCloud **out);

/**
 * Builds a cloud from `n` xyz triples; `normals` may be null.
 *
 * # Safety
 * `points` (and `normals` when non-null) must hold `3 * n` doubles.
 */
enum DmStatus dm_cloud_from_arrays(const char *id,
                                   const double *points,
                                   const double *normals,
                                   size_t n,
                                   struct DmPointCloud **out);

/**
 * # Safety
 * `cloud` must be a live handle; `out` a valid pointer.
 */
enum DmStatus dm_cloud_len(const struct DmPointCloud *cloud, size_t *out);

/**
 * Copies the points as xyz triples into `buf`, which must hold
 * `3 * capacity_points` doubles.
 *
 * # Safety
 * `cloud` must be a live handle; `buf` valid for the stated capacity.
 */
enum DmStatus dm_cloud_points(const struct DmPointCloud *cloud,
                              double *buf,
                              size_t capacity_points);

/**
 * Replaces `*cloud` by its voxel-grid downsampling.
 *
 * # Safety
 * `cloud` must be a live handle.
 */
enum DmStatus dm_cloud_downsample(struct DmPointCloud *cloud, double voxel);

/**
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void dm_cloud_free(struct DmPointCloud *cloud);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum DmStatus dm_params_default(struct DmParams **out);

/**
 * Parameters from a JSON object; missing fields keep their defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum DmStatus dm_params_from_json(const char *json, struct DmParams **out);

/**
 * # Safety
 * `params` must be a live handle.
 */
enum DmStatus dm_params_set_seed(struct DmParams *params, uint64_t seed);

/**
 * # Safety
 * `params` must be null or a handle not yet freed.
 */
void dm_params_free(struct DmParams *params);

/**
 * Registers `source` onto `target`. `params` may be null for defaults.
 * `out_transform` receives the row-major 4x4 matrix (16 doubles);
 * `out_rmse` and `out_inliers` are optional.
 *
 * # Safety
 * Handles must be live; `out_transform` must hold 16 doubles.
 */
enum DmStatus dm_register(const struct DmPointCloud *source,
                          const struct DmPointCloud *target,
                          uint32_t method,
                          const struct DmParams *params,
                          double *out_transform,
                          double *out_rmse,
                          size_t *out_inliers);

/**
 * Loads a model file written by `diematch train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum DmStatus dm_model_load(const char *path, struct DmModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void dm_model_free(struct DmModel *model);

/**
 * Same-die probability of two full-resolution scans aligned by
 * `transform` (row-major 4x4 mapping source onto target). Both are
 * downsampled to the scoring grids first. `out_histogram`, when non-null,
 * receives `DM_HISTOGRAM_BINS` values.
 *
 * # Safety
 * Handles must be live; `transform` must hold 16 doubles.
 */
enum DmStatus dm_score(const struct DmPointCloud *source,
                       const struct DmPointCloud *target,
                       const double *transform,
                       const struct DmModel *model,
                       double *out_probability,
                       double *out_histogram);

/**
 * Loads a graph document (with its journal sidecar when present).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum DmStatus dm_graph_load(const char *path, struct DmGraph **out);

/**
 * Builds a graph from a pair-scores CSV (`id_a,id_b,probability,...`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum DmStatus dm_graph_from_scores_csv(const char *path, struct DmGraph **out);

/**
 * # Safety
 * `graph` must be a live handle; `out` a valid pointer.
 */
enum DmStatus dm_graph_version(const struct DmGraph *graph, uint64_t *out);

/**
 * # Safety
 * `graph` must be a live handle; `out` a valid pointer.
 */
enum DmStatus dm_graph_node_count(const struct DmGraph *graph, size_t *out);

/**
 * Applies a manual edit. `out_version` (optional) receives the graph
 * version afterwards; re-applying an edit already in place leaves it
 * unchanged.
 *
 * # Safety
 * `graph` must be a live handle; strings NUL-terminated.
 */
enum DmStatus dm_graph_apply_edit(struct DmGraph *graph,
                                  const char *a,
                                  const char *b,
                                  uint32_t action,
                                  const char *author,
                                  uint64_t timestamp,
                                  uint64_t *out_version);

/**
 * Exports the clusters at `tau` into `buf` as NUL-terminated text, the
 * same bytes as `diematch cluster`. On `BufferTooSmall`, `out_len` still
 * receives the required length (without the NUL).
 *
 * # Safety
 * `graph` must be a live handle; `buf` valid for `capacity` bytes.
 */
enum DmStatus dm_graph_export_clusters(const struct DmGraph *graph,
                                       double tau,
                                       uint32_t format,
                                       char *buf,
                                       size_t capacity,
                                       size_t *out_len);

/**
 * Writes the graph document to `path` (atomically).
 *
 * # Safety
 * `graph` must be a live handle; `path` NUL-terminated.
 */
enum DmStatus dm_graph_save(const struct DmGraph *graph, const char *path);

/**
 * # Safety
 * `graph` must be null or a handle not yet freed.
 */
void dm_graph_free(struct DmGraph *graph);

/**
 * Fowlkes–Mallows index of two labelings of `n` items.
 *
 * # Safety
 * `pred` and `truth` must hold `n` values.
 */
enum DmStatus dm_fmi(const size_t *pred, const size_t *truth, size_t n, double *out);

/**
 * Adjusted Rand index of two labelings of `n` items.
 *
 * # Safety
 * `pred` and `truth` must hold `n` values.
 */
enum DmStatus dm_ari(const size_t *pred, const size_t *truth, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIEMATCH_H */
