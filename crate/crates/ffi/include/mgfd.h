#ifndef MGFD_H
#define MGFD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MGFD_OK 0

/**
 * A required pointer argument was null.
 */
#define MGFD_ERR_NULL 1

/**
 * Bad argument, shape mismatch, malformed file or configuration.
 */
#define MGFD_ERR_INVALID 2

/**
 * Filesystem failure.
 */
#define MGFD_ERR_IO 3

/**
 * Any other failure inside the library.
 */
#define MGFD_ERR_RUNTIME 4

/**
 * A Rust panic was caught at the boundary.
 */
#define MGFD_ERR_PANIC 5

/**
 * A loaded multiplex graph with features and labels.
 */
typedef struct MgfdGraph MgfdGraph;

/**
 * A trained graph-free MLP student.
 */
typedef struct MgfdStudent MgfdStudent;

/**
 * A trained multiplex GNN teacher.
 */
typedef struct MgfdTeacher MgfdTeacher;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Status text for the most recent failure on this thread, or null when the
 * last call succeeded. The pointer stays valid until the next mgfd call on
 * the same thread.
 */
const char *mgfd_last_error(void);

/**
 * Load a dataset directory.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int32_t mgfd_graph_load(const char *path, struct MgfdGraph **out);

/**
 * Build a synthetic dataset from a JSON generator spec.
 *
 * # Safety
 * `spec_json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int32_t mgfd_graph_generate(const char *spec_json, struct MgfdGraph **out);

/**
 * # Safety
 * `graph` must come from `mgfd_graph_load`/`mgfd_graph_generate` or be null.
 */
void mgfd_graph_free(struct MgfdGraph *graph);

/**
 * Write node count, view count, feature dimension and class count.
 *
 * # Safety
 * `graph` must be a live handle; each output pointer may be null.
 */
int32_t mgfd_graph_shape(const struct MgfdGraph *graph,
                         size_t *num_nodes,
                         size_t *num_views,
                         size_t *feature_dim,
                         size_t *num_classes);

/**
 * Copy the row-major feature matrix (`num_nodes * feature_dim` values).
 *
 * # Safety
 * `graph` must be a live handle and `out` must hold `len` doubles.
 */
int32_t mgfd_graph_features(const struct MgfdGraph *graph, double *out, size_t len);

/**
 * Number of distinct nodes a `layers`-deep multiplex GNN reads to infer
 * the given targets.
 *
 * # Safety
 * `graph` must be a live handle, `targets` must hold `num_targets` entries.
 */
int32_t mgfd_graph_fetch_count(const struct MgfdGraph *graph,
                               const uint32_t *targets,
                               size_t num_targets,
                               size_t layers,
                               size_t *out);

/**
 * Load a teacher checkpoint.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int32_t mgfd_teacher_load(const char *path, struct MgfdTeacher **out);

/**
 * # Safety
 * `teacher` must come from `mgfd_teacher_load` or be null.
 */
void mgfd_teacher_free(struct MgfdTeacher *teacher);

/**
 * Integrated teacher class predictions for every node of `graph`.
 *
 * # Safety
 * Handles must be live; `out` must hold `len >= num_nodes` entries.
 */
int32_t mgfd_teacher_predict(const struct MgfdTeacher *teacher,
                             const struct MgfdGraph *graph,
                             uint32_t *out,
                             size_t len);

/**
 * Load a student checkpoint.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int32_t mgfd_student_load(const char *path, struct MgfdStudent **out);

/**
 * # Safety
 * `student` must come from `mgfd_student_load` or be null.
 */
void mgfd_student_free(struct MgfdStudent *student);

/**
 * Expected feature dimension and number of output classes.
 *
 * # Safety
 * `student` must be a live handle; output pointers may be null.
 */
int32_t mgfd_student_shape(const struct MgfdStudent *student,
                           size_t *feature_dim,
                           size_t *num_classes);

/**
 * Graph-free class predictions from a row-major `rows x cols` feature block.
 *
 * # Safety
 * `student` must be live, `x` must hold `rows * cols` doubles and `out`
 * must hold `len >= rows` entries.
 */
int32_t mgfd_student_predict(const struct MgfdStudent *student,
                             const double *x,
                             size_t rows,
                             size_t cols,
                             uint32_t *out,
                             size_t len);

/**
 * Node-wise ensemble coefficients (row-major `rows x num_teachers`) for an
 * MGFNN+ student. `num_teachers` receives the column count.
 *
 * # Safety
 * `student` must be live, `x` must hold `rows * cols` doubles and `out`
 * must hold `len` doubles.
 */
int32_t mgfd_student_coefficients(const struct MgfdStudent *student,
                                  const double *x,
                                  size_t rows,
                                  size_t cols,
                                  double *out,
                                  size_t len,
                                  size_t *num_teachers);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGFD_H */
