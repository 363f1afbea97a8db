#ifndef PEPNET_H
#define PEPNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PepStatus {
  PEP_STATUS_OK = 0,
  PEP_STATUS_NULL_POINTER = 1,
  PEP_STATUS_INVALID_ARGUMENT = 2,
  PEP_STATUS_IO = 3,
  PEP_STATUS_PARSE = 4,
  PEP_STATUS_MODEL = 5,
  PEP_STATUS_BUFFER_TOO_SMALL = 6,
  PEP_STATUS_PANIC = 7,
} PepStatus;

// Parsed event stream.
typedef struct PepEvents PepEvents;

// Trained network loaded from a checkpoint.
typedef struct PepModel PepModel;

// Windows segmented from an event stream.
typedef struct PepWindows PepWindows;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message, NUL-terminated and
// truncated to `len` bytes. Returns the full message length excluding
// the terminator; pass a null buffer to query it.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t pep_last_error_message(char *buf, size_t len);

// Loads a checkpoint written by `pepnet train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PepStatus pep_model_load(const char *path, struct PepModel **out);

// # Safety
// `model` must be null or a handle from [`pep_model_load`] not yet freed.
void pep_model_free(struct PepModel *model);

// Points per input cloud expected by the model, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t pep_model_input_points(const struct PepModel *model);

// Trainable scalar count, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t pep_model_parameter_count(const struct PepModel *model);

// Regresses one pose from a normalized cloud of exactly
// [`pep_model_input_points`] rows. Writes `[px, py, pz, roll, pitch, yaw]`
// (radians) to `out_pose`.
//
// # Safety
// `cloud` must hold `n_points * 3` doubles and `out_pose` room for 6.
enum PepStatus pep_model_predict(const struct PepModel *model,
                                 const double *cloud,
                                 size_t n_points,
                                 double *out_pose);

// Attention weights of the recurrent head, one per final-stage point in
// time order. `*written` receives the trace length; when it exceeds
// `out_len` nothing is copied and `BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `cloud` must hold `n_points * 3` doubles, `out` room for `out_len`
// doubles (or be null when `out_len` is 0) and `written` must be valid.
enum PepStatus pep_model_attention(const struct PepModel *model,
                                   const double *cloud,
                                   size_t n_points,
                                   double *out,
                                   size_t out_len,
                                   size_t *written);

// Parses an event file (`t x y p` per line). `microseconds` selects
// integer-microsecond timestamps instead of decimal seconds.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PepStatus pep_events_load(const char *path,
                               uint32_t width,
                               uint32_t height,
                               bool microseconds,
                               struct PepEvents **out);

// # Safety
// `events` must be null or a live handle.
size_t pep_events_len(const struct PepEvents *events);

// # Safety
// `events` must be null or a handle from [`pep_events_load`] not yet freed.
void pep_events_free(struct PepEvents *events);

// Splits the stream into windows of whole `chunk_us` spans holding at
// least `min_events` events each.
//
// # Safety
// `events` must be a live handle and `out` a valid pointer.
enum PepStatus pep_windows_segment(const struct PepEvents *events,
                                   uint64_t chunk_us,
                                   size_t min_events,
                                   struct PepWindows **out);

// # Safety
// `windows` must be null or a live handle.
size_t pep_windows_len(const struct PepWindows *windows);

// Start and end timestamps (microseconds) of window `index`.
//
// # Safety
// `windows` must be a live handle; `t_start` and `t_end` valid pointers.
enum PepStatus pep_windows_span(const struct PepWindows *windows,
                                size_t index,
                                uint64_t *t_start,
                                uint64_t *t_end);

// Samples `n_points` events of window `index` and writes the normalized
// cloud (`n_points x 3`) to `out`.
//
// # Safety
// `windows` must be a live handle and `out` hold `n_points * 3` doubles.
enum PepStatus pep_windows_cloud(const struct PepWindows *windows,
                                 size_t index,
                                 size_t n_points,
                                 uint64_t seed,
                                 uint32_t width,
                                 uint32_t height,
                                 double *out);

// # Safety
// `windows` must be null or a handle from [`pep_windows_segment`] not yet
// freed.
void pep_windows_free(struct PepWindows *windows);

// Farthest point sampling seeded at row 0. Writes `n_out` row indices in
// selection order.
//
// # Safety
// `coords` must hold `n * 3` doubles and `out_idx` room for `n_out`.
enum PepStatus pep_fps(const double *coords, size_t n, size_t n_out, size_t *out_idx);

// `k` nearest rows of every centroid (the centroid included), listed in
// ascending row order so time order is kept. Writes `m * k` indices.
//
// # Safety
// `coords` must hold `n * 3` doubles, `centroids` `m` indices and
// `out_idx` room for `m * k`.
enum PepStatus pep_knn(const double *coords,
                       size_t n,
                       const size_t *centroids,
                       size_t m,
                       size_t k,
                       size_t *out_idx);

// Combined score from median translation error and median rotation
// error in degrees.
double pep_t_plus_r(double median_trans, double median_rot_deg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEPNET_H */
