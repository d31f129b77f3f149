#ifndef VNN_H
#define VNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum VnnStatus {
  VNN_STATUS_OK = 0,
  VNN_STATUS_NULL_POINTER = 1,
  VNN_STATUS_CONFIG = 2,
  VNN_STATUS_DATA = 3,
  VNN_STATUS_NUMERIC = 4,
  VNN_STATUS_DIMENSION = 5,
  VNN_STATUS_UNDEFINED_METRIC = 6,
  VNN_STATUS_IO = 7,
  VNN_STATUS_FORMAT = 8,
  VNN_STATUS_BUFFER_TOO_SMALL = 9,
  VNN_STATUS_PANIC = 10,
  VNN_STATUS_INVALID_ARGUMENT = 11,
} VnnStatus;

// A loaded model. Opaque to C callers.
typedef struct VnnModel VnnModel;

// Message for the last failed call on this thread. Valid until the next
// failing call on the same thread; empty if nothing has failed.
const char *vnn_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *vnn_version(void);

// Load a `VNC1` checkpoint. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum VnnStatus vnn_model_load(const char *path, struct VnnModel **out);

// Create a freshly initialized model with default head settings and the
// given branches, all of width `d_prime`.
//
// # Safety
// `branch_sizes` must point to `branch_count` values and `out` be valid.
enum VnnStatus vnn_model_init(size_t input_dim,
                              size_t num_classes,
                              const size_t *branch_sizes,
                              size_t branch_count,
                              size_t d_prime,
                              uint64_t seed,
                              struct VnnModel **out);

// Release a handle. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void vnn_model_free(struct VnnModel *model);

// Per-view feature width `D` the model expects; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t vnn_model_input_dim(const struct VnnModel *model);

// Number of classes; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t vnn_model_num_classes(const struct VnnModel *model);

// Descriptor width (512); 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t vnn_model_descriptor_dim(const struct VnnModel *model);

// Smallest view count every branch of the model accepts; 0 for null.
//
// # Safety
// `model` must be null or a live handle.
size_t vnn_model_min_views(const struct VnnModel *model);

// Compute the 512-d descriptor of one shape.
//
// # Safety
// `views` must hold `view_count * dim` floats and `out` `out_len` floats.
enum VnnStatus vnn_model_descriptor(const struct VnnModel *model,
                                    const float *views,
                                    size_t view_count,
                                    size_t dim,
                                    float *out,
                                    size_t out_len);

// Compute the class logits of one shape.
//
// # Safety
// `views` must hold `view_count * dim` floats and `out` `out_len` floats.
enum VnnStatus vnn_model_logits(const struct VnnModel *model,
                                const float *views,
                                size_t view_count,
                                size_t dim,
                                float *out,
                                size_t out_len);

// Average precision of a ranked list given as 0/1 relevance bytes.
//
// # Safety
// `relevant` must hold `len` bytes and `out` be valid.
enum VnnStatus vnn_average_precision(const uint8_t *relevant, size_t len, double *out);

// F-measure over the first `k` items with `total_relevant` relevant items.
//
// # Safety
// `relevant` must hold `len` bytes and `out` be valid.
enum VnnStatus vnn_f_measure_at(const uint8_t *relevant,
                                size_t len,
                                size_t k,
                                size_t total_relevant,
                                double *out);

// NDCG over the first `k` graded gains.
//
// # Safety
// `gains` must hold `len` doubles and `out` be valid.
enum VnnStatus vnn_ndcg_at(const double *gains, size_t len, size_t k, double *out);

#endif  /* VNN_H */
