#ifndef QMC_H
#define QMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2..=8 mirror the core error kinds.
 */
typedef enum QmcStatus {
  QMC_STATUS_OK = 0,
  QMC_STATUS_INVALID_ARGUMENT = 1,
  QMC_STATUS_FORMAT = 2,
  QMC_STATUS_INTEGRITY = 3,
  QMC_STATUS_IO = 4,
  QMC_STATUS_UNSUPPORTED = 5,
  QMC_STATUS_VALIDATION = 6,
  QMC_STATUS_SHAPE = 7,
  QMC_STATUS_CAPABILITY = 8,
  QMC_STATUS_PANIC = 99,
} QmcStatus;

/**
 * Integer range of a quantizer.
 */
typedef enum QmcMode {
  QMC_MODE_SYMMETRIC = 0,
  QMC_MODE_ASYMMETRIC = 1,
} QmcMode;

/**
 * Owned byte buffer returned by the library.
 */
typedef struct QmcBuffer QmcBuffer;

/**
 * Open container with random access to its tensors.
 */
typedef struct QmcContainer QmcContainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after success.
 */
const char *qmc_last_error(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *qmc_version(void);

/**
 * Pointer to the buffer contents; `*len` receives the size.
 *
 * # Safety
 * `buf` must be a live buffer from this library; `len` may be null.
 */
const uint8_t *qmc_buffer_data(const struct QmcBuffer *buf, size_t *len);

/**
 * # Safety
 * `buf` must be null or a buffer from this library, not yet freed.
 */
void qmc_buffer_free(struct QmcBuffer *buf);

/**
 * Compress `len` bytes into a blob. `codec` is `store`, `huffman`,
 * `tans[:table_log]` or `zstd[:level]`.
 *
 * # Safety
 * `data` valid for `len` reads, `codec` NUL-terminated, `out` writable.
 */
enum QmcStatus qmc_compress(const uint8_t *data,
                            size_t len,
                            const char *codec,
                            struct QmcBuffer **out_blob);

/**
 * Decode and verify a blob produced by [`qmc_compress`].
 *
 * # Safety
 * `blob` valid for `len` reads, `out` writable.
 */
enum QmcStatus qmc_decompress(const uint8_t *blob, size_t len, struct QmcBuffer **out_data);

/**
 * Order-0 Shannon entropy in bits per byte.
 *
 * # Safety
 * `data` valid for `len` reads, `out` writable.
 */
enum QmcStatus qmc_entropy_bits(const uint8_t *data, size_t len, double *out_bits);

/**
 * Tensor-wise int8 quantization of `n` floats into `out_q` (room for `n`),
 * returning the scale and zero point.
 *
 * # Safety
 * `data` valid for `n` reads, `out_q` for `n` writes, scalars writable.
 */
enum QmcStatus qmc_quantize_tensor_wise(const float *data,
                                        size_t n,
                                        enum QmcMode mode,
                                        int8_t *out_q,
                                        float *out_scale,
                                        int8_t *out_zero_point);

/**
 * Open a container; reads only its header and manifest.
 *
 * # Safety
 * `path` NUL-terminated, `out` writable.
 */
enum QmcStatus qmc_container_open(const char *path, struct QmcContainer **out_handle);

/**
 * Number of tensors; 0 for a null handle.
 *
 * # Safety
 * `c` must be null or a live container handle.
 */
size_t qmc_container_tensor_count(const struct QmcContainer *c);

/**
 * Name of tensor `index`, owned by the handle; null if out of range.
 *
 * # Safety
 * `c` must be null or a live container handle.
 */
const char *qmc_container_tensor_name(const struct QmcContainer *c, size_t index);

/**
 * Read, verify and decode one tensor's int8 payload (as bytes).
 *
 * # Safety
 * `c` a live handle, `name` NUL-terminated, `out` writable.
 */
enum QmcStatus qmc_container_read_tensor(struct QmcContainer *c,
                                         const char *name,
                                         struct QmcBuffer **out_payload);

/**
 * # Safety
 * `c` must be null or a handle from [`qmc_container_open`], not yet freed.
 */
void qmc_container_free(struct QmcContainer *c);

/**
 * Verify a container file. Returns `QMC_STATUS_OK` when the file could be
 * examined; `*out_failures` receives the number of failing checks.
 *
 * # Safety
 * `path` NUL-terminated, `out_failures` writable.
 */
enum QmcStatus qmc_verify(const char *path, size_t *out_failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QMC_H */
