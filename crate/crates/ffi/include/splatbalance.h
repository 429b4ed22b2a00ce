#ifndef SPLATBALANCE_H
#define SPLATBALANCE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SbDistribution {
  SB_DISTRIBUTION_PARETO = 0,
  SB_DISTRIBUTION_LOG_NORMAL = 1,
  SB_DISTRIBUTION_UNIFORM = 2,
} SbDistribution;

/**
 * Kernel variants, in the order the simulator reports them.
 */
typedef enum SbKernelVariant {
  SB_KERNEL_VARIANT_NAIVE = 0,
  SB_KERNEL_VARIANT_DYNAMIC_BLOCKS = 1,
  SB_KERNEL_VARIANT_GAUSSIAN_WISE = 2,
  SB_KERNEL_VARIANT_FINE_GRAINED_COMBINED = 3,
  SB_KERNEL_VARIANT_SHARED_MEM_OPT = 4,
} SbKernelVariant;

typedef enum SbStatus {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_POINTER = 1,
  SB_STATUS_INVALID_UTF8 = 2,
  SB_STATUS_IO = 3,
  SB_STATUS_PARSE = 4,
  SB_STATUS_INVALID_INPUT = 5,
  SB_STATUS_DIMENSION_MISMATCH = 6,
  SB_STATUS_OUT_OF_RANGE = 7,
  SB_STATUS_BUFFER_TOO_SMALL = 8,
  SB_STATUS_PANIC = 9,
} SbStatus;

/**
 * Per-tile list lengths and per-pixel termination indices.
 */
typedef struct SbLoads SbLoads;

/**
 * A rendered frame.
 */
typedef struct SbRender SbRender;

/**
 * A validated scene.
 */
typedef struct SbScene SbScene;

typedef struct SbMachineConfig {
  uint32_t num_sms;
  uint32_t block_slots_per_sm;
  uint32_t warps_per_block;
  uint32_t warp_size;
} SbMachineConfig;

typedef struct SbCostModel {
  double compute_step;
  double shared_chunk_load;
  double shared_chunk_load_opt;
  double prefix_group_overhead;
  double warp_reduce;
  double pool_fetch;
  double writeback;
  double global_feature_read;
} SbCostModel;

/**
 * Synthetic load generator parameters. `distribution` holds an `SbDistribution`.
 */
typedef struct SbSkewParams {
  uint32_t distribution;
  double shape;
  double scale;
  uint32_t max_cap;
  uint32_t tiles;
  uint64_t seed;
  double term_fraction_mean;
  double term_fraction_spread;
  uint32_t tile_pixels;
} SbSkewParams;

/**
 * Largest relative difference per plane (r, g, b, alpha, depth) against the reference.
 */
typedef struct SbDeviation {
  double max_rel[5];
  double max_abs[5];
  uint64_t contrib_mismatches;
} SbDeviation;

typedef struct SbSimMetrics {
  /**
   * An `SbKernelVariant`.
   */
  uint32_t variant;
  /**
   * 0 static, 1 dynamic.
   */
  uint32_t dynamic_dispatch;
  double makespan;
  double achieved_occupancy;
  double idle_fraction;
  double waves;
  uint64_t tasks;
} SbSimMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length in bytes, excluding
 * the terminator. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t sb_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sb_version(void);

/**
 * # Safety
 * `out` must be null or point to writable memory for one struct.
 */
enum SbStatus sb_machine_default(struct SbMachineConfig *out);

/**
 * # Safety
 * `out` must be null or point to writable memory for one struct.
 */
enum SbStatus sb_cost_default(struct SbCostModel *out);

/**
 * Fills `out` with the skew fixture parameters.
 *
 * # Safety
 * `out` must be null or point to writable memory for one struct.
 */
enum SbStatus sb_skew_default(struct SbSkewParams *out);

/**
 * Loads and validates a JSON scene file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SbStatus sb_scene_load(const char *path, struct SbScene **out);

/**
 * Parses and validates a scene from a JSON string.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum SbStatus sb_scene_from_json(const char *json, struct SbScene **out);

/**
 * # Safety
 * `scene` must be null or a handle from this library not yet freed.
 */
void sb_scene_free(struct SbScene *scene);

/**
 * Image size and splat count of a scene.
 *
 * # Safety
 * `scene` must be a live handle; the out pointers may be null.
 */
enum SbStatus sb_scene_info(const struct SbScene *scene,
                            uint32_t *width,
                            uint32_t *height,
                            uint64_t *num_gaussians);

/**
 * Renders `scene` with the sequential reference (`variant` < 0) or a kernel
 * variant (an `SbKernelVariant`).
 *
 * # Safety
 * `scene` must be a live handle; `out` must be writable.
 */
enum SbStatus sb_render(const struct SbScene *scene, int32_t variant, struct SbRender **out);

/**
 * # Safety
 * `render` must be null or a handle from this library not yet freed.
 */
void sb_render_free(struct SbRender *render);

/**
 * Copies the frame's planes, row-major. `rgb` takes `3·w·h` floats
 * (interleaved), `alpha` and `depth` take `w·h` each; any may be null.
 * `capacity` is the pixel count each non-null buffer can hold.
 *
 * # Safety
 * Non-null buffers must be valid for the sizes above.
 */
enum SbStatus sb_render_planes(const struct SbRender *render,
                               size_t capacity,
                               float *rgb,
                               float *alpha,
                               float *depth);

/**
 * Compares `other` against `reference`.
 *
 * # Safety
 * Both handles must be live; `out` must be writable.
 */
enum SbStatus sb_render_compare(const struct SbRender *reference,
                                const struct SbRender *other,
                                struct SbDeviation *out);

/**
 * Generates synthetic tile loads.
 *
 * # Safety
 * `params` must be readable; `out` must be writable.
 */
enum SbStatus sb_loads_generate(const struct SbSkewParams *params, struct SbLoads **out);

/**
 * Tile loads of a scene, from its binning and reference render.
 *
 * # Safety
 * `scene` must be a live handle; `out` must be writable.
 */
enum SbStatus sb_loads_from_scene(const struct SbScene *scene, struct SbLoads **out);

/**
 * # Safety
 * `loads` must be null or a handle from this library not yet freed.
 */
void sb_loads_free(struct SbLoads *loads);

/**
 * Copies per-tile counts into `counts` (may be null) and stores the tile
 * count in `num_tiles`.
 *
 * # Safety
 * `loads` must be live; `counts` must be null or valid for `capacity` values.
 */
enum SbStatus sb_loads_counts(const struct SbLoads *loads,
                              uint32_t *counts,
                              size_t capacity,
                              size_t *num_tiles);

/**
 * Simulates one kernel variant on `loads` under its own dispatch policy.
 * `machine` and `cost` may be null for the defaults.
 *
 * # Safety
 * `loads` must be live; non-null pointers must be valid.
 */
enum SbStatus sb_simulate(const struct SbLoads *loads,
                          uint32_t variant,
                          const struct SbMachineConfig *machine,
                          const struct SbCostModel *cost,
                          struct SbSimMetrics *out);

/**
 * Inclusive warp prefix product: `out[k] = t_in · x[0] · … · x[k]` over 32
 * lanes; `broadcast` receives the full product.
 *
 * # Safety
 * `x` and `out` must be valid for 32 doubles; `broadcast` may be null.
 */
enum SbStatus sb_warp_prefix_product(const double *x, double t_in, double *out, double *broadcast);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLATBALANCE_H */
