#ifndef GPK_H
#define GPK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum GpkStatus {
  GPK_STATUS_OK = 0,
  GPK_STATUS_NULL_POINTER = 1,
  GPK_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Degenerate camera, ray parallel to or meeting the plane behind the camera.
   */
  GPK_STATUS_GEOMETRY = 3,
  /**
   * A query or sample lies outside the grid.
   */
  GPK_STATUS_OUT_OF_GRID = 4,
  /**
   * Malformed serialized grid.
   */
  GPK_STATUS_FORMAT = 5,
  /**
   * The fit produced a non-finite loss.
   */
  GPK_STATUS_DIVERGED = 6,
  /**
   * Output buffer too small; the required size was reported.
   */
  GPK_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  GPK_STATUS_PANIC = 8,
} GpkStatus;

/**
 * Pinhole camera built from a 3x4 projection matrix.
 */
typedef struct GpkCamera GpkCamera;

/**
 * Dense depth grid.
 */
typedef struct GpkDepthGrid GpkDepthGrid;

/**
 * Owned list of grounded samples.
 */
typedef struct GpkSampleSet GpkSampleSet;

/**
 * 3D box: bottom-face center, (h, w, l) and yaw, in the camera frame.
 */
typedef struct GpkBox3D {
  double location[3];
  double dims[3];
  double yaw;
} GpkBox3D;

/**
 * Pixel coordinates and the depth at that pixel.
 */
typedef struct GpkSample {
  double u;
  double v;
  double z;
} GpkSample;

/**
 * Grid fitting parameters; see [`gpk_fit_config_default`].
 */
typedef struct GpkFitConfig {
  size_t iterations;
  double step;
  double max_step;
  /**
   * Constant initial value; NaN selects the mean sample depth.
   */
  double init;
  double smoothness;
  double curvature;
  double min_step;
} GpkFitConfig;

typedef struct GpkDepthEstimate {
  double z;
  double sigma;
} GpkDepthEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *gpk_last_error(void);

/**
 * Static description of a status code.
 */
const char *gpk_status_message(enum GpkStatus status);

/**
 * Library version, NUL-terminated.
 */
const char *gpk_version(void);

/**
 * Create a camera from a row-major 3x4 projection matrix.
 *
 * # Safety
 * `p` must point to 12 doubles; `out` must be writable.
 */
enum GpkStatus gpk_camera_new(const double *p, struct GpkCamera **out_cam);

/**
 * # Safety
 * `cam` must be null or a handle from [`gpk_camera_new`] not yet freed.
 */
void gpk_camera_free(struct GpkCamera *cam);

/**
 * Project a camera-frame point to `(u, v, depth)`.
 *
 * # Safety
 * `point` must point to 3 doubles and `uvz` to 3 writable doubles.
 */
enum GpkStatus gpk_camera_project(const struct GpkCamera *cam, const double *point, double *uvz);

/**
 * Depth where the ray through pixel `(u, v)` meets the plane `y = y0`.
 *
 * # Safety
 * `cam` must be a live handle; `depth` must be writable.
 */
enum GpkStatus gpk_camera_ray_plane_depth(const struct GpkCamera *cam,
                                          double u,
                                          double v,
                                          double y0,
                                          double *depth);

/**
 * Like [`gpk_camera_ray_plane_depth`] for the plane `normal . p = offset`.
 *
 * # Safety
 * `normal` must point to 3 doubles; `depth` must be writable.
 */
enum GpkStatus gpk_camera_ray_general_plane_depth(const struct GpkCamera *cam,
                                                  double u,
                                                  double v,
                                                  const double *normal,
                                                  double offset,
                                                  double *depth);

/**
 * The 8 corners, bottom face first (k1..k4) then top (k5..k8), as 24 doubles.
 *
 * # Safety
 * `bx` must be valid; `corners` must point to 24 writable doubles.
 */
enum GpkStatus gpk_box_corners(const struct GpkBox3D *bx, double *corners);

/**
 * Bird's-eye-view IoU, or NaN if either pointer is null.
 *
 * # Safety
 * Non-null pointers must be valid.
 */
double gpk_bev_iou(const struct GpkBox3D *a, const struct GpkBox3D *b);

/**
 * 3D IoU, or NaN if either pointer is null.
 *
 * # Safety
 * Non-null pointers must be valid.
 */
double gpk_iou_3d(const struct GpkBox3D *a, const struct GpkBox3D *b);

/**
 * Seeded grounded samples of a box's bottom face.
 *
 * # Safety
 * `cam` and `bx` must be valid; `out_set` must be writable.
 */
enum GpkStatus gpk_grounded_samples(const struct GpkCamera *cam,
                                    const struct GpkBox3D *bx,
                                    uint64_t seed,
                                    struct GpkSampleSet **out_set);

/**
 * Copy `len` caller samples into a new set.
 *
 * # Safety
 * `samples` must point to `len` elements; `out_set` must be writable.
 */
enum GpkStatus gpk_samples_new(const struct GpkSample *samples,
                               size_t len,
                               struct GpkSampleSet **out_set);

/**
 * Number of samples, 0 for null.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t gpk_samples_len(const struct GpkSampleSet *set);

/**
 * Copy the samples into `buf` (capacity `cap`). With a small or null buffer
 * returns `BufferTooSmall` and only sets `*needed`.
 *
 * # Safety
 * `buf` must have room for `cap` elements; `needed` must be writable.
 */
enum GpkStatus gpk_samples_copy(const struct GpkSampleSet *set,
                                struct GpkSample *buf,
                                size_t cap,
                                size_t *needed);

/**
 * # Safety
 * `set` must be null or a live handle.
 */
void gpk_samples_free(struct GpkSampleSet *set);

/**
 * Grid of `height x width` nodes, spaced `stride` pixels, from row-major
 * `values` (`len` must equal `height * width`).
 *
 * # Safety
 * `values` must point to `len` doubles; `out_grid` must be writable.
 */
enum GpkStatus gpk_grid_new(size_t height,
                            size_t width,
                            double stride,
                            const double *values,
                            size_t len,
                            struct GpkDepthGrid **out_grid);

/**
 * # Safety
 * `grid` must be null or a live handle.
 */
void gpk_grid_free(struct GpkDepthGrid *grid);

/**
 * # Safety
 * `grid` must be a live handle; any non-null output must be writable.
 */
enum GpkStatus gpk_grid_shape(const struct GpkDepthGrid *grid,
                              size_t *height,
                              size_t *width,
                              double *stride);

/**
 * Copy the row-major values into `buf` (capacity `cap`).
 *
 * # Safety
 * `buf` must have room for `cap` doubles.
 */
enum GpkStatus gpk_grid_values(const struct GpkDepthGrid *grid, double *buf, size_t cap);

/**
 * Bilinear read-out at grid coordinates.
 *
 * # Safety
 * `grid` must be a live handle; `value` must be writable.
 */
enum GpkStatus gpk_grid_interpolate(const struct GpkDepthGrid *grid,
                                    double ug,
                                    double vg,
                                    double *value);

/**
 * Bilinear read-out at pixel coordinates.
 *
 * # Safety
 * `grid` must be a live handle; `value` must be writable.
 */
enum GpkStatus gpk_grid_interpolate_pixel(const struct GpkDepthGrid *grid,
                                          double u,
                                          double v,
                                          double *value);

/**
 * Mean L1 depth-align loss; the gradient is written to `grad` when it is
 * non-null (`grad_len` must then equal the node count).
 *
 * # Safety
 * `grid`, `set` must be live handles; `grad` must have `grad_len` slots.
 */
enum GpkStatus gpk_depth_align_loss(const struct GpkDepthGrid *grid,
                                    const struct GpkSampleSet *set,
                                    double *loss,
                                    double *grad,
                                    size_t grad_len);

/**
 * Default fitting parameters.
 */
struct GpkFitConfig gpk_fit_config_default(void);

/**
 * Fit a new grid to `nsets` sample sets. `config` may be null for defaults;
 * `final_loss` may be null.
 *
 * # Safety
 * `sets` must point to `nsets` live handles; `out_grid` must be writable.
 */
enum GpkStatus gpk_grid_fit(const struct GpkSampleSet *const *sets,
                            size_t nsets,
                            size_t height,
                            size_t width,
                            double stride,
                            const struct GpkFitConfig *config,
                            struct GpkDepthGrid **out_grid,
                            double *final_loss);

/**
 * Serialize in the DGRD layout. Always sets `*needed`; with a small or null
 * buffer returns `BufferTooSmall`.
 *
 * # Safety
 * `buf` must have room for `cap` bytes; `needed` must be writable.
 */
enum GpkStatus gpk_grid_encode(const struct GpkDepthGrid *grid,
                               uint8_t *buf,
                               size_t cap,
                               size_t *needed);

/**
 * Parse a DGRD byte string.
 *
 * # Safety
 * `bytes` must point to `len` bytes; `out_grid` must be writable.
 */
enum GpkStatus gpk_grid_decode(const uint8_t *bytes, size_t len, struct GpkDepthGrid **out_grid);

/**
 * Pinhole depth `f * h / h2d`.
 *
 * # Safety
 * `depth` must be writable.
 */
enum GpkStatus gpk_geometry_depth(double f, double h, double h2d, double *depth);

/**
 * Inverse-sigma weighted fusion of `n` estimates. `sigma` may be null.
 *
 * # Safety
 * `estimates` must point to `n` elements; `z` must be writable.
 */
enum GpkStatus gpk_fuse_depths(const struct GpkDepthEstimate *estimates,
                               size_t n,
                               double *z,
                               double *sigma);

/**
 * Mean absolute percentage error as a fraction.
 *
 * # Safety
 * `preds` and `gts` must point to `n` doubles; `result` must be writable.
 */
enum GpkStatus gpk_mpe(const double *preds, const double *gts, size_t n, double *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPK_H */
