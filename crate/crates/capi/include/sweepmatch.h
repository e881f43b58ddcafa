/* C interface of the sweepmatch dense matching engine. */

#ifndef SWEEPMATCH_H
#define SWEEPMATCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every C API call.
 */
typedef enum SmStatus {
  /**
   * Success.
   */
  Ok = 0,
  /**
   * A required pointer argument was null.
   */
  NullArgument = 1,
  /**
   * An argument was malformed (bad index, bad path encoding, bad file
   * contents, invalid configuration).
   */
  InvalidArgument = 2,
  /**
   * The operating system reported an I/O failure.
   */
  Io = 3,
  /**
   * The pipeline itself failed (degenerate geometry, divergence, ...).
   */
  Pipeline = 4,
  /**
   * An internal panic was caught at the boundary.
   */
  Panic = 5,
} SmStatus;

/**
 * A depth (elevation) raster with per-pixel confidence and validity.
 */
typedef struct SmDepthMap SmDepthMap;

/**
 * Accuracy metrics of one depth map against ground truth.
 */
typedef struct SmReport SmReport;

/**
 * An in-memory dataset: calibrated views plus the elevation search range.
 */
typedef struct SmScene SmScene;

/**
 * Flat copy of the headline metrics in [`SmReport`].
 */
typedef struct SmSummary {
  /**
   * Pixels valid in both the map under test and the ground truth.
   */
  size_t compared;
  /**
   * Pixels valid in the ground truth.
   */
  size_t gt_valid;
  /**
   * Compared pixels whose absolute error is under the inlier threshold.
   */
  size_t inliers;
  /**
   * Mean absolute error over inliers, meters.
   */
  double mean_abs_error_m;
  /**
   * Population standard deviation of inlier errors, meters.
   */
  double std_dev_m;
  /**
   * Median absolute error over inliers, meters.
   */
  double median_abs_error_m;
  /**
   * Normalized median absolute deviation over inliers, meters.
   */
  double nmad_m;
  /**
   * Inliers as a percentage of valid ground-truth pixels.
   */
  double completeness_percent;
} SmSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the library as a static NUL-terminated string.
 */
const char *sm_version(void);

/**
 * Copies the calling thread's last error message into `buffer` (truncated to
 * `capacity - 1` bytes, always NUL-terminated when `capacity > 0`) and
 * returns the full message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buffer` must point to at least `capacity` writable bytes, or be null
 * (then only the required length is returned).
 */
size_t sm_last_error_message(char *buffer, size_t capacity);

/**
 * Loads a dataset from its manifest file.
 *
 * # Safety
 * `manifest_path` must be a valid NUL-terminated string and `out_scene` a
 * writable pointer slot.
 */
enum SmStatus sm_scene_load(const char *manifest_path, struct SmScene **out_scene);

/**
 * Synthesizes an in-memory test scene: `views` cameras on a strip over a
 * textured terrain, rendered at `width` x `height`.
 *
 * # Safety
 * `out_scene` must be a writable pointer slot.
 */
enum SmStatus sm_scene_synthesize(uint64_t seed,
                                  size_t views,
                                  uint32_t width,
                                  uint32_t height,
                                  struct SmScene **out_scene);

/**
 * Releases a scene handle.
 *
 * # Safety
 * `scene` must have come from this library and not been freed before; null
 * is a no-op.
 */
void sm_scene_free(struct SmScene *scene);

/**
 * Number of views in the scene.
 *
 * # Safety
 * `scene` must be a live scene handle; `out_count` must be writable.
 */
enum SmStatus sm_scene_view_count(const struct SmScene *scene, size_t *out_count);

/**
 * Index of the reference view.
 *
 * # Safety
 * `scene` must be a live scene handle; `out_reference` must be writable.
 */
enum SmStatus sm_scene_reference(const struct SmScene *scene, size_t *out_reference);

/**
 * Ground sampling distance of the scene in meters per pixel.
 *
 * # Safety
 * `scene` must be a live scene handle; `out_gsd_m` must be writable.
 */
enum SmStatus sm_scene_gsd(const struct SmScene *scene, double *out_gsd_m);

/**
 * Copies the stored ground-truth elevation map of one view.
 *
 * # Safety
 * `scene` must be a live scene handle; `out_map` must be a writable pointer
 * slot.
 */
enum SmStatus sm_scene_ground_truth(const struct SmScene *scene,
                                    size_t view,
                                    struct SmDepthMap **out_map);

/**
 * Matches the reference view against one query view with the default
 * multi-resolution schedule (built-in features, cosine similarity).
 *
 * # Safety
 * `scene` must be a live scene handle; `out_map` must be a writable pointer
 * slot.
 */
enum SmStatus sm_match(const struct SmScene *scene, size_t query, struct SmDepthMap **out_map);

/**
 * Matches the reference view against every other view. With
 * `late_fusion = false` all views share one sweep; otherwise each pair is
 * matched separately and the maps are median-fused.
 *
 * # Safety
 * `scene` must be a live scene handle; `out_map` must be a writable pointer
 * slot.
 */
enum SmStatus sm_mvs(const struct SmScene *scene, bool late_fusion, struct SmDepthMap **out_map);

/**
 * Releases a depth-map handle.
 *
 * # Safety
 * `map` must have come from this library and not been freed before; null is
 * a no-op.
 */
void sm_depth_map_free(struct SmDepthMap *map);

/**
 * Raster dimensions of a depth map.
 *
 * # Safety
 * `map` must be a live depth-map handle; `out_width` and `out_height` must
 * be writable.
 */
enum SmStatus sm_depth_map_size(const struct SmDepthMap *map,
                                uint32_t *out_width,
                                uint32_t *out_height);

/**
 * Number of valid pixels in a depth map.
 *
 * # Safety
 * `map` must be a live depth-map handle; `out_count` must be writable.
 */
enum SmStatus sm_depth_map_valid_count(const struct SmDepthMap *map, size_t *out_count);

/**
 * Reads one pixel: value, confidence, and whether it is valid. Invalid
 * pixels report value 0 and confidence 0.
 *
 * # Safety
 * `map` must be a live depth-map handle; non-null out pointers must be
 * writable. Any out pointer may be null to skip that field.
 */
enum SmStatus sm_depth_map_at(const struct SmDepthMap *map,
                              uint32_t x,
                              uint32_t y,
                              double *out_value,
                              double *out_confidence,
                              bool *out_valid);

/**
 * Writes a depth map as a PFM file (invalid pixels NaN).
 *
 * # Safety
 * `map` must be a live depth-map handle and `path` a valid NUL-terminated
 * string.
 */
enum SmStatus sm_depth_map_write_pfm(const struct SmDepthMap *map, const char *path);

/**
 * Loads a depth map from a PFM file (NaN pixels become invalid).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out_map` a writable
 * pointer slot.
 */
enum SmStatus sm_depth_map_read_pfm(const char *path, struct SmDepthMap **out_map);

/**
 * Scores a depth map against ground truth at the given ground sampling
 * distance, with the default inlier threshold and accuracy bands.
 *
 * # Safety
 * `depth` and `truth` must be live depth-map handles; `out_report` must be
 * a writable pointer slot.
 */
enum SmStatus sm_evaluate(const struct SmDepthMap *depth,
                          const struct SmDepthMap *truth,
                          double gsd_m,
                          struct SmReport **out_report);

/**
 * Releases a report handle.
 *
 * # Safety
 * `report` must have come from this library and not been freed before; null
 * is a no-op.
 */
void sm_report_free(struct SmReport *report);

/**
 * Copies the headline metrics out of a report.
 *
 * # Safety
 * `report` must be a live report handle; `out_summary` must be writable.
 */
enum SmStatus sm_report_summary(const struct SmReport *report, struct SmSummary *out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWEEPMATCH_H */
