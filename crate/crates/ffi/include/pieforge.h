#ifndef PIEFORGE_H
#define PIEFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_INVALID_ARGUMENT = 1,
  PF_STATUS_SHAPE = 2,
  PF_STATUS_CONFIG = 3,
  PF_STATUS_FORMAT = 4,
  PF_STATUS_IO = 5,
  PF_STATUS_NULL_POINTER = 6,
  PF_STATUS_PANIC = 7,
} PfStatus;

typedef enum PfCategory {
  PF_CATEGORY_VEHICLE = 0,
  PF_CATEGORY_PEDESTRIAN = 1,
  PF_CATEGORY_CYCLIST = 2,
} PfCategory;

typedef struct PfCheckpoint PfCheckpoint;

typedef struct PfConfig PfConfig;

typedef struct PfFrame PfFrame;

typedef struct PfFuser PfFuser;

typedef struct PfLabels PfLabels;

typedef struct PfSemiDb PfSemiDb;

/**
 * Per-frame compensation counters.
 */
typedef struct PfCompensationStats {
  size_t pies;
  size_t pie_pairs;
  size_t compensated;
  size_t points_added;
  size_t skipped_empty_donors;
  size_t leftover_objects;
} PfCompensationStats;

/**
 * Borrowed view of one frame's pseudo-labels. `teacher_ids` holds
 * `UINT32_MAX` where no teacher is recorded.
 */
typedef struct PfLabelView {
  const double *boxes;
  const uint32_t *classes;
  const double *cls_scores;
  const double *iou_scores;
  const uint32_t *teacher_ids;
  const bool *ambiguous;
  size_t len;
} PfLabelView;

/**
 * Borrowed view of one checkpoint tensor.
 */
typedef struct PfTensorView {
  const char *name;
  const uint32_t *dims;
  size_t ndims;
  const float *data;
  size_t len;
} PfTensorView;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null.
 */
const char *pf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pf_version(void);

enum PfStatus pf_config_default(struct PfConfig **out);

enum PfStatus pf_config_load(const char *path, struct PfConfig **out);

enum PfStatus pf_config_from_toml(const char *text, struct PfConfig **out);

enum PfStatus pf_config_set_seed(struct PfConfig *config, uint64_t seed);

/**
 * Sets the sector width; rejected unless it divides 360.
 */
enum PfStatus pf_config_set_deg(struct PfConfig *config, double deg);

void pf_config_free(struct PfConfig *config);

enum PfStatus pf_semidb_new(struct PfSemiDb **out);

enum PfStatus pf_semidb_load(const char *path, struct PfSemiDb **out);

enum PfStatus pf_semidb_save(const struct PfSemiDb *db, const char *path);

/**
 * Partitions one labeled frame into sectors, compensates it, and appends
 * the resulting objects to `db`. `scores` may be null (all 1). `stats` may
 * be null.
 */
enum PfStatus pf_semidb_add_frame(struct PfSemiDb *db,
                                  const char *frame_id,
                                  const float *points,
                                  size_t n_points,
                                  const double *boxes,
                                  const uint32_t *classes,
                                  const double *scores,
                                  size_t n_boxes,
                                  double deg,
                                  struct PfCompensationStats *stats);

/**
 * Number of entries; 0 for a null handle.
 */
size_t pf_semidb_len(const struct PfSemiDb *db);

void pf_semidb_free(struct PfSemiDb *db);

/**
 * Pastes semi-DB samples into a frame. `quota_classes[i]` receives up to
 * `quotas[i]` samples.
 */
enum PfStatus pf_inject(const struct PfSemiDb *db,
                        const float *points,
                        size_t n_points,
                        const double *boxes,
                        const uint32_t *classes,
                        const double *scores,
                        size_t n_boxes,
                        const uint32_t *quota_classes,
                        const size_t *quotas,
                        size_t n_quotas,
                        uint64_t seed,
                        struct PfFrame **out);

/**
 * `n x 4` points of an injected frame.
 */
enum PfStatus pf_frame_points(const struct PfFrame *frame, const float **points, size_t *n_points);

/**
 * `n x 7` boxes and `n` class ids of an injected frame.
 */
enum PfStatus pf_frame_boxes(const struct PfFrame *frame,
                             const double **boxes,
                             const uint32_t **classes,
                             size_t *n_boxes);

void pf_frame_free(struct PfFrame *frame);

/**
 * A fuser using the config's classes, NMS and threshold settings.
 */
enum PfStatus pf_fuser_new(const struct PfConfig *config, struct PfFuser **out);

/**
 * Starts a new frame; later teacher outputs go to it.
 */
enum PfStatus pf_fuser_begin_frame(struct PfFuser *fuser);

/**
 * Adds one teacher's detections to the current frame.
 */
enum PfStatus pf_fuser_add_teacher(struct PfFuser *fuser,
                                   uint32_t teacher_id,
                                   enum PfCategory category,
                                   const double *boxes,
                                   const uint32_t *classes,
                                   const double *cls_scores,
                                   const double *iou_scores,
                                   size_t n);

/**
 * Fuses every frame added so far. Dynamic thresholds are calibrated over
 * the whole batch.
 */
enum PfStatus pf_fuser_run(const struct PfFuser *fuser, struct PfLabels **out);

void pf_fuser_free(struct PfFuser *fuser);

/**
 * Number of frames; 0 for a null handle.
 */
size_t pf_labels_frame_count(const struct PfLabels *labels);

enum PfStatus pf_labels_frame(const struct PfLabels *labels, size_t frame, struct PfLabelView *out);

void pf_labels_free(struct PfLabels *labels);

enum PfStatus pf_checkpoint_new(struct PfCheckpoint **out);

enum PfStatus pf_checkpoint_load(const char *path, struct PfCheckpoint **out);

enum PfStatus pf_checkpoint_save(const struct PfCheckpoint *ckpt, const char *path);

/**
 * Appends a tensor; names must be unique and `len` must equal the product
 * of `dims`.
 */
enum PfStatus pf_checkpoint_insert(struct PfCheckpoint *ckpt,
                                   const char *name,
                                   const uint32_t *dims,
                                   size_t ndims,
                                   const float *data,
                                   size_t len);

/**
 * Number of tensors; 0 for a null handle.
 */
size_t pf_checkpoint_len(const struct PfCheckpoint *ckpt);

/**
 * The `index`-th tensor in file order.
 */
enum PfStatus pf_checkpoint_entry(const struct PfCheckpoint *ckpt,
                                  size_t index,
                                  struct PfTensorView *out);

void pf_checkpoint_free(struct PfCheckpoint *ckpt);

/**
 * Category-wise EMA step: blends `student` into `teacher` for `category`
 * with momentum `alpha`, using the config's class layout and anchor
 * patterns. A negative `alpha` uses the configured momentum.
 */
enum PfStatus pf_cema_blend(const struct PfConfig *config,
                            const struct PfCheckpoint *teacher,
                            const struct PfCheckpoint *student,
                            enum PfCategory category,
                            double alpha,
                            struct PfCheckpoint **out);

/**
 * File-to-file form of [`pf_cema_blend`].
 */
enum PfStatus pf_cema_blend_files(const struct PfConfig *config,
                                  const char *teacher_path,
                                  const char *student_path,
                                  enum PfCategory category,
                                  double alpha,
                                  const char *out_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIEFORGE_H */
