/* Neural feature field engine: C interface.
 *
 * Every function returns an ff_status. On failure, ff_last_error() returns a
 * message for the calling thread, valid until its next ffield call. Handles
 * are opaque and must be released with their matching _free function.
 * Strings returned through char** are released with ff_string_free.
 */
#ifndef FFIELD_FFIELD_H
#define FFIELD_FFIELD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FF_API __declspec(dllexport)
#elif defined(__GNUC__)
#define FF_API __attribute__((visibility("default")))
#else
#define FF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ff_status {
  FF_OK = 0,
  FF_INVALID_ARGUMENT = 1,
  FF_IO = 2,
  FF_FORMAT = 3,
  FF_SHAPE = 4,
  FF_NUMERIC = 5,
  FF_NOT_FOUND = 6,
  FF_STATE = 7,
  FF_INTERNAL = 8
} ff_status;

typedef struct ff_model ff_model;
typedef struct ff_embeddings ff_embeddings;
typedef struct ff_server ff_server;

FF_API const char* ff_version(void);
FF_API const char* ff_status_name(ff_status status);
FF_API const char* ff_last_error(void);
FF_API void ff_string_free(char* s);

/* ---- synthetic scenes ---- */

typedef struct ff_synthetic_options {
  int train_views;     /* 20 */
  int heldout_views;   /* 4 */
  int width;           /* 80 */
  int height;          /* 60 */
  int feature_dim;     /* 8 */
  double feature_noise;   /* 0.05 */
  int feature_downsample; /* 1 */
  int correlated;      /* 0: orthonormal embeddings */
  double correlation;  /* 0.7 */
  int write_depth;     /* 1 */
  uint64_t seed;       /* 7 */
} ff_synthetic_options;

FF_API void ff_synthetic_options_default(ff_synthetic_options* options);
/* Writes the default 3-class room scene to `directory`. */
FF_API ff_status ff_make_synthetic(const char* directory, const ff_synthetic_options* options);

/* ---- training ---- */

typedef struct ff_train_options {
  int iterations;        /* 20000 */
  int batch_rays;        /* 4096 */
  int samples;           /* 256 */
  int micro_batch_rays;  /* 512 */
  double learning_rate;  /* 1e-3 */
  uint64_t seed;         /* 0 */
  int snapshot_interval; /* 500 */
  int stratified;        /* 1 */
  int bilinear_features; /* 0: nearest feature lookup */
  double lambda_depth;   /* 0.1 */
  double lambda_feature; /* 0.5 */
  int hash_levels;       /* 16 */
  int table_size_log2;   /* 19 */
  int base_resolution;   /* 16 */
  double per_level_scale; /* 1.3819 */
} ff_train_options;

typedef struct ff_step_stats {
  int64_t iteration;
  double loss_rgb;
  double loss_depth;
  double loss_feature;
  double loss_total;
  double milliseconds;
} ff_step_stats;

typedef void (*ff_progress_fn)(const ff_step_stats* stats, void* user);

FF_API void ff_train_options_default(ff_train_options* options);
/* Offline training on a scene directory. `log_path` may be NULL. When the
 * scene has an embeddings.txt it is copied next to the checkpoint. `last`
 * may be NULL. */
FF_API ff_status ff_train(const char* scene_dir, const char* checkpoint_path, const char* log_path,
                          const ff_train_options* options, ff_progress_fn progress, void* user,
                          ff_step_stats* last);

/* ---- models ---- */

typedef struct ff_intrinsics {
  double fx, fy, cx, cy;
  int width, height;
} ff_intrinsics;

typedef struct ff_model_info {
  int feature_dim;
  size_t parameter_count;
  double bounds_min[3];
  double bounds_max[3];
  int has_intrinsics;
  ff_intrinsics intrinsics;
} ff_model_info;

FF_API ff_status ff_model_load(const char* checkpoint_path, ff_model** out);
FF_API void ff_model_free(ff_model* model);
FF_API ff_status ff_model_info_get(const ff_model* model, ff_model_info* info);

/* ---- label embeddings ---- */

/* Text file: one "label<TAB>v1 ... vD" record per line. */
FF_API ff_status ff_embeddings_load(const char* path, ff_embeddings** out);
/* Rows for a comma-separated prompt list, looked up in a dictionary. */
FF_API ff_status ff_embeddings_select(const ff_embeddings* dictionary, const char* prompts,
                                      ff_embeddings** out);
/* K rows of D floats, row-major. */
FF_API ff_status ff_embeddings_create(const char* const* labels, const float* values, size_t k,
                                      size_t d, ff_embeddings** out);
FF_API void ff_embeddings_free(ff_embeddings* embeddings);
FF_API size_t ff_embeddings_count(const ff_embeddings* embeddings);
FF_API size_t ff_embeddings_dim(const ff_embeddings* embeddings);
/* Borrowed; NULL when out of range. */
FF_API const char* ff_embeddings_label(const ff_embeddings* embeddings, size_t index);

/* argmax_i E(t_i) . f for m feature rows of length D. `scores` may be NULL. */
FF_API ff_status ff_classify_features(const float* features, size_t m,
                                      const ff_embeddings* embeddings, int cosine,
                                      int32_t* classes, float* scores);

/* ---- rendering and segmentation ---- */

typedef struct ff_render_options {
  int width;    /* 0: intrinsics resolution */
  int height;
  int samples;  /* 256 */
} ff_render_options;

FF_API void ff_render_options_default(ff_render_options* options);

/* `pose` is 16 reals, row-major camera-to-world. `intrinsics` may be NULL to
 * use those stored in the checkpoint. Writes <stem>.color.png,
 * <stem>.depth.png (16-bit millimeters) and <stem>.opacity.png. */
FF_API ff_status ff_render(const ff_model* model, const double pose[16],
                           const ff_intrinsics* intrinsics, const ff_render_options* options,
                           const char* out_stem);

/* Raw maps into caller buffers sized for width x height (after options).
 * Any output pointer may be NULL. */
FF_API ff_status ff_render_buffers(const ff_model* model, const double pose[16],
                                   const ff_intrinsics* intrinsics,
                                   const ff_render_options* options, float* rgb, float* depth,
                                   float* opacity);

typedef struct ff_segment_options {
  ff_render_options render;
  double opacity_threshold; /* 0.5: below it a pixel gets the background index K */
  int cosine;               /* 0 */
  int write_scores;         /* 0: 1 also writes <stem>.scores.bin (FTEN H x W x K) */
} ff_segment_options;

FF_API void ff_segment_options_default(ff_segment_options* options);
/* Writes <stem>.png (indexed, palette order = labels, then background) and
 * <stem>.labels.txt. */
FF_API ff_status ff_segment(const ff_model* model, const double pose[16],
                            const ff_intrinsics* intrinsics, const ff_embeddings* embeddings,
                            const ff_segment_options* options, const char* out_stem);
/* Per-pixel classes into a caller buffer of width x height. */
FF_API ff_status ff_segment_buffer(const ff_model* model, const double pose[16],
                                   const ff_intrinsics* intrinsics,
                                   const ff_embeddings* embeddings,
                                   const ff_segment_options* options, int32_t* classes);
/* Classifies every point of a point file (x y z [label]) and writes
 * "x y z class" lines plus <out stem>.labels.txt. `out_of_bounds` may be
 * NULL. */
FF_API ff_status ff_segment_points(const ff_model* model, const char* points_path,
                                   const ff_embeddings* embeddings, int cosine,
                                   const char* out_path, size_t* out_of_bounds);

/* ---- evaluation ---- */

typedef struct ff_eval_result {
  double miou;
  double macc;
  size_t items;
  size_t classes;
} ff_eval_result;

/* Compares label maps matched by file name. macro != 0 averages per-map
 * scores instead of pooling counts. `table` and `json` may be NULL. */
FF_API ff_status ff_eval_maps(const char* pred_dir, const char* ref_dir, int macro,
                              ff_eval_result* result, char** table, char** json);
FF_API ff_status ff_eval_points(const char* pred_path, const char* ref_path,
                                ff_eval_result* result, char** table, char** json);

/* ---- benchmark ---- */

typedef struct ff_benchmark_options {
  size_t point_batch; /* 65536 */
  int width;          /* 160 */
  int height;         /* 120 */
  int samples;        /* 256 */
  int repeats;        /* 3 */
  uint64_t seed;      /* 0 */
} ff_benchmark_options;

typedef struct ff_benchmark_result {
  double points_per_second;
  double point_batch_ms;
  double pixels_per_second;
  double frame_ms;
  int threads;
} ff_benchmark_result;

FF_API void ff_benchmark_options_default(ff_benchmark_options* options);
/* `report` (human-readable) and `json` may be NULL. */
FF_API ff_status ff_benchmark(const ff_model* model, const ff_benchmark_options* options,
                              ff_benchmark_result* result, char** report, char** json);

/* ---- HTTP service ---- */

typedef struct ff_server_options {
  const char* host;  /* "127.0.0.1" */
  int port;          /* 8080; 0 picks a free port */
  int default_width; /* 160 */
  int default_height; /* 120 */
  int default_samples; /* 64 */
} ff_server_options;

FF_API void ff_server_options_default(ff_server_options* options);
FF_API ff_status ff_server_start(const ff_server_options* options, ff_server** out);
FF_API int ff_server_port(const ff_server* server);
/* Blocks until ff_server_stop is called from another thread. */
FF_API void ff_server_wait(ff_server* server);
FF_API void ff_server_stop(ff_server* server);
FF_API void ff_server_free(ff_server* server);

#ifdef __cplusplus
}
#endif

#endif /* FFIELD_FFIELD_H */
