/* glyphscribe C API.
 *
 * Every function returns a gs_status. On failure the message is available
 * from gs_last_error() on the same thread until the next call. Strings
 * returned through `char **` outputs are owned by the caller and released
 * with gs_string_free(). Handles are released with their *_free function;
 * passing NULL to a free function is a no-op. JSON arguments may be NULL or
 * "" to mean "defaults".
 */
#ifndef GLYPHSCRIBE_H
#define GLYPHSCRIBE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GS_API __declspec(dllexport)
#else
#define GS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gs_status {
  GS_OK = 0,
  GS_ERR_INVALID_ARGUMENT = 1,
  GS_ERR_NOT_FOUND = 2,
  GS_ERR_IO = 3,
  GS_ERR_FORMAT = 4,
  GS_ERR_DEGENERATE = 5,
  GS_ERR_NUMERICAL = 6,
  GS_ERR_CONFLICT = 7,
  GS_ERR_UNAVAILABLE = 8,
  GS_ERR_PAYLOAD_TOO_LARGE = 9,
  GS_ERR_INTERNAL = 100
} gs_status;

typedef enum gs_backend {
  GS_BACKEND_DEEP_MML = 0,
  GS_BACKEND_TRAD_ML = 1,
  GS_BACKEND_CNN_END2END = 2
} gs_backend;

typedef struct gs_dataset gs_dataset;
typedef struct gs_split gs_split;
typedef struct gs_classifier gs_classifier;
typedef struct gs_server gs_server;

GS_API const char *gs_version(void);
GS_API const char *gs_last_error(void);
GS_API const char *gs_status_name(gs_status status);
GS_API void gs_string_free(char *s);
/* "trace", "debug", "info", "warn", "error", "off". */
GS_API gs_status gs_set_log_level(const char *level);

/* ---- synthetic data ---------------------------------------------------- */

/* Writes one PNG per sample under <root>/<CODE>/ plus manifest.csv. options_json keys:
 * size, pages (page ids cycle p00..), family_seed, render {max_rotation_deg,
 * scale_jitter, shift, point_jitter, thickness, thickness_jitter,
 * salt_noise, gray_noise}. */
GS_API gs_status gs_synth_dataset(const char *root, int num_classes, int per_class,
                                  uint64_t seed, const char *options_json);
/* Renders a page PNG; *truth_json receives the glyph ground truth. layout_json
 * keys: columns, glyphs_per_column, glyph_size, column_pitch, row_pitch,
 * margin, num_classes, family_seed, editorial_mark (bool). */
GS_API gs_status gs_synth_page(const char *png_path, uint64_t seed, const char *layout_json,
                               char **truth_json);

/* ---- corpus ------------------------------------------------------------ */

GS_API gs_status gs_dataset_load(const char *root, int canonical_size, gs_dataset **out);
GS_API size_t gs_dataset_size(const gs_dataset *ds);
/* {samples, skipped, classes: {code: count}} */
GS_API gs_status gs_dataset_summary(const gs_dataset *ds, char **json);
GS_API void gs_dataset_free(gs_dataset *ds);

/* ratios_json: {train, validation, test}; held_out_pages_json: ["page", ...]. */
GS_API gs_status gs_split_make(const gs_dataset *ds, const char *ratios_json,
                               const char *held_out_pages_json, uint64_t seed, gs_split **out);
GS_API gs_status gs_split_load(const char *path, gs_split **out);
GS_API gs_status gs_split_save(const gs_split *split, const char *path);
/* {train, validation, test_random, test_pages} sizes. */
GS_API gs_status gs_split_summary(const gs_split *split, char **json);
GS_API void gs_split_free(gs_split *split);

/* ---- training ---------------------------------------------------------- */
/* Each trainer reads train/validation ids from the split and writes model
 * files; *report_json receives the training history. */

/* config_json: {encoder: {backbone: {input_size, channels}, embedding_dim,
 * seed}, train: {margin, augment, schedule, pairs_per_epoch,
 * validation_pairs, positive_fraction}}. */
GS_API gs_status gs_train_metric(const gs_dataset *ds, const gs_split *split,
                                 const char *config_json, const char *encoder_path,
                                 const char *centroids_path, char **report_json);
/* config_json: {backbone, hidden, seed, schedule}. */
GS_API gs_status gs_train_cnn(const gs_dataset *ds, const gs_split *split, const char *config_json,
                              const char *model_path, char **report_json);
/* config_json: {features: {image_size, hog, ink_projections}, c_grid,
 * tolerance, max_iterations, seed}. */
GS_API gs_status gs_train_svm(const gs_dataset *ds, const gs_split *split, const char *config_json,
                              const char *model_path, char **report_json);

/* ---- classifiers ------------------------------------------------------- */

/* paths_json: deep_mml {encoder, centroids, similarity_floor?};
 * cnn_end2end {model}; trad_ml {model}. */
GS_API gs_status gs_classifier_load(gs_backend backend, const char *paths_json,
                                    gs_classifier **out);
/* {code, confidence, runner_up, runner_up_confidence}. */
GS_API gs_status gs_classifier_classify_file(const gs_classifier *clf, const char *image_path,
                                             char **json);
GS_API gs_status gs_classifier_classify_bytes(const gs_classifier *clf, const uint8_t *bytes,
                                              size_t len, char **json);
/* Deep-MML only: adds a class from example images without retraining. */
GS_API gs_status gs_classifier_register(gs_classifier *clf, const char *code,
                                        const char *const *image_paths, size_t count,
                                        int overwrite);
/* Deep-MML only: writes the current centroid table (JSON, plus CSV when
 * csv_path is non-NULL). */
GS_API gs_status gs_classifier_save_centroids(const gs_classifier *clf, const char *path,
                                              const char *csv_path);
GS_API void gs_classifier_free(gs_classifier *clf);

/* ---- segmentation and transcription ------------------------------------ */

/* config_json: segmentation config. Optional outputs: overlay PNG and a
 * directory of crops. *json receives the glyph list. */
GS_API gs_status gs_segment_file(const char *image_path, const char *config_json,
                                 const char *overlay_path, const char *crops_dir, char **json);
/* input_json: [{code, bbox: [x0, y0, x1, y1]}, ...] in reading order;
 * *json receives {line, tokens, dropped}. */
GS_API gs_status gs_assemble_line(const char *input_json, const char *geometry_json, char **json);

/* ---- evaluation -------------------------------------------------------- */

/* subset: "test_random", "test_pages", "validation" or "train".
 * Writes report.json, report.csv and predictions.csv into out_dir.
 * options_json: {thresholds: [...]}. */
GS_API gs_status gs_evaluate(const gs_classifier *clf, const gs_dataset *ds, const gs_split *split,
                             const char *subset, const char *options_json, const char *out_dir,
                             char **summary_json);
/* Deep-MML only: t-SNE map of the subset's embeddings; writes map.json and
 * map.svg into out_dir. options_json: TsneParams fields. */
GS_API gs_status gs_embedding_map(const gs_classifier *clf, const gs_dataset *ds,
                                  const gs_split *split, const char *subset,
                                  const char *options_json, const char *out_dir);

/* ---- service ----------------------------------------------------------- */

/* config_path may be NULL; GLYPHSCRIBE_* environment overrides apply. */
GS_API gs_status gs_server_create(const char *config_path, gs_server **out);
/* Serves in the background; *port receives the bound port (0 = any). */
GS_API gs_status gs_server_start(gs_server *srv, const char *host, int port, int *bound_port);
/* Serves on the calling thread until gs_server_stop. */
GS_API gs_status gs_server_run(gs_server *srv);
GS_API gs_status gs_server_stop(gs_server *srv);
GS_API void gs_server_free(gs_server *srv);

#ifdef __cplusplus
}
#endif

#endif /* GLYPHSCRIBE_H */
