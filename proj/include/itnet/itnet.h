#ifndef ITNET_ITNET_H
#define ITNET_ITNET_H

/* Iterative rigid-transform prediction for partial point clouds.
 *
 * Every function returning int returns an itnet_status. On failure the
 * message is available from itnet_last_error() on the same thread until the
 * next call. Poses are 7 doubles (qw, qx, qy, qz, tx, ty, tz) mapping input
 * coordinates into the canonical / target frame. */

#include <stddef.h>

#if defined(ITNET_BUILDING_LIBRARY)
#define ITNET_API __attribute__((visibility("default")))
#else
#define ITNET_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum itnet_status {
  ITNET_OK = 0,
  ITNET_ERR_CONFIG = 2,
  ITNET_ERR_IO = 3,
  ITNET_ERR_NUMERIC = 4
} itnet_status;

typedef enum itnet_command {
  ITNET_CMD_GENERATE = 0,
  ITNET_CMD_TRAIN = 1,
  ITNET_CMD_EVAL = 2,
  ITNET_CMD_ALIGN = 3
} itnet_command;

typedef struct itnet_config itnet_config;
typedef struct itnet_model itnet_model;

ITNET_API const char* itnet_version(void);
ITNET_API const char* itnet_last_error(void);
/* Summary line of the last successful command on this thread. */
ITNET_API const char* itnet_last_message(void);

/* Configuration keys, shared by every command. */
ITNET_API size_t itnet_key_count(void);
ITNET_API const char* itnet_key_name(size_t i);
ITNET_API const char* itnet_key_default(size_t i);
ITNET_API const char* itnet_key_help(size_t i);
/* Nonzero when key i is accepted by `command`. */
ITNET_API int itnet_key_applies(size_t i, itnet_command command);

ITNET_API itnet_config* itnet_config_create(void);
ITNET_API void itnet_config_free(itnet_config* cfg);
/* Dashes and underscores are interchangeable in keys. */
ITNET_API int itnet_config_set(itnet_config* cfg, const char* key, const char* value);
/* "key = value" lines, '#' comments. */
ITNET_API int itnet_config_load_file(itnet_config* cfg, const char* path);

ITNET_API int itnet_run(itnet_command command, const itnet_config* cfg);

ITNET_API int itnet_model_load(const char* checkpoint_path, itnet_model** out);
ITNET_API void itnet_model_free(itnet_model* model);
/* Nonzero for a pose model, zero for a classifier. */
ITNET_API int itnet_model_is_pose(const itnet_model* model);
/* Pose after `iterations` transformer passes (0: the model default).
 * xyz holds n_points * 3 doubles. */
ITNET_API int itnet_model_predict_pose(const itnet_model* model, const double* xyz, size_t n_points, int iterations,
                                       double pose_out[7]);
ITNET_API int itnet_model_classify(const itnet_model* model, const double* xyz, size_t n_points, int iterations,
                                   int* label_out);

/* Trimmed point-to-point ICP moving `source` onto `target`. init may be NULL
 * (identity). iterations_out may be NULL. */
ITNET_API int itnet_icp_align(const double* source, size_t n_source, const double* target, size_t n_target,
                              const double init[7], int max_iterations, double tol, double trim_fraction,
                              double pose_out[7], int* iterations_out);

#ifdef __cplusplus
}
#endif

#endif
