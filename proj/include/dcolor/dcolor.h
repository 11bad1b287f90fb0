/* C interface to the direct-coloring testbed. Opaque handles, status codes,
 * and a thread-local error message. Strings returned through out-parameters
 * are owned by the caller and released with dcolor_string_free. */
#ifndef DCOLOR_DCOLOR_H
#define DCOLOR_DCOLOR_H

#include <stddef.h>

#if defined(DCOLOR_BUILDING_LIBRARY)
#define DCOLOR_API __attribute__((visibility("default")))
#else
#define DCOLOR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dcolor_status {
    DCOLOR_OK = 0,
    DCOLOR_ERROR = 1,
    DCOLOR_CONFIG_ERROR = 2,
    DCOLOR_PREREQUISITE_MISSING = 3,
    DCOLOR_NUMERICAL_FAILURE = 4,
    DCOLOR_INVALID_ARGUMENT = 5
} dcolor_status;

typedef struct dcolor_config dcolor_config;

DCOLOR_API const char* dcolor_version(void);

/* Message of the last failed call on this thread; empty after success. */
DCOLOR_API const char* dcolor_last_error(void);
/* Short machine-readable name of a status ("config_error", ...). */
DCOLOR_API const char* dcolor_status_name(dcolor_status status);

/* Parses a JSON config file (or run manifest) and applies key=value
 * overrides. */
DCOLOR_API dcolor_status dcolor_config_load(const char* path, const char* const* overrides, size_t override_count,
                                            dcolor_config** out);
/* Built-in defaults plus overrides. */
DCOLOR_API dcolor_status dcolor_config_default(const char* const* overrides, size_t override_count,
                                               dcolor_config** out);
DCOLOR_API void dcolor_config_free(dcolor_config* config);
/* Applies one key=value override and re-validates. */
DCOLOR_API dcolor_status dcolor_config_set(dcolor_config* config, const char* assignment);
DCOLOR_API dcolor_status dcolor_config_to_json(const dcolor_config* config, char** out_json);
DCOLOR_API void dcolor_string_free(char* s);

/* Pipeline commands. Each writes under the config's output_dir and, when
 * summary is non-null, returns a one-line summary string. */
DCOLOR_API dcolor_status dcolor_compute_target(const dcolor_config* config, char** summary);
DCOLOR_API dcolor_status dcolor_pretrain(const dcolor_config* config, int resume, char** summary);
DCOLOR_API dcolor_status dcolor_eval(const dcolor_config* config, double* accuracy, char** summary);
DCOLOR_API dcolor_status dcolor_diagnose(const dcolor_config* config, int svg, char** summary);
DCOLOR_API dcolor_status dcolor_sweep(const dcolor_config* config, const char* axis, const char* const* values,
                                      size_t value_count, char** summary);

/* Column-normalized cross-correlation of two row-major m x d batches into a
 * d x d row-major output. */
DCOLOR_API dcolor_status dcolor_cross_correlation(const double* z1, const double* z2, size_t m, size_t d,
                                                  double* out);

#ifdef __cplusplus
}
#endif

#endif
