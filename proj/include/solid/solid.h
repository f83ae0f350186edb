#ifndef SOLID_SOLID_H
#define SOLID_SOLID_H

/* C interface to the sparse-observation diffusion toolkit.
 *
 * Every handle is opaque and owned by the caller once returned; release it
 * with the matching *_free function. Strings and buffers returned through
 * out-parameters are released with solid_free_string / solid_free_buffer.
 * On failure a function returns a non-zero status, leaves its out-parameters
 * untouched, and records a message readable through solid_last_error() on
 * the calling thread until the next failing call. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define SOLID_API __attribute__((visibility("default")))
#else
#define SOLID_API
#endif

typedef enum solid_status {
  SOLID_OK = 0,
  SOLID_E_USAGE = 1,      /* bad argument or configuration */
  SOLID_E_SHAPE = 2,      /* extents disagree */
  SOLID_E_VALIDATION = 3, /* precondition on values violated */
  SOLID_E_DATA = 4,       /* malformed or inconsistent artifact */
  SOLID_E_CHECKSUM = 5,
  SOLID_E_TRUNCATED = 6,
  SOLID_E_VERSION = 7,
  SOLID_E_NUMERICAL = 8, /* non-finite values; the run was aborted */
  SOLID_E_INTERNAL = 9
} solid_status;

typedef struct solid_config solid_config;
typedef struct solid_container solid_container;
typedef struct solid_model solid_model;
typedef struct solid_calibration solid_calibration;

typedef struct solid_container_info {
  uint32_t n_traj;
  uint32_t n_frames;
  uint32_t rows;
  uint32_t cols;
  uint32_t n_masks;
} solid_container_info;

typedef void (*solid_progress_fn)(void* user, int64_t step, double loss, double lr, double grad_norm);

SOLID_API const char* solid_version(void);
SOLID_API const char* solid_last_error(void);
SOLID_API const char* solid_status_name(solid_status s);
SOLID_API void solid_free_string(char* s);
SOLID_API void solid_free_buffer(uint8_t* b);

/* JSON object of deviation flags and solver notes; static storage. */
SOLID_API const char* solid_deviations(void);

/* CRC-64/XZ. */
SOLID_API uint64_t solid_crc64(const uint8_t* bytes, size_t len);

/* ---- configuration ---- */
SOLID_API solid_status solid_config_preset(const char* name, solid_config** out);
/* Accepts the plain and the annotated form; unknown keys are SOLID_E_USAGE. */
SOLID_API solid_status solid_config_from_json(const char* json, solid_config** out);
SOLID_API solid_status solid_config_to_json(const solid_config* cfg, int annotated, char** out);
/* dotted_key is "section.key"; value is JSON text, strings may be bare. */
SOLID_API solid_status solid_config_set(solid_config* cfg, const char* dotted_key, const char* value);
SOLID_API solid_status solid_config_set_seed(solid_config* cfg, uint64_t seed);
SOLID_API solid_status solid_config_validate(const solid_config* cfg);
SOLID_API void solid_config_free(solid_config* cfg);

/* ---- containers ---- */
SOLID_API solid_status solid_container_decode(const uint8_t* bytes, size_t len, solid_container** out);
SOLID_API solid_status solid_container_encode(const solid_container* c, uint8_t** out, size_t* len);
SOLID_API solid_status solid_container_info_get(const solid_container* c, solid_container_info* out);
/* Copies rows*cols floats of one frame into out. */
SOLID_API solid_status solid_container_frame(const solid_container* c, uint32_t traj, uint32_t frame, float* out);
SOLID_API void solid_container_free(solid_container* c);

/* ---- artifacts ---- */
SOLID_API solid_status solid_simulate(const solid_config* cfg, solid_container** out);
SOLID_API solid_status solid_make_masks(const solid_config* cfg, solid_container** out);

/* ---- models ---- */
SOLID_API solid_status solid_model_init(const solid_config* cfg, const solid_container* data,
                                        const solid_container* masks, solid_model** out);
SOLID_API solid_status solid_model_decode(const uint8_t* bytes, size_t len, solid_model** out);
SOLID_API solid_status solid_model_encode(const solid_model* m, uint8_t** out, size_t* len);
SOLID_API solid_status solid_model_step(const solid_model* m, int64_t* out);
SOLID_API solid_status solid_model_param_count(const solid_model* m, uint64_t* out);
SOLID_API solid_status solid_model_norm(const solid_model* m, double* mu, double* sigma);
/* Copy of the config the model runs under. */
SOLID_API solid_status solid_model_config(const solid_model* m, solid_config** out);
/* Switches eval and sampler settings; any other difference is SOLID_E_DATA. */
SOLID_API solid_status solid_model_adopt_config(solid_model* m, const solid_config* cfg);
SOLID_API void solid_model_free(solid_model* m);

/* Optimizer steps until the step counter reaches `until`; progress may be NULL. */
SOLID_API solid_status solid_train(solid_model* m, const solid_container* data, const solid_container* masks,
                                   int64_t until, solid_progress_fn progress, void* user);
/* K members per test instance (frames = members), physical units. */
SOLID_API solid_status solid_sample(const solid_model* m, const solid_container* data, const solid_container* masks,
                                    solid_container** out);
/* Forecast test instances; frame h*K+k holds member k at rollout step h+1. */
SOLID_API solid_status solid_rollout(const solid_model* m, const solid_container* data,
                                     const solid_container* masks, solid_container** out);

/* ---- reports: CSV table and JSON summary ---- */
SOLID_API solid_status solid_evaluate(const solid_config* cfg, const solid_container* data,
                                      const solid_container* ensembles, char** csv, char** summary);
SOLID_API solid_status solid_rollout_report(const solid_config* cfg, const solid_container* data,
                                            const solid_container* rollouts, char** csv, char** summary);
/* model supplies the normalization; when NULL it is recomputed from the
 * training instances. untrained != 0 adds a sampled freshly initialized model. */
SOLID_API solid_status solid_baseline(const solid_config* cfg, const solid_container* data,
                                      const solid_container* masks, const solid_model* model, int untrained,
                                      char** csv, char** summary);

SOLID_API solid_status solid_calibrate(const solid_config* cfg, const solid_container* data,
                                       const solid_container* ensembles, int n_maps, solid_calibration** out);
/* Borrowed strings, valid while the handle lives. */
SOLID_API solid_status solid_calibration_report(const solid_calibration* c, const char** csv, const char** summary);
SOLID_API size_t solid_calibration_figure_count(const solid_calibration* c);
SOLID_API solid_status solid_calibration_figure(const solid_calibration* c, size_t i, const char** name,
                                                const uint8_t** png, size_t* png_len, const char** colorbar);
SOLID_API void solid_calibration_free(solid_calibration* c);

#ifdef __cplusplus
}
#endif

#endif
