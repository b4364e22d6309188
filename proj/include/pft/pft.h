#ifndef PFT_PFT_H
#define PFT_PFT_H

/* C interface to potential-flow traversal training and evaluation.
 *
 * Every function returns a pft_status. On failure the message is available
 * from pft_last_error() on the calling thread until the next call on that
 * thread. Strings returned through const char** stay valid until the owning
 * handle is freed or modified (config) or until the next call on the same
 * thread (pft_last_output). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PFT_API __declspec(dllexport)
#else
#define PFT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pft_status {
  PFT_OK = 0,
  PFT_ERR_USAGE = 1,   /* bad argument or configuration value */
  PFT_ERR_SHAPE = 2,   /* dimension mismatch */
  PFT_ERR_RANGE = 3,   /* index outside its domain */
  PFT_ERR_NUMERIC = 4, /* non-finite value or divergence */
  PFT_ERR_IO = 5,
  PFT_ERR_FORMAT = 6,  /* malformed file */
  PFT_ERR_DIGEST = 7,  /* digest mismatch */
  PFT_ERR_INTERNAL = 8
} pft_status;

typedef struct pft_config pft_config;
typedef struct pft_model pft_model;

typedef struct pft_loss_row {
  int64_t step;
  double l_f, l_u, l_jac, l_cls, l_x, l_z, total;
} pft_loss_row;

typedef void (*pft_log_fn)(void* user, const pft_loss_row* row);

typedef struct pft_model_info {
  char kind[16]; /* "vae" or "potentials" */
  int supervised;
  int has_classifier;
  int K;
  int d;
  int image_size;
  int channels;
  int T;
  uint64_t config_digest;
  uint64_t seed;
} pft_model_info;

PFT_API const char* pft_version(void);
PFT_API const char* pft_status_name(pft_status status);
PFT_API const char* pft_last_error(void);
/* Summary line (or report) of the last command run on this thread. */
PFT_API const char* pft_last_output(void);

/* ---- configuration ---- */
PFT_API pft_status pft_config_new(pft_config** out);
PFT_API pft_status pft_config_parse(const char* text, pft_config** out);
PFT_API pft_status pft_config_load(const char* path, pft_config** out);
PFT_API void pft_config_free(pft_config* config);
/* key is "section.key"; value in config-file syntax. */
PFT_API pft_status pft_config_set(pft_config* config, const char* key, const char* value);
PFT_API pft_status pft_config_get(const pft_config* config, const char* key, const char** value);
/* run.seed <- $PFT_SEED when set. */
PFT_API pft_status pft_config_apply_env(pft_config* config);
PFT_API pft_status pft_config_set_threads(pft_config* config, int threads);
PFT_API pft_status pft_config_validate(const pft_config* config);
PFT_API pft_status pft_config_digest(const pft_config* config, uint64_t* digest);
PFT_API pft_status pft_config_dump(const pft_config* config, const char** text);

/* ---- commands ---- */
PFT_API pft_status pft_train_vae(const pft_config* config, pft_log_fn log, void* user);
/* generator_path may be NULL in supervised mode. */
PFT_API pft_status pft_train_potentials(const pft_config* config, const char* generator_path, pft_log_fn log,
                                        void* user);

PFT_API pft_status pft_model_load(const char* path, pft_model** out);
PFT_API void pft_model_free(pft_model* model);
PFT_API pft_status pft_model_info_get(const pft_model* model, pft_model_info* info);

/* out_dir may be NULL (checkpoint directory). */
PFT_API pft_status pft_traverse(pft_model* model, int k, uint64_t seed, int steps, int sign, const char* out_dir);
/* which: vp | equivariance | loglik | residuals | classifier. seed may be NULL
 * (config seed); out_path may be NULL (metrics_<which>.json beside the checkpoint). */
PFT_API pft_status pft_eval(pft_model* model, const char* which, const uint64_t* seed, const char* out_path);
PFT_API pft_status pft_verify(const char* const* paths, size_t count);

/* ---- field queries on a potentials model; z has model d entries ---- */
PFT_API pft_status pft_potential(pft_model* model, int k, const double* z, size_t d, double t, double* u);
PFT_API pft_status pft_velocity(pft_model* model, int k, const double* z, size_t d, double t, double* v);
PFT_API pft_status pft_wave_residual(pft_model* model, int k, const double* z, size_t d, double t, double* f);

#ifdef __cplusplus
}
#endif

#endif /* PFT_PFT_H */
