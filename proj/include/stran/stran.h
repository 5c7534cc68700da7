/* Copyright 2026 The stran Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the stran library: reference-guided video super-resolution
 * and compression-artifact removal.
 *
 * Every function returns a status code. On failure, stran_last_error()
 * returns a message for the calling thread that stays valid until that
 * thread's next call into the library. Paths are UTF-8.
 */

#ifndef STRAN_STRAN_H_
#define STRAN_STRAN_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define STRAN_API __declspec(dllexport)
#elif defined(__GNUC__)
#define STRAN_API __attribute__((visibility("default")))
#else
#define STRAN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum stran_status {
  STRAN_OK = 0,
  STRAN_ERR_INVALID_ARGUMENT = 1, /* bad argument, option value or config */
  STRAN_ERR_IO = 2,               /* missing or unreadable file */
  STRAN_ERR_FORMAT = 3,           /* malformed file content or checksum */
  STRAN_ERR_SHAPE = 4,            /* incompatible image or tensor extents */
  STRAN_ERR_RUNTIME = 5           /* any other failure */
} stran_status;

typedef struct stran_model stran_model;

/* Receives progress and configuration text. `line` is valid only during
 * the call. */
typedef void (*stran_message_fn)(const char* line, void* user);

STRAN_API const char* stran_version(void);
STRAN_API const char* stran_last_error(void);
STRAN_API const char* stran_status_name(stran_status status);

/* Caps worker threads; 0 restores the default (STRAN_THREADS or all cores). */
STRAN_API void stran_set_threads(unsigned n);

/* Degrades every clip subdirectory of `input_dir` into `out_dir` and writes
 * out_dir/manifest.csv. `q` is the quantisation step (0 = none). */
STRAN_API stran_status stran_prepare(const char* input_dir, const char* out_dir, int factor,
                                     double q, uint64_t seed);

/* Trains from a manifest and a key = value config. `resume` may be NULL. */
STRAN_API stran_status stran_train(const char* manifest, const char* config,
                                   const char* out_dir, const char* resume,
                                   stran_message_fn message, void* user);

/* Writes the configuration echo of `config` into `buf` (NUL terminated,
 * truncated to `cap`); `needed` receives the full length plus one. */
STRAN_API stran_status stran_config_echo(const char* config, char* buf, size_t cap,
                                         size_t* needed);

/* Enhances one clip; `ref` may be NULL to use the clip's own reference.
 * `frames_written` may be NULL. */
STRAN_API stran_status stran_enhance(const char* manifest, const char* ckpt, const char* clip,
                                     const char* out_dir, const char* ref,
                                     int* frames_written);

/* Compares the frames of two directories and writes a metric report. */
STRAN_API stran_status stran_eval(const char* pred_dir, const char* gt_dir,
                                  const char* report);

/* Model handles. */
STRAN_API stran_status stran_model_load(const char* ckpt, stran_model** out);
STRAN_API void stran_model_free(stran_model* model);
STRAN_API size_t stran_model_param_count(const stran_model* model);
STRAN_API int stran_model_factor(const stran_model* model);
/* Number of frames in one input window. */
STRAN_API int stran_model_window(const stran_model* model);

/* Runs one window. `window` holds stran_model_window() frames, each planar
 * RGB float h*w*3 (plane-major), concatenated; `ref` and `out` are planar
 * RGB at factor*h x factor*w. Output values are clamped to [0, 1]. */
STRAN_API stran_status stran_model_enhance(stran_model* model, const float* window, int h,
                                           int w, const float* ref, float* out);

#ifdef __cplusplus
}
#endif

#endif /* STRAN_STRAN_H_ */
