#ifndef RAWDIFF_RAWDIFF_H
#define RAWDIFF_RAWDIFF_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RD_API __declspec(dllexport)
#elif defined(__GNUC__)
#define RD_API __attribute__((visibility("default")))
#else
#define RD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes. */
typedef enum rd_status {
    RD_OK = 0,
    RD_ERR_INTERNAL = 1,
    RD_ERR_USAGE = 2,
    RD_ERR_DATA = 3,
    RD_ERR_NUMERIC = 4
} rd_status;

typedef struct rd_raw rd_raw;
typedef struct rd_embeddings rd_embeddings;
typedef struct rd_model rd_model;
typedef struct rd_options rd_options;

/* Message of the last failure on the calling thread ("" after success). */
RD_API const char* rd_last_error(void);
/* "ok", "internal", "usage", "data" or "numeric". */
RD_API const char* rd_status_name(rd_status status);
RD_API const char* rd_version(void);
RD_API const char* rd_build_id(void);

/* Caps worker threads; 0 restores the default (RAWDIFF_THREADS or all cores). */
RD_API void rd_set_threads(int threads);

/* Raw images (RDRW files). */
RD_API rd_status rd_raw_load(const char* path, rd_raw** out);
RD_API rd_status rd_raw_save(const rd_raw* raw, const char* path);
RD_API rd_status rd_raw_dims(const rd_raw* raw, size_t* height, size_t* width);
/* Copies the four planes [R, Gr, Gb, B] (height/2 x width/2 each) into buf. */
RD_API rd_status rd_raw_planes(const rd_raw* raw, double* buf, size_t len);
RD_API rd_status rd_raw_from_planes(const double* planes, size_t height, size_t width, rd_raw** out);
RD_API rd_status rd_raw_render(const rd_raw* raw, const char* png_path);
RD_API void rd_raw_free(rd_raw* raw);

/* Caption embeddings (RDEM files, 768-dimensional). */
RD_API rd_status rd_embeddings_load(const char* path, rd_embeddings** out);
RD_API rd_status rd_embeddings_dims(const rd_embeddings* e, size_t* count, size_t* dim);
RD_API void rd_embeddings_free(rd_embeddings* e);

/* Models. */
RD_API rd_status rd_model_load(const char* checkpoint, rd_model** out);
RD_API rd_status rd_model_load_lora(rd_model* model, const char* adapters);
/* 1 when the model uses the trainable null condition instead of text. */
RD_API rd_status rd_model_is_unconditioned(const rd_model* model, int* out);
RD_API void rd_model_free(rd_model* model);

typedef struct rd_denoise_options {
    int steps;      /* respaced sampling steps, 1..T */
    uint64_t seed;
    int uncond;     /* nonzero: run without a caption (null-conditioned model only) */
} rd_denoise_options;

/* Ancestral sampling conditioned on the noisy input. `embeddings` may be
   NULL when `uncond` is set. */
RD_API rd_status rd_denoise(const rd_model* model, const rd_raw* noisy, const rd_embeddings* embeddings,
                            size_t embedding_index, const rd_denoise_options* options, rd_raw** out);

/* Key-value settings for rd_run. Keys use underscores (embedding_index). */
RD_API rd_options* rd_options_new(void);
RD_API rd_status rd_options_set(rd_options* options, const char* key, const char* value);
RD_API void rd_options_free(rd_options* options);

/* Runs a workflow command: prepare, train, finetune, denoise, evaluate,
   render or toy-corpus. On success *summary_json (if non-NULL) receives a
   JSON summary to release with rd_string_free. */
RD_API rd_status rd_run(const char* command, const rd_options* options, char** summary_json);
RD_API void rd_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
