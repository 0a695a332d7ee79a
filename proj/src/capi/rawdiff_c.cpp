#include "rawdiff/rawdiff.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "dataset/embeddings.hpp"
#include "denoiser/denoiser.hpp"
#include "raw/image_io.hpp"
#include "raw/isp.hpp"
#include "workflow/workflow.hpp"

struct rd_raw {
    rawdiff::RawImage image;
};
struct rd_embeddings {
    rawdiff::EmbeddingFile file;
};
struct rd_model {
    rawdiff::Denoiser model;
};
struct rd_options {
    rawdiff::KeyValueConfig values;
};

namespace {

thread_local std::string g_last_error;

rd_status status_for(rawdiff::ErrorKind kind) {
    switch (kind) {
    case rawdiff::ErrorKind::Usage:
        return RD_ERR_USAGE;
    case rawdiff::ErrorKind::Data:
        return RD_ERR_DATA;
    case rawdiff::ErrorKind::Numeric:
        return RD_ERR_NUMERIC;
    }
    return RD_ERR_INTERNAL;
}

template <class F>
rd_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return RD_OK;
    } catch (const rawdiff::Error& e) {
        g_last_error = e.what();
        return status_for(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
    } catch (const std::exception& e) {
        g_last_error = e.what();
    } catch (...) {
        g_last_error = "unknown exception";
    }
    return RD_ERR_INTERNAL;
}

void require(const void* p, const char* what) {
    if (!p)
        throw rawdiff::UsageError(std::string(what) + " is NULL");
}

} // namespace

extern "C" {

const char* rd_last_error(void) {
    return g_last_error.c_str();
}

const char* rd_status_name(rd_status status) {
    switch (status) {
    case RD_OK:
        return "ok";
    case RD_ERR_USAGE:
        return "usage";
    case RD_ERR_DATA:
        return "data";
    case RD_ERR_NUMERIC:
        return "numeric";
    case RD_ERR_INTERNAL:
        break;
    }
    return "internal";
}

const char* rd_version(void) {
    return "0.1.0";
}

const char* rd_build_id(void) {
    return rawdiff::build_id();
}

void rd_set_threads(int threads) {
    rawdiff::set_thread_count(threads > 0 ? static_cast<std::size_t>(threads) : 0);
}

rd_status rd_raw_load(const char* path, rd_raw** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new rd_raw{rawdiff::read_raw(path)};
    });
}

rd_status rd_raw_save(const rd_raw* raw, const char* path) {
    return guarded([&] {
        require(raw, "raw");
        require(path, "path");
        rawdiff::write_raw(path, raw->image);
    });
}

rd_status rd_raw_dims(const rd_raw* raw, size_t* height, size_t* width) {
    return guarded([&] {
        require(raw, "raw");
        if (height)
            *height = raw->image.height();
        if (width)
            *width = raw->image.width();
    });
}

rd_status rd_raw_planes(const rd_raw* raw, double* buf, size_t len) {
    return guarded([&] {
        require(raw, "raw");
        require(buf, "buf");
        const auto v = raw->image.planes().values();
        if (len < v.size())
            throw rawdiff::UsageError("buffer holds " + std::to_string(len) + " values, need " +
                                      std::to_string(v.size()));
        std::memcpy(buf, v.data(), v.size() * sizeof(double));
    });
}

rd_status rd_raw_from_planes(const double* planes, size_t height, size_t width, rd_raw** out) {
    return guarded([&] {
        require(planes, "planes");
        require(out, "out");
        auto img = rawdiff::RawImage::zeros(height, width);
        std::memcpy(img.planes().data(), planes, img.planes().size() * sizeof(double));
        *out = new rd_raw{std::move(img)};
    });
}

rd_status rd_raw_render(const rd_raw* raw, const char* png_path) {
    return guarded([&] {
        require(raw, "raw");
        require(png_path, "png_path");
        rawdiff::write_rgb(png_path, rawdiff::isp_render(raw->image));
    });
}

void rd_raw_free(rd_raw* raw) {
    delete raw;
}

rd_status rd_embeddings_load(const char* path, rd_embeddings** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new rd_embeddings{rawdiff::load_embeddings(path)};
    });
}

rd_status rd_embeddings_dims(const rd_embeddings* e, size_t* count, size_t* dim) {
    return guarded([&] {
        require(e, "embeddings");
        if (count)
            *count = e->file.count;
        if (dim)
            *dim = e->file.dim;
    });
}

void rd_embeddings_free(rd_embeddings* e) {
    delete e;
}

rd_status rd_model_load(const char* checkpoint, rd_model** out) {
    return guarded([&] {
        require(checkpoint, "checkpoint");
        require(out, "out");
        *out = new rd_model{rawdiff::load_checkpoint(checkpoint)};
    });
}

rd_status rd_model_load_lora(rd_model* model, const char* adapters) {
    return guarded([&] {
        require(model, "model");
        require(adapters, "adapters");
        rawdiff::load_adapters(adapters, model->model);
    });
}

rd_status rd_model_is_unconditioned(const rd_model* model, int* out) {
    return guarded([&] {
        require(model, "model");
        require(out, "out");
        *out = model->model.conditioning() == rawdiff::Conditioning::Null;
    });
}

void rd_model_free(rd_model* model) {
    delete model;
}

rd_status rd_denoise(const rd_model* model, const rd_raw* noisy, const rd_embeddings* embeddings,
                     size_t embedding_index, const rd_denoise_options* options, rd_raw** out) {
    return guarded([&] {
        require(model, "model");
        require(noisy, "noisy");
        require(options, "options");
        require(out, "out");
        const auto& m = model->model;
        rawdiff::ConditionVector cond;
        if (options->uncond) {
            if (m.conditioning() != rawdiff::Conditioning::Null)
                throw rawdiff::UsageError("uncond requires a checkpoint trained with null conditioning");
        } else if (m.conditioning() == rawdiff::Conditioning::Text) {
            require(embeddings, "embeddings");
            cond = embeddings->file.condition(embedding_index);
        }
        *out = new rd_raw{rawdiff::denoise_raw(m, noisy->image, cond, options->steps, options->seed)};
    });
}

rd_options* rd_options_new(void) {
    return new (std::nothrow) rd_options{};
}

rd_status rd_options_set(rd_options* options, const char* key, const char* value) {
    return guarded([&] {
        require(options, "options");
        require(key, "key");
        require(value, "value");
        options->values.set(key, value);
    });
}

void rd_options_free(rd_options* options) {
    delete options;
}

rd_status rd_run(const char* command, const rd_options* options, char** summary_json) {
    return guarded([&] {
        require(command, "command");
        const auto summary = rawdiff::run_command(command, options ? options->values : rawdiff::KeyValueConfig{});
        if (summary_json) {
            const auto text = summary.dump();
            *summary_json = static_cast<char*>(std::malloc(text.size() + 1));
            if (!*summary_json)
                throw std::bad_alloc();
            std::memcpy(*summary_json, text.c_str(), text.size() + 1);
        }
    });
}

void rd_string_free(char* s) {
    std::free(s);
}

} // extern "C"
