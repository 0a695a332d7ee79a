// Exercises the library through the public C header only.
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "rawdiff/rawdiff.h"

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("rawdiff_capi_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

struct Options {
    rd_options* p = rd_options_new();
    ~Options() { rd_options_free(p); }
    Options& set(const char* k, const std::string& v) {
        REQUIRE(rd_options_set(p, k, v.c_str()) == RD_OK);
        return *this;
    }
};

std::string run(const char* command, const Options& o, rd_status want = RD_OK) {
    char* summary = nullptr;
    const rd_status st = rd_run(command, o.p, &summary);
    INFO(rd_last_error());
    CHECK(st == want);
    std::string out = summary ? summary : "";
    rd_string_free(summary);
    return out;
}

std::vector<double> planes_of(const rd_raw* r) {
    size_t h = 0, w = 0;
    REQUIRE(rd_raw_dims(r, &h, &w) == RD_OK);
    std::vector<double> v(h * w);
    REQUIRE(rd_raw_planes(r, v.data(), v.size()) == RD_OK);
    return v;
}

// A toy corpus plus a few steps of training on it, shared by the model tests.
struct Trained {
    fs::path dir = fresh_dir("trained");
    Trained() {
        Options corpus;
        corpus.set("out", (dir / "corpus").string()).set("classes", "2").set("train_per_class", "2");
        corpus.set("test_per_class", "1").set("image_size", "16");
        run("toy-corpus", corpus);
        for (const char* cond : {"text", "null"}) {
            Options t;
            t.set("manifest", (dir / "corpus" / "manifest.json").string()).set("out", (dir / cond).string());
            t.set("base_channels", "8").set("depth", "1").set("time_embed_dim", "16").set("patch_size", "16");
            t.set("diffusion_steps", "16").set("steps", "3").set("batch_size", "2").set("conditioning", cond);
            run("train", t);
        }
    }
};

const Trained& trained() {
    static const Trained t;
    return t;
}

} // namespace

TEST_CASE("status names and version") {
    CHECK(std::string(rd_status_name(RD_OK)) == "ok");
    CHECK(std::string(rd_status_name(RD_ERR_USAGE)) == "usage");
    CHECK(std::string(rd_status_name(RD_ERR_DATA)) == "data");
    CHECK(std::string(rd_status_name(RD_ERR_NUMERIC)) == "numeric");
    CHECK(std::string(rd_status_name(RD_ERR_INTERNAL)) == "internal");
    CHECK(RD_ERR_USAGE == 2);
    CHECK(RD_ERR_DATA == 3);
    CHECK(RD_ERR_NUMERIC == 4);
    CHECK(std::string(rd_version()).size() > 0);
    CHECK(rd_build_id() != nullptr);
}

TEST_CASE("raw handles") {
    const auto dir = fresh_dir("raw");
    std::vector<double> planes(4 * 3 * 5);
    for (size_t i = 0; i < planes.size(); ++i)
        planes[i] = double(i) / double(planes.size());
    rd_raw* r = nullptr;
    REQUIRE(rd_raw_from_planes(planes.data(), 6, 10, &r) == RD_OK);
    size_t h = 0, w = 0;
    CHECK(rd_raw_dims(r, &h, &w) == RD_OK);
    CHECK(h == 6);
    CHECK(w == 10);
    CHECK(planes_of(r) == planes);

    const auto path = (dir / "a.rdrw").string();
    CHECK(rd_raw_save(r, path.c_str()) == RD_OK);
    rd_raw* back = nullptr;
    REQUIRE(rd_raw_load(path.c_str(), &back) == RD_OK);
    CHECK(planes_of(back) == planes);
    CHECK(rd_raw_render(back, (dir / "a.png").string().c_str()) == RD_OK);
    CHECK(fs::file_size(dir / "a.png") > 0);

    std::vector<double> small(3);
    CHECK(rd_raw_planes(r, small.data(), small.size()) == RD_ERR_USAGE);
    CHECK(std::string(rd_last_error()).find("buffer") != std::string::npos);
    rd_raw* odd = nullptr;
    CHECK(rd_raw_from_planes(planes.data(), 5, 10, &odd) == RD_ERR_USAGE);
    CHECK(odd == nullptr);
    rd_raw_free(r);
    rd_raw_free(back);
    rd_raw_free(nullptr);
}

TEST_CASE("error reporting") {
    rd_raw* r = nullptr;
    CHECK(rd_raw_load("/nonexistent/file.rdrw", &r) == RD_ERR_DATA);
    CHECK(std::string(rd_last_error()).size() > 0);
    CHECK(r == nullptr);
    CHECK(rd_raw_load(nullptr, &r) == RD_ERR_USAGE);
    CHECK(rd_raw_dims(nullptr, nullptr, nullptr) == RD_ERR_USAGE);

    // Messages are per thread, and success clears them.
    std::string other;
    std::thread([&] { other = rd_last_error(); }).join();
    CHECK(other.empty());
    rd_raw* ok = nullptr;
    std::vector<double> four(4, 0.5);
    CHECK(rd_raw_from_planes(four.data(), 2, 2, &ok) == RD_OK);
    CHECK(std::string(rd_last_error()).empty());
    rd_raw_free(ok);

    const auto dir = fresh_dir("errors");
    std::ofstream(dir / "junk.rdrw") << "not a raw file";
    CHECK(rd_raw_load((dir / "junk.rdrw").string().c_str(), &r) == RD_ERR_DATA);
    rd_model* m = nullptr;
    CHECK(rd_model_load((dir / "junk.rdrw").string().c_str(), &m) == RD_ERR_DATA);
    rd_embeddings* e = nullptr;
    CHECK(rd_embeddings_load((dir / "junk.rdrw").string().c_str(), &e) == RD_ERR_DATA);
}

TEST_CASE("run") {
    const auto dir = fresh_dir("run");
    CHECK(rd_run(nullptr, nullptr, nullptr) == RD_ERR_USAGE);
    CHECK(rd_run("transmogrify", nullptr, nullptr) == RD_ERR_USAGE);
    Options unknown;
    unknown.set("out", dir.string()).set("colour", "blue");
    run("toy-corpus", unknown, RD_ERR_USAGE);
    CHECK(std::string(rd_last_error()).find("colour") != std::string::npos);

    Options corpus;
    corpus.set("out", (dir / "c").string()).set("classes", "3").set("image_size", "12");
    const auto summary = run("toy-corpus", corpus);
    CHECK(summary.find("manifest.json") != std::string::npos);
    rd_embeddings* e = nullptr;
    REQUIRE(rd_embeddings_load((dir / "c" / "embeddings.rdem").string().c_str(), &e) == RD_OK);
    size_t count = 0, dim = 0;
    CHECK(rd_embeddings_dims(e, &count, &dim) == RD_OK);
    CHECK(count == 3);
    CHECK(dim == 768);
    rd_embeddings_free(e);

    Options eval;
    eval.set("manifest", (dir / "c" / "manifest.json").string()).set("out", (dir / "report.json").string());
    const auto report = run("evaluate", eval);
    CHECK(report.find("mean_psnr_raw") != std::string::npos);
    CHECK(fs::exists(dir / "report.json"));
}

TEST_CASE("models") {
    const auto& t = trained();
    rd_model* text = nullptr;
    rd_model* null = nullptr;
    REQUIRE(rd_model_load((t.dir / "text" / "model.rdck").string().c_str(), &text) == RD_OK);
    REQUIRE(rd_model_load((t.dir / "null" / "model.rdck").string().c_str(), &null) == RD_OK);
    int uncond = -1;
    CHECK(rd_model_is_unconditioned(text, &uncond) == RD_OK);
    CHECK(uncond == 0);
    CHECK(rd_model_is_unconditioned(null, &uncond) == RD_OK);
    CHECK(uncond == 1);

    rd_embeddings* e = nullptr;
    REQUIRE(rd_embeddings_load((t.dir / "corpus" / "embeddings.rdem").string().c_str(), &e) == RD_OK);
    std::vector<double> planes(4 * 8 * 8);
    for (size_t i = 0; i < planes.size(); ++i)
        planes[i] = 0.3 + 0.4 * double(i % 7) / 7.0;
    rd_raw* noisy = nullptr;
    REQUIRE(rd_raw_from_planes(planes.data(), 16, 16, &noisy) == RD_OK);

    rd_denoise_options o{4, 11, 0};
    rd_raw* a = nullptr;
    rd_raw* b = nullptr;
    REQUIRE(rd_denoise(text, noisy, e, 1, &o, &a) == RD_OK);
    REQUIRE(rd_denoise(text, noisy, e, 1, &o, &b) == RD_OK);
    CHECK(planes_of(a) == planes_of(b));
    rd_raw* c = nullptr;
    CHECK(rd_denoise(text, noisy, nullptr, 0, &o, &c) == RD_ERR_USAGE);
    CHECK(rd_denoise(text, noisy, e, 99, &o, &c) == RD_ERR_USAGE);
    o.uncond = 1;
    CHECK(rd_denoise(text, noisy, e, 0, &o, &c) == RD_ERR_USAGE);
    CHECK(rd_denoise(null, noisy, nullptr, 0, &o, &c) == RD_OK);
    rd_raw_free(c);
    o.uncond = 0;
    o.steps = 0;
    CHECK(rd_denoise(text, noisy, e, 0, &o, &c) == RD_ERR_USAGE);

    rd_raw_free(a);
    rd_raw_free(b);
    rd_raw_free(noisy);
    rd_embeddings_free(e);
    rd_model_free(text);
    rd_model_free(null);
}

TEST_CASE("adapters") {
    const auto& t = trained();
    const auto dir = fresh_dir("adapters");
    Options corpus;
    corpus.set("out", (dir / "real").string()).set("classes", "2").set("train_per_class", "2");
    corpus.set("test_per_class", "1").set("image_size", "16").set("real_shot", "0.02").set("real_read", "0.005");
    run("toy-corpus", corpus);
    Options ft;
    ft.set("base", (t.dir / "text" / "model.rdck").string()).set("manifest", (dir / "real" / "manifest.json").string());
    ft.set("out", (dir / "ft").string()).set("steps", "2").set("batch_size", "2").set("lora_rank", "2");
    run("finetune", ft);

    rd_model* m = nullptr;
    REQUIRE(rd_model_load((t.dir / "text" / "model.rdck").string().c_str(), &m) == RD_OK);
    CHECK(rd_model_load_lora(m, (dir / "ft" / "adapters.rdla").string().c_str()) == RD_OK);
    rd_model_free(m);

    // Adapters trained on one base do not load onto another.
    REQUIRE(rd_model_load((t.dir / "null" / "model.rdck").string().c_str(), &m) == RD_OK);
    CHECK(rd_model_load_lora(m, (dir / "ft" / "adapters.rdla").string().c_str()) == RD_ERR_DATA);
    rd_model_free(m);
}
