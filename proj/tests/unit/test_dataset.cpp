#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "common/binio.hpp"
#include "common/error.hpp"
#include "dataset/toy_corpus.hpp"
#include "raw/image_io.hpp"
#include "test_util.hpp"

using namespace rawdiff;
using testutil::bit_equal;

namespace {

EmbeddingFile small_embeddings(std::size_t count, std::size_t dim, std::uint64_t seed = 1) {
    Rng rng(seed);
    EmbeddingFile e{count, dim, std::vector<double>(count * dim)};
    for (auto& v : e.vectors)
        v = static_cast<float>(rng.normal());  // f32-representable
    return e;
}

EmbeddingErrorCode code_of(const std::vector<std::uint8_t>& bytes, std::optional<std::size_t> dim = 768) {
    try {
        decode_embeddings(bytes, dim);
    } catch (const EmbeddingFormatError& e) {
        return e.code();
    }
    FAIL("decode unexpectedly succeeded");
    return {};
}

std::vector<std::uint8_t> header(std::uint32_t version, std::uint32_t count, std::uint32_t dim) {
    binio::Writer w;
    w.magic("RDEM");
    w.u32(version);
    w.u32(count);
    w.u32(dim);
    return w.buffer();
}

ManifestEntry entry(std::string id, std::string clean, std::optional<std::string> noisy = std::nullopt,
                    std::size_t index = 0, Split split = Split::Train) {
    ManifestEntry e;
    e.id = std::move(id);
    e.clean = std::move(clean);
    e.noisy = std::move(noisy);
    e.embedding_index = index;
    e.split = split;
    return e;
}

bool raw_invariants(const RawImage& r) {
    return r.planes().rank() == 3 && r.planes().dim(0) == 4 && r.height() % 2 == 0 && r.width() % 2 == 0;
}

} // namespace

TEST_CASE("embedding files") {
    SUBCASE("two 768-d vectors") {
        const auto e = small_embeddings(2, 768);
        const auto back = decode_embeddings(encode_embeddings(e), 768);
        CHECK(back.count == 2);
        CHECK(back.dim == 768);
        CHECK(back.row(1).size() == 768);
        CHECK(back == e);
        CHECK(back.condition(0).values.size() == 768);
        CHECK_THROWS(back.row(2));
    }
    SUBCASE("file round trip is bit-exact") {
        const auto dir = testutil::scratch_dir("emb");
        const auto e = small_embeddings(3, 768, 2);
        save_embeddings(dir + "/e.rdem", e);
        CHECK(load_embeddings(dir + "/e.rdem") == e);
        const auto bytes = binio::read_file(dir + "/e.rdem");
        CHECK(bytes.size() == 16 + 3 * 768 * 4);
    }
    SUBCASE("errors carry distinct codes") {
        const auto good = encode_embeddings(small_embeddings(2, 768));
        auto bad_magic = good;
        bad_magic[0] = 'X';
        CHECK(code_of(bad_magic) == EmbeddingErrorCode::BadMagic);
        CHECK(code_of(header(2, 1, 768)) == EmbeddingErrorCode::BadVersion);
        auto cut = good;
        cut.resize(good.size() - 1);
        CHECK(code_of(cut) == EmbeddingErrorCode::Truncated);
        CHECK(code_of({'R', 'D'}) == EmbeddingErrorCode::Truncated);
        CHECK(code_of(encode_embeddings(small_embeddings(2, 512))) == EmbeddingErrorCode::DimMismatch);
        CHECK(code_of(header(1, 0, 768)) == EmbeddingErrorCode::Empty);
        auto nan = good;
        const float q = std::nanf("");
        std::memcpy(nan.data() + 16, &q, 4);
        CHECK(code_of(nan) == EmbeddingErrorCode::NonFinite);
        auto extra = good;
        extra.push_back(0);
        CHECK(code_of(extra) == EmbeddingErrorCode::TrailingBytes);
        std::set<std::string> names;
        for (int c = 1; c <= 7; ++c)
            names.insert(embedding_error_name(static_cast<EmbeddingErrorCode>(c)));
        CHECK(names.size() == 7);
        // Any dimension is fine when none is expected.
        CHECK(decode_embeddings(encode_embeddings(small_embeddings(2, 512)), std::nullopt).dim == 512);
    }
    SUBCASE("errors are data errors") {
        CHECK_THROWS_AS(load_embeddings("/nonexistent/e.rdem"), DataError);
        CHECK_THROWS_AS(decode_embeddings(header(1, 0, 768), 768), DataError);
    }
}

TEST_CASE("manifests") {
    const auto dir = testutil::scratch_dir("manifest");
    Manifest m;
    m.embeddings = "emb.rdem";
    m.isp.wb_red = 2.0;
    auto a = entry("a", "img/a.png");
    auto b = entry("b", "raw/b_clean.rdrw", "raw/b_noisy.rdrw", 1, Split::Test);
    b.gain = 1.25;
    IspParams custom;
    custom.exposure_gain = 2.0;
    a.isp = custom;
    m.entries = {a, b};
    SUBCASE("json round trip and path resolution") {
        save_manifest(dir + "/m.json", m);
        const auto back = load_manifest(dir + "/m.json");
        CHECK(back.entries.size() == 2);
        CHECK(back.isp == m.isp);
        CHECK(back.entries[0].isp == custom);
        CHECK(back.isp_for(back.entries[1]) == m.isp);
        CHECK(back.entries[1].gain == 1.25);
        CHECK(back.entries[1].is_real_pair());
        CHECK(back.resolve("img/a.png") == (std::filesystem::path(dir) / "img/a.png").string());
        CHECK(back.resolve("/abs/x.png") == "/abs/x.png");
        CHECK(manifest_to_json(back) == manifest_to_json(m));
    }
    SUBCASE("capture metadata defaults") {
        CHECK(b.noisy_meta.iso == 3200);
        CHECK(b.noisy_meta.exposure_s == 1.0 / 12000.0);
        CHECK(b.clean_meta.iso == 50);
        CHECK(b.clean_meta.exposure_s == 1.0 / 50.0);
    }
    SUBCASE("splits are disjoint") {
        const auto train = m.split(Split::Train), test = m.split(Split::Test);
        CHECK(train.size() == 1);
        CHECK(test.size() == 1);
        CHECK(train[0]->id != test[0]->id);
    }
    SUBCASE("validation") {
        CHECK_NOTHROW(m.validate(2));
        CHECK_THROWS_AS(m.validate(1), DataError);
        auto dup = m;
        dup.entries[1].id = "a";
        CHECK_THROWS_AS(dup.validate(2), DataError);
        auto empty_noisy = m;
        empty_noisy.entries[1].noisy = "";
        CHECK_THROWS_AS(empty_noisy.validate(2), DataError);
        CHECK_THROWS_AS(manifest_from_json("{\"entries\": [{\"clean\": 3}]}", dir, "t"), DataError);
        CHECK_THROWS_AS(manifest_from_json("not json", dir, "t"), DataError);
        CHECK_THROWS_AS(manifest_from_json("{\"version\": 9, \"entries\": []}", dir, "t"), DataError);
        CHECK_THROWS_AS(parse_split("val"), DataError);
    }
}

TEST_CASE("synthetic samples") {
    Rng rng(1);
    const RgbImage gray(40, 30, 0.5);
    const RawImage clean = invert_isp(gray, IspParams{});
    const auto cond = small_embeddings(1, 768).condition(0);
    SUBCASE("vanishing noise gives y = x0") {
        Rng r(2);
        const RawImage dark = invert_isp(RgbImage(8, 8, 0.0), IspParams{});
        const auto s = make_synthetic_sample("d", dark, cond, 0, NoiseSource::preset({1e-300, 0.0}), 0, r);
        CHECK(bit_equal(s.y.planes(), s.x0.planes()));
        const auto g = make_synthetic_sample("g", clean, cond, 0, NoiseSource::preset({1e-300, 0.0}), 8, r);
        CHECK(bit_equal(g.y.planes(), g.x0.planes()));
    }
    SUBCASE("noise statistics survive the full path") {
        Rng r(3);
        const RawImage big = invert_isp(RgbImage(1000, 1000, 0.5), IspParams{});
        const NoiseParams p{0.2, 0.05};
        const auto s = make_synthetic_sample("big", big, cond, 0, NoiseSource::preset(p), 0, r);
        std::vector<double> d(s.y.planes().size());
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = s.y.planes()[i] - s.x0.planes()[i];
        REQUIRE(d.size() == 1000000);
        const double z = GammaCurve{}.inverse(0.5);
        CHECK(std::abs(testutil::variance(d) / p.variance(z) - 1.0) < 0.02);
    }
    SUBCASE("crops are even and in bounds") {
        for (int i = 0; i < 500; ++i) {
            const auto s = make_synthetic_sample("c", clean, cond, 0, NoiseSource::sampled(), 16, rng);
            CHECK(s.crop_y % 2 == 0);
            CHECK(s.crop_x % 2 == 0);
            CHECK(s.crop_y + 16 <= clean.height());
            CHECK(s.crop_x + 16 <= clean.width());
            CHECK(raw_invariants(s.x0));
            CHECK(s.noise.valid());
            CHECK(bit_equal(s.x0.planes(), crop_raw(clean, s.crop_y, s.crop_x, 16, 16).planes()));
        }
        CHECK_THROWS_AS(make_synthetic_sample("small", clean, cond, 0, NoiseSource::sampled(), 32, rng), DataError);
        CHECK_THROWS_AS(crop_raw(clean, 1, 0, 4, 4), UsageError);
    }
    SUBCASE("sampled sources vary the parameters") {
        const auto a = make_synthetic_sample("x", clean, cond, 0, NoiseSource::sampled(), 8, rng);
        const auto b = make_synthetic_sample("x", clean, cond, 0, NoiseSource::sampled(), 8, rng);
        CHECK_FALSE(a.noise == b.noise);
    }
}

TEST_CASE("real pairs") {
    const auto dir = testutil::scratch_dir("pairs");
    Rng rng(4);
    Tensor planes({4, 6, 6});
    for (auto& v : planes.values())
        v = rng.uniform(0.1, 0.6);
    const RawImage clean(planes);
    RawImage noisy = apply_noise(RawImage(planes), {0.001, 0.0001}, rng);
    for (auto& v : noisy.planes().values())
        v *= 1.7;
    write_raw(dir + "/c.rdrw", clean);
    write_raw(dir + "/n.rdrw", noisy);
    write_raw(dir + "/small.rdrw", RawImage(Tensor({4, 5, 6}, 0.3)));
    Manifest m;
    m.base_dir = dir;
    auto e = entry("p", "c.rdrw", "n.rdrw", 1);
    e.noisy_meta = kNoisyCapture;
    m.entries = {e};
    const auto emb = small_embeddings(2, 768);

    SUBCASE("gain fit and metadata") {
        const auto s = load_real_pair(m, e, emb);
        CHECK(s.gain == doctest::Approx(fit_pair_gain(noisy, clean)));
        CHECK(s.gain == doctest::Approx(1.7).epsilon(0.01));
        CHECK(s.x0.planes()[3] == clean.planes()[3] * s.gain);
        CHECK(bit_equal(s.y.planes(), noisy.planes()));
        CHECK(s.noisy_meta == CaptureMeta{3200, 1.0 / 12000});
        CHECK(s.clean_meta == CaptureMeta{50, 1.0 / 50});
        CHECK(s.cond.values == emb.condition(1).values);
    }
    SUBCASE("manifest gain wins") {
        auto fixed = e;
        fixed.gain = 2.0;
        CHECK(load_real_pair(m, fixed, emb).gain == 2.0);
    }
    SUBCASE("extent mismatch") {
        auto bad = e;
        bad.noisy = "small.rdrw";
        CHECK_THROWS_AS(load_real_pair(m, bad, emb), DataError);
        auto synth = e;
        synth.noisy.reset();
        CHECK_THROWS_AS(load_real_pair(m, synth, emb), DataError);
    }
    SUBCASE("dataset crops both captures identically") {
        const RealPairDataset data({load_real_pair(m, e, emb)}, 4);
        const auto full = load_real_pair(m, e, emb);
        Rng r(5);
        for (int i = 0; i < 20; ++i) {
            const auto s = data.sample(0, r);
            CHECK(bit_equal(s.x0.planes(), crop_raw(full.x0, s.crop_y, s.crop_x, 4, 4).planes()));
            CHECK(bit_equal(s.y.planes(), crop_raw(full.y, s.crop_y, s.crop_x, 4, 4).planes()));
        }
    }
}

TEST_CASE("toy corpus") {
    ToyCorpusOptions o;
    o.image_size = 20;
    o.train_per_class = 2;
    o.test_per_class = 1;
    const auto corpus = make_toy_corpus(o);
    SUBCASE("shape and embeddings") {
        CHECK(corpus.images.size() == 16 * 3);
        CHECK(corpus.embeddings.count == 16);
        CHECK(corpus.embeddings.dim == 768);
        for (std::size_t k = 0; k < 16; ++k) {
            double n = 0.0;
            for (double v : corpus.embeddings.row(k)) {
                n += v * v;
                CHECK(v == double(float(v)));
            }
            CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
        }
        // nearly orthogonal in 768 dimensions
        for (std::size_t a = 0; a < 16; ++a)
            for (std::size_t b = a + 1; b < 16; ++b) {
                double dot = 0.0;
                for (std::size_t i = 0; i < 768; ++i)
                    dot += corpus.embeddings.row(a)[i] * corpus.embeddings.row(b)[i];
                CHECK(std::abs(dot) < 0.2);
            }
    }
    SUBCASE("deterministic and independent of corpus size") {
        const auto again = make_toy_corpus(o);
        auto bigger_opts = o;
        bigger_opts.train_per_class = 3;
        const auto bigger = make_toy_corpus(bigger_opts);
        for (const auto& img : corpus.images) {
            for (const auto& other : again.images)
                if (other.id == img.id)
                    CHECK(bit_equal(other.rgb.channels(), img.rgb.channels()));
            for (const auto& other : bigger.images)
                if (other.id == img.id)
                    CHECK(bit_equal(other.rgb.channels(), img.rgb.channels()));
        }
        CHECK(again.embeddings == corpus.embeddings);
    }
    SUBCASE("splits are disjoint") {
        std::set<std::string> train, test;
        for (const auto& img : corpus.images)
            (img.split == Split::Train ? train : test).insert(img.id);
        for (const auto& id : test)
            CHECK(train.count(id) == 0);
        CHECK(train.size() == 32);
        CHECK(test.size() == 16);
    }
    SUBCASE("classes look different") {
        // Same class in two draws differs only by phase and period; the
        // pattern and palette identify the class.
        Rng r(1);
        const auto a = toy_image(0, 20, r), b = toy_image(5, 20, r);
        CHECK(max_abs_diff(a.channels(), b.channels()) > 0.1);
    }
    SUBCASE("written corpus loads through the manifest") {
        const auto dir = testutil::scratch_dir("toy");
        const auto path = write_toy_corpus(dir, corpus);
        const auto m = load_manifest(path);
        const auto emb = load_embeddings(m.resolve(m.embeddings));
        m.validate(emb.count);
        CHECK(emb == corpus.embeddings);
        const auto data = SyntheticDataset::from_manifest(m, Split::Test, emb, NoiseSource::preset({0.1, 0.2}), 16);
        CHECK(data.size() == 16);
        // PNG storage quantizes to 16 bits; the raw is within that of the direct path.
        const auto direct = toy_items(corpus, Split::Test);
        for (std::size_t i = 0; i < direct.size(); ++i) {
            CHECK(data.items()[i].id == direct[i].id);
            CHECK(max_abs_diff(data.items()[i].clean.planes(), direct[i].clean.planes()) < 1e-4);
        }
    }
    SUBCASE("real-pair corpus") {
        auto ro = o;
        ro.real_noise = NoiseParams{0.02, 0.005};
        ro.real_gain = 0.8;
        const auto rc = make_toy_corpus(ro);
        const auto dir = testutil::scratch_dir("toy_real");
        const auto m = load_manifest(write_toy_corpus(dir, rc));
        const auto emb = load_embeddings(m.resolve(m.embeddings));
        for (const auto& e : m.entries)
            CHECK(e.is_real_pair());
        const auto data = RealPairDataset::from_manifest(m, Split::Train, emb, 16);
        CHECK(data.size() == 32);
        for (const auto& p : data.pairs()) {
            CHECK(raw_invariants(p.x0));
            CHECK(p.noisy_meta == kNoisyCapture);
        }
    }
}

TEST_CASE("fixed sample sets") {
    ToyCorpusOptions o;
    o.classes = 4;
    o.image_size = 20;
    const auto corpus = make_toy_corpus(o);
    const SyntheticDataset data(toy_items(corpus, Split::Train), NoiseSource::sampled(), 16);
    const auto a = fixed_samples(data, 10, 3), b = fixed_samples(data, 10, 3), c = fixed_samples(data, 10, 4);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(a[i].id == data.items()[i % data.size()].id);
        CHECK(bit_equal(a[i].y.planes(), b[i].y.planes()));
    }
    CHECK_FALSE(bit_equal(a[0].y.planes(), c[0].y.planes()));
    // Sample i only depends on (seed, i): a longer set shares its prefix.
    const auto longer = fixed_samples(data, 12, 3);
    CHECK(bit_equal(longer[9].y.planes(), a[9].y.planes()));
}
