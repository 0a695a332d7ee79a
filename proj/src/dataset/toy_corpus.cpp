#include "dataset/toy_corpus.hpp"

#include <array>
#include <cmath>
#include <filesystem>

#include "common/binio.hpp"
#include "common/error.hpp"
#include "raw/image_io.hpp"

namespace rawdiff {

namespace {

using Colour = std::array<double, 3>;

constexpr std::array<std::array<Colour, 2>, 4> kPalettes{{
    {{{0.90, 0.20, 0.20}, {0.20, 0.25, 0.80}}},
    {{{0.25, 0.80, 0.30}, {0.85, 0.80, 0.20}}},
    {{{0.95, 0.95, 0.95}, {0.10, 0.10, 0.10}}},
    {{{0.90, 0.55, 0.10}, {0.35, 0.10, 0.55}}},
}};

std::string toy_id(int cls, Split split, int n) {
    return "c" + std::to_string(cls) + "-" + split_name(split) + std::to_string(n);
}

} // namespace

RgbImage toy_image(int cls, int size, Rng& rng) {
    if (cls < 0 || size < 2)
        throw UsageError("toy image: bad class or size");
    const int pattern = cls % 4;
    const auto& palette = kPalettes[static_cast<std::size_t>((cls / 4) % 4)];
    const int period = rng.uniform_int(0, 1) ? 8 : 6;
    const int py = static_cast<int>(rng.uniform_int(0, period - 1));
    const int px = static_cast<int>(rng.uniform_int(0, period - 1));
    const double cy = rng.uniform(0.25, 0.75) * size, cx = rng.uniform(0.25, 0.75) * size;
    const auto s = static_cast<std::size_t>(size);
    RgbImage img(s, s);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const bool row = ((y + py) % period) < period / 2;
            const bool col = ((x + px) % period) < period / 2;
            bool on = false;
            switch (pattern) {
            case 0:
                on = row;
                break;
            case 1:
                on = col;
                break;
            case 2:
                on = row != col;
                break;
            default:
                on = static_cast<int>(std::hypot(y - cy, x - cx)) % period < period / 2;
            }
            const auto& c = palette[on ? 0 : 1];
            for (std::size_t ch = 0; ch < 3; ++ch)
                img.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = c[ch];
        }
    }
    return img;
}

EmbeddingFile toy_embeddings(int classes, std::uint64_t seed, std::size_t dim) {
    if (classes < 1)
        throw UsageError("toy embeddings: classes must be >= 1");
    EmbeddingFile e;
    e.count = static_cast<std::size_t>(classes);
    e.dim = dim;
    e.vectors.resize(e.count * dim);
    Rng rng(seed ^ 0xe4be'dd1e'5ULL);
    for (std::size_t i = 0; i < e.count; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double v = rng.normal();
            e.vectors[i * dim + j] = v;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < dim; ++j)
            e.vectors[i * dim + j] = static_cast<float>(e.vectors[i * dim + j] / norm);
    }
    return e;
}

ToyCorpus make_toy_corpus(const ToyCorpusOptions& options) {
    if (options.train_per_class < 0 || options.test_per_class < 0 || options.image_size < 2 ||
        options.image_size % 2)
        throw UsageError("toy corpus: counts must be >= 0 and image_size even");
    ToyCorpus corpus;
    corpus.options = options;
    corpus.embeddings = toy_embeddings(options.classes, options.seed);
    for (int cls = 0; cls < options.classes; ++cls) {
        for (Split split : {Split::Train, Split::Test}) {
            const int n = split == Split::Train ? options.train_per_class : options.test_per_class;
            for (int i = 0; i < n; ++i) {
                const auto id = toy_id(cls, split, i);
                Rng rng = Rng::derive(
                    options.seed, binio::fnv1a({reinterpret_cast<const std::uint8_t*>(id.data()), id.size()}));
                corpus.images.push_back({id, cls, split, toy_image(cls, options.image_size, rng)});
            }
        }
    }
    return corpus;
}

std::vector<SyntheticDataset::Item> toy_items(const ToyCorpus& corpus, Split split) {
    std::vector<SyntheticDataset::Item> items;
    for (const auto& img : corpus.images)
        if (img.split == split) {
            const auto idx = static_cast<std::size_t>(img.cls);
            items.push_back({img.id, invert_isp(img.rgb, IspParams{}), corpus.embeddings.condition(idx), idx});
        }
    return items;
}

std::vector<Sample> toy_real_pairs(const ToyCorpus& corpus, Split split, const NoiseParams& noise, double gain,
                                   std::uint64_t seed) {
    std::vector<Sample> pairs;
    std::size_t i = 0;
    for (auto& item : toy_items(corpus, split)) {
        Rng rng = Rng::derive(seed, i++);
        RawImage scaled = item.clean;
        for (auto& v : scaled.planes().values())
            v *= gain;
        Sample s;
        s.id = item.id;
        s.y = apply_noise(scaled, noise, rng);
        s.x0 = std::move(scaled);
        s.cond = item.cond;
        s.embedding_index = item.embedding_index;
        s.noise = noise;
        s.gain = gain;
        s.noisy_meta = kNoisyCapture;
        s.clean_meta = kCleanCapture;
        pairs.push_back(std::move(s));
    }
    return pairs;
}

std::string write_toy_corpus(const std::string& dir, const ToyCorpus& corpus) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    save_embeddings((fs::path(dir) / "embeddings.rdem").string(), corpus.embeddings);
    Manifest m;
    m.embeddings = "embeddings.rdem";
    const auto& opt = corpus.options;
    std::size_t pair_index = 0;
    for (const auto& img : corpus.images) {
        ManifestEntry e;
        e.id = img.id;
        e.embedding_index = static_cast<std::size_t>(img.cls);
        e.split = img.split;
        if (opt.real_noise) {
            RawImage clean = invert_isp(img.rgb, m.isp);
            Rng rng = Rng::derive(opt.seed ^ 0x9a1d'0000ULL, pair_index++);
            RawImage scaled = clean;
            for (auto& v : scaled.planes().values())
                v *= opt.real_gain;
            e.clean = "images/" + img.id + "_clean.rdrw";
            e.noisy = "images/" + img.id + "_noisy.rdrw";
            write_raw((fs::path(dir) / e.clean).string(), clean);
            write_raw((fs::path(dir) / *e.noisy).string(), apply_noise(scaled, *opt.real_noise, rng));
        } else {
            e.clean = "images/" + img.id + ".png";
            write_rgb((fs::path(dir) / e.clean).string(), img.rgb, 16);
        }
        m.entries.push_back(std::move(e));
    }
    const auto path = (fs::path(dir) / "manifest.json").string();
    save_manifest(path, m);
    return path;
}

} // namespace rawdiff
