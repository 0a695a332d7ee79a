#include "dataset/samples.hpp"

#include "common/error.hpp"
#include "raw/image_io.hpp"
#include "raw/isp.hpp"

namespace rawdiff {

RawImage crop_raw(const RawImage& raw, std::size_t y, std::size_t x, std::size_t height, std::size_t width) {
    if (y % 2 || x % 2 || height % 2 || width % 2 || height == 0 || width == 0)
        throw UsageError("crop must be even-aligned with even, positive extents");
    if (y + height > raw.height() || x + width > raw.width())
        throw UsageError("crop " + std::to_string(height) + "x" + std::to_string(width) + " at (" + std::to_string(y) +
                         "," + std::to_string(x) + ") exceeds " + std::to_string(raw.height()) + "x" +
                         std::to_string(raw.width()));
    const std::size_t ph = height / 2, pw = width / 2, py = y / 2, px = x / 2;
    Tensor out({4, ph, pw});
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < ph; ++i)
            for (std::size_t j = 0; j < pw; ++j)
                out.at(c, i, j) = raw.planes().at(c, py + i, px + j);
    return RawImage(std::move(out), raw.isp());
}

std::pair<std::size_t, std::size_t> random_crop_offset(const RawImage& raw, std::size_t patch, Rng& rng,
                                                       const std::string& id) {
    if (patch % 2)
        throw UsageError("patch size must be even, got " + std::to_string(patch));
    if (raw.height() < patch || raw.width() < patch)
        throw DataError("image '" + id + "' (" + std::to_string(raw.height()) + "x" + std::to_string(raw.width()) +
                        ") is smaller than the " + std::to_string(patch) + " patch");
    const auto max_y = static_cast<std::int64_t>((raw.height() - patch) / 2);
    const auto max_x = static_cast<std::int64_t>((raw.width() - patch) / 2);
    const auto oy = static_cast<std::size_t>(rng.uniform_int(0, max_y)) * 2;
    const auto ox = static_cast<std::size_t>(rng.uniform_int(0, max_x)) * 2;
    return {oy, ox};
}

RawImage load_clean_raw(const Manifest& manifest, const ManifestEntry& entry) {
    const auto path = manifest.resolve(entry.clean);
    if (has_extension(path, ".rdrw"))
        return read_raw(path);
    const auto rgb = read_rgb(path);
    const std::size_t h = rgb.height() & ~std::size_t{1}, w = rgb.width() & ~std::size_t{1};
    if (h == 0 || w == 0)
        throw DataError("image '" + path + "' is too small");
    if (h == rgb.height() && w == rgb.width())
        return invert_isp(rgb, manifest.isp_for(entry));
    RgbImage trimmed(h, w);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                trimmed.at(c, y, x) = rgb.at(c, y, x);
    return invert_isp(trimmed, manifest.isp_for(entry));
}

Sample make_synthetic_sample(const std::string& id, const RawImage& clean, const ConditionVector& cond,
                             std::size_t embedding_index, const NoiseSource& noise, std::size_t patch, Rng& rng) {
    Sample s;
    s.id = id;
    s.cond = cond;
    s.embedding_index = embedding_index;
    if (patch > 0) {
        std::tie(s.crop_y, s.crop_x) = random_crop_offset(clean, patch, rng, id);
        s.x0 = crop_raw(clean, s.crop_y, s.crop_x, patch, patch);
    } else {
        s.x0 = clean;
    }
    s.noise = noise.draw(rng);
    s.y = apply_noise(s.x0, s.noise, rng);
    return s;
}

double fit_pair_gain(const RawImage& noisy, const RawImage& clean) {
    double sn = 0.0, sc = 0.0;
    for (double v : noisy.planes().values())
        sn += v;
    for (double v : clean.planes().values())
        sc += v;
    if (!(sc > 0))
        throw DataError("cannot fit a gain to an all-zero clean capture");
    return sn / sc;
}

Sample load_real_pair(const Manifest& manifest, const ManifestEntry& entry, const EmbeddingFile& embeddings) {
    if (!entry.noisy)
        throw DataError("entry '" + entry.id + "' is not a real pair (no noisy capture)");
    RawImage noisy = read_raw(manifest.resolve(*entry.noisy));
    RawImage clean = load_clean_raw(manifest, entry);
    if (noisy.height() != clean.height() || noisy.width() != clean.width())
        throw DataError("real pair '" + entry.id + "': noisy " + std::to_string(noisy.height()) + "x" +
                        std::to_string(noisy.width()) + " vs clean " + std::to_string(clean.height()) + "x" +
                        std::to_string(clean.width()));
    Sample s;
    s.id = entry.id;
    s.gain = entry.gain ? *entry.gain : fit_pair_gain(noisy, clean);
    for (auto& v : clean.planes().values())
        v *= s.gain;
    s.x0 = std::move(clean);
    s.y = std::move(noisy);
    s.cond = embeddings.condition(entry.embedding_index);
    s.embedding_index = entry.embedding_index;
    s.noisy_meta = entry.noisy_meta;
    s.clean_meta = entry.clean_meta;
    return s;
}

SyntheticDataset::SyntheticDataset(std::vector<Item> items, NoiseSource noise, std::size_t patch)
    : items_(std::move(items)), noise_(noise), patch_(patch) {
    if (items_.empty())
        throw DataError("synthetic dataset is empty");
}

SyntheticDataset SyntheticDataset::from_manifest(const Manifest& manifest, Split split,
                                                 const EmbeddingFile& embeddings, NoiseSource noise,
                                                 std::size_t patch) {
    std::vector<Item> items;
    for (const auto* e : manifest.split(split))
        items.push_back({e->id, load_clean_raw(manifest, *e), embeddings.condition(e->embedding_index),
                         e->embedding_index});
    if (items.empty())
        throw DataError(std::string("manifest has no ") + split_name(split) + " entries");
    return SyntheticDataset(std::move(items), noise, patch);
}

Sample SyntheticDataset::sample(std::size_t index, Rng& rng) const {
    const auto& item = items_.at(index);
    return make_synthetic_sample(item.id, item.clean, item.cond, item.embedding_index, noise_, patch_, rng);
}

RealPairDataset::RealPairDataset(std::vector<Sample> pairs, std::size_t patch)
    : pairs_(std::move(pairs)), patch_(patch) {
    if (pairs_.empty())
        throw DataError("real-pair dataset is empty");
}

RealPairDataset RealPairDataset::from_manifest(const Manifest& manifest, Split split,
                                               const EmbeddingFile& embeddings, std::size_t patch) {
    std::vector<Sample> pairs;
    for (const auto* e : manifest.split(split))
        if (e->is_real_pair())
            pairs.push_back(load_real_pair(manifest, *e, embeddings));
    if (pairs.empty())
        throw DataError(std::string("manifest has no real pairs in the ") + split_name(split) + " split");
    return RealPairDataset(std::move(pairs), patch);
}

Sample RealPairDataset::sample(std::size_t index, Rng& rng) const {
    const auto& full = pairs_.at(index);
    if (patch_ == 0)
        return full;
    Sample s = full;
    std::tie(s.crop_y, s.crop_x) = random_crop_offset(full.x0, patch_, rng, full.id);
    s.x0 = crop_raw(full.x0, s.crop_y, s.crop_x, patch_, patch_);
    s.y = crop_raw(full.y, s.crop_y, s.crop_x, patch_, patch_);
    return s;
}

std::vector<Sample> fixed_samples(const PairDataset& data, std::size_t count, std::uint64_t seed) {
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = Rng::derive(seed, i);
        out.push_back(data.sample(i % data.size(), rng));
    }
    return out;
}

} // namespace rawdiff
