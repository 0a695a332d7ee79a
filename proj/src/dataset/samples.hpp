#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "dataset/embeddings.hpp"
#include "dataset/manifest.hpp"
#include "denoiser/condition.hpp"
#include "noise/noise_model.hpp"
#include "raw/raw_image.hpp"

namespace rawdiff {

/// One training or evaluation triple. x0 and y are raw images in [0,1]
/// (y may leave that range).
struct Sample {
    std::string id;
    RawImage x0;
    RawImage y;
    ConditionVector cond;
    std::size_t embedding_index = 0;
    std::size_t crop_y = 0;  // mosaic coordinates, always even
    std::size_t crop_x = 0;
    NoiseParams noise;       // synthetic samples only
    double gain = 1.0;       // real pairs only
    std::optional<CaptureMeta> noisy_meta;
    std::optional<CaptureMeta> clean_meta;
};

/// Crop of `size` x `size` mosaic pixels at an even offset.
RawImage crop_raw(const RawImage& raw, std::size_t y, std::size_t x, std::size_t height, std::size_t width);

/// Even-aligned random offsets for a square patch; throws DataError when the
/// image is smaller than the patch.
std::pair<std::size_t, std::size_t> random_crop_offset(const RawImage& raw, std::size_t patch, Rng& rng,
                                                       const std::string& id);

/// Where synthetic noise parameters come from.
struct NoiseSource {
    enum class Kind { Fixed, Sampled };
    Kind kind = Kind::Sampled;
    NoiseParams fixed;

    static NoiseSource preset(NoiseParams p) { return {Kind::Fixed, p}; }
    static NoiseSource sampled() { return {}; }
    NoiseParams draw(Rng& rng) const { return kind == Kind::Fixed ? fixed : sample_noise_params(rng); }
};

/// Clean raw for an entry: raw files are read directly, RGB sources are
/// trimmed to even extents and passed through invert_isp.
RawImage load_clean_raw(const Manifest& manifest, const ManifestEntry& entry);

/// Crop (when patch > 0), then noise. The rng is consumed in that order:
/// crop offsets, noise parameters, per-sample noise.
Sample make_synthetic_sample(const std::string& id, const RawImage& clean, const ConditionVector& cond,
                             std::size_t embedding_index, const NoiseSource& noise, std::size_t patch, Rng& rng);

/// Registered real pair at full extents. The clean capture is scaled by the
/// entry's gain, or by mean(noisy) / mean(clean) when the entry has none.
Sample load_real_pair(const Manifest& manifest, const ManifestEntry& entry, const EmbeddingFile& embeddings);

/// Least-squares scalar on means mapping clean brightness to noisy.
double fit_pair_gain(const RawImage& noisy, const RawImage& clean);

/// Indexable source of training samples; each draw may be randomized.
class PairDataset {
public:
    virtual ~PairDataset() = default;
    virtual std::size_t size() const = 0;
    virtual Sample sample(std::size_t index, Rng& rng) const = 0;
};

class SyntheticDataset : public PairDataset {
public:
    struct Item {
        std::string id;
        RawImage clean;
        ConditionVector cond;
        std::size_t embedding_index = 0;
    };

    SyntheticDataset(std::vector<Item> items, NoiseSource noise, std::size_t patch);
    static SyntheticDataset from_manifest(const Manifest& manifest, Split split, const EmbeddingFile& embeddings,
                                          NoiseSource noise, std::size_t patch);

    std::size_t size() const override { return items_.size(); }
    Sample sample(std::size_t index, Rng& rng) const override;
    const std::vector<Item>& items() const { return items_; }

private:
    std::vector<Item> items_;
    NoiseSource noise_;
    std::size_t patch_;
};

/// Real pairs with matching random crops of both captures.
class RealPairDataset : public PairDataset {
public:
    RealPairDataset(std::vector<Sample> pairs, std::size_t patch);
    static RealPairDataset from_manifest(const Manifest& manifest, Split split, const EmbeddingFile& embeddings,
                                         std::size_t patch);

    std::size_t size() const override { return pairs_.size(); }
    Sample sample(std::size_t index, Rng& rng) const override;
    const std::vector<Sample>& pairs() const { return pairs_; }

private:
    std::vector<Sample> pairs_;
    std::size_t patch_;
};

/// `count` samples, sample i drawn from item i mod size with an rng derived
/// from (seed, i). Used for fixed evaluation sets.
std::vector<Sample> fixed_samples(const PairDataset& data, std::size_t count, std::uint64_t seed);

} // namespace rawdiff
