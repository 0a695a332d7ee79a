#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dataset/embeddings.hpp"
#include "dataset/manifest.hpp"
#include "dataset/samples.hpp"
#include "raw/isp.hpp"

namespace rawdiff {

// Procedural stand-in for a captioned photo corpus. Class k draws pattern
// k % 4 (horizontal stripes, vertical stripes, checkerboard, rings) in
// two-colour palette k / 4 with a random period and phase, and has its own
// fixed random unit-norm "caption" embedding.

struct ToyCorpusOptions {
    int classes = 16;
    int train_per_class = 4;
    int test_per_class = 4;
    int image_size = 36;
    std::uint64_t seed = 1;
    /// When set, the corpus also carries simulated real pairs: noisy = gain * clean + noise.
    std::optional<NoiseParams> real_noise;
    double real_gain = 1.0;
};

struct ToyImage {
    std::string id;
    int cls = 0;
    Split split = Split::Train;
    RgbImage rgb;
};

struct ToyCorpus {
    ToyCorpusOptions options;
    EmbeddingFile embeddings;
    std::vector<ToyImage> images;
};

RgbImage toy_image(int cls, int size, Rng& rng);

/// Gaussian rows normalised to unit length and rounded to f32.
EmbeddingFile toy_embeddings(int classes, std::uint64_t seed, std::size_t dim = kConditionDim);

ToyCorpus make_toy_corpus(const ToyCorpusOptions& options);

/// Clean raws (default ISP) of one split, ready for SyntheticDataset.
std::vector<SyntheticDataset::Item> toy_items(const ToyCorpus& corpus, Split split);

/// Simulated real pairs of one split at full extents.
std::vector<Sample> toy_real_pairs(const ToyCorpus& corpus, Split split, const NoiseParams& noise, double gain,
                                   std::uint64_t seed);

/// Writes images (PNG), embeddings.rdem and manifest.json into `dir`; with
/// real_noise set, clean/noisy raws are written as pairs instead. Returns the
/// manifest path.
std::string write_toy_corpus(const std::string& dir, const ToyCorpus& corpus);

} // namespace rawdiff
