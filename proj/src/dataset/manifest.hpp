#pragma once

#include <optional>
#include <string>
#include <vector>

#include "raw/raw_image.hpp"

namespace rawdiff {

enum class Split { Train, Test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

/// Capture settings recorded for a real pair.
struct CaptureMeta {
    double iso = 0.0;
    double exposure_s = 0.0;
    bool operator==(const CaptureMeta&) const = default;
};

inline constexpr CaptureMeta kNoisyCapture{3200.0, 1.0 / 12000.0};
inline constexpr CaptureMeta kCleanCapture{50.0, 1.0 / 50.0};

struct ManifestEntry {
    std::string id;
    std::string clean;                 // RGB (png/ppm) or raw (.rdrw)
    std::optional<std::string> noisy;  // real pairs only, raw
    std::size_t embedding_index = 0;
    Split split = Split::Train;
    std::optional<IspParams> isp;      // overrides the manifest default
    std::optional<double> gain;        // real pairs: clean -> noisy brightness gain
    CaptureMeta noisy_meta = kNoisyCapture;
    CaptureMeta clean_meta = kCleanCapture;

    bool is_real_pair() const { return noisy.has_value(); }
};

/// JSON manifest. Relative paths are resolved against `base_dir`, the
/// directory holding the manifest file.
struct Manifest {
    int version = 1;
    std::string embeddings;
    IspParams isp;
    std::vector<ManifestEntry> entries;
    std::string base_dir;

    std::string resolve(const std::string& path) const;
    const IspParams& isp_for(const ManifestEntry& e) const { return e.isp ? *e.isp : isp; }
    std::vector<const ManifestEntry*> split(Split s) const;

    /// Unique ids, indices below `embedding_count`, non-empty paths.
    void validate(std::size_t embedding_count) const;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& m);
std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text, const std::string& base_dir, const std::string& context);

} // namespace rawdiff
