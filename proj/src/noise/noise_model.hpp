#pragma once

#include <string>

#include "common/rng.hpp"
#include "raw/raw_image.hpp"

namespace rawdiff {

/// Heteroscedastic Gaussian sensor noise: y ~ N(z, lambda_read + lambda_shot * z)
/// with z the clean signal in [0,1].
struct NoiseParams {
    double lambda_shot = 0.1;
    double lambda_read = 0.0;

    /// lambda_shot > 0, lambda_read >= 0, both finite.
    bool valid() const;
    double variance(double signal) const { return lambda_read + lambda_shot * signal; }

    bool operator==(const NoiseParams&) const = default;
};

inline constexpr double kLogShotMin = -2.302585092994046;   // log 0.1
inline constexpr double kLogShotMax = -1.1711829815029451;  // log 0.31
inline constexpr double kReadSlope = 1.5;
inline constexpr double kReadOffset = 0.05;
inline constexpr double kReadLogVariance = 0.5;

/// log(shot) ~ U(log 0.1, log 0.31); log(read) | log(shot) ~ N(1.5 log(shot) + 0.05, 0.5).
NoiseParams sample_noise_params(Rng& rng);

/// Conditional draw of log(read) for a given log(shot).
double sample_log_read(double log_shot, Rng& rng);

/// Adds independent noise to every sample of every plane. The result is not
/// clipped unless `clip` is set.
RawImage apply_noise(const RawImage& clean, const NoiseParams& params, Rng& rng, bool clip = false);

enum class PresetInterpretation { Linear, Log };

PresetInterpretation parse_preset_interpretation(const std::string& s);

/// Evaluation presets "0.1" -> (0.1, 0.2) and "0.3" -> (0.3, 0.5). With the log
/// interpretation the stated numbers are exponentiated.
NoiseParams preset_level(const std::string& level, PresetInterpretation interp = PresetInterpretation::Linear);

} // namespace rawdiff
