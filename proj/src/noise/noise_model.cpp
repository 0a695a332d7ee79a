#include "noise/noise_model.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace rawdiff {

bool NoiseParams::valid() const {
    return std::isfinite(lambda_shot) && std::isfinite(lambda_read) && lambda_shot > 0.0 && lambda_read >= 0.0;
}

double sample_log_read(double log_shot, Rng& rng) {
    return rng.normal(kReadSlope * log_shot + kReadOffset, std::sqrt(kReadLogVariance));
}

NoiseParams sample_noise_params(Rng& rng) {
    const double log_shot = rng.uniform(kLogShotMin, kLogShotMax);
    const double log_read = sample_log_read(log_shot, rng);
    return {std::exp(log_shot), std::exp(log_read)};
}

RawImage apply_noise(const RawImage& clean, const NoiseParams& params, Rng& rng, bool clip) {
    if (!params.valid())
        throw UsageError("noise parameters invalid: lambda_shot=" + std::to_string(params.lambda_shot) +
                         " lambda_read=" + std::to_string(params.lambda_read));
    RawImage noisy = clean;
    for (auto& v : noisy.planes().values()) {
        // Negative signal (possible on unclipped inputs) contributes no shot variance.
        const double var = params.lambda_read + params.lambda_shot * std::max(v, 0.0);
        v += std::sqrt(var) * rng.normal();
        if (clip)
            v = std::clamp(v, 0.0, 1.0);
    }
    return noisy;
}

PresetInterpretation parse_preset_interpretation(const std::string& s) {
    if (s == "linear")
        return PresetInterpretation::Linear;
    if (s == "log")
        return PresetInterpretation::Log;
    throw UsageError("preset interpretation must be 'linear' or 'log', got '" + s + "'");
}

NoiseParams preset_level(const std::string& level, PresetInterpretation interp) {
    NoiseParams p;
    if (level == "0.1")
        p = {0.1, 0.2};
    else if (level == "0.3")
        p = {0.3, 0.5};
    else
        throw UsageError("unknown noise level '" + level + "' (expected 0.1 or 0.3)");
    if (interp == PresetInterpretation::Log)
        p = {std::exp(p.lambda_shot), std::exp(p.lambda_read)};
    return p;
}

} // namespace rawdiff
