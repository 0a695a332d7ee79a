#pragma once

#include <array>
#include <string>

#include <json.hpp>

#include "tensor/tensor.hpp"

namespace rawdiff {

/// Linear-to-display transfer curve. Strictly monotone on [0,1] with fixed
/// points 0 and 1.
struct GammaCurve {
    enum class Kind { Srgb, Power, Linear };
    Kind kind = Kind::Srgb;
    double exponent = 2.2;  // Power only: display = linear^(1/exponent)

    double forward(double linear) const;
    double inverse(double display) const;

    bool operator==(const GammaCurve&) const = default;
};

struct IspParams {
    double exposure_gain = 1.0;
    double wb_red = 1.0;   // green gain is fixed at 1
    double wb_blue = 1.0;
    std::array<double, 9> ccm{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, rows sum to 1
    GammaCurve gamma;

    /// Throws UsageError when gains are non-positive or a CCM row does not sum to 1.
    void validate() const;

    bool operator==(const IspParams&) const = default;
};

void to_json(nlohmann::json& j, const GammaCurve& g);
void from_json(const nlohmann::json& j, GammaCurve& g);
void to_json(nlohmann::json& j, const IspParams& p);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, IspParams& p);

/// Bayer RGGB image packed as four quarter-resolution planes
/// [R, G_r, G_b, B] of shape [4, H/2, W/2].
class RawImage {
public:
    RawImage() = default;
    RawImage(Tensor planes, IspParams isp = {});

    static RawImage zeros(std::size_t height, std::size_t width, IspParams isp = {});

    /// Mosaic extents.
    std::size_t height() const { return planes_.dim(1) * 2; }
    std::size_t width() const { return planes_.dim(2) * 2; }
    std::size_t plane_height() const { return planes_.dim(1); }
    std::size_t plane_width() const { return planes_.dim(2); }

    const Tensor& planes() const { return planes_; }
    Tensor& planes() { return planes_; }
    const IspParams& isp() const { return isp_; }
    IspParams& isp() { return isp_; }

    bool operator==(const RawImage&) const = default;

private:
    Tensor planes_;
    IspParams isp_;
};

enum BayerChannel : std::size_t { kRed = 0, kGreenR = 1, kGreenB = 2, kBlue = 3 };

} // namespace rawdiff
