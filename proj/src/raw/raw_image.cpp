#include "raw/raw_image.hpp"

#include <cmath>

#include "common/error.hpp"

namespace rawdiff {

double GammaCurve::forward(double v) const {
    switch (kind) {
    case Kind::Srgb:
        return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
    case Kind::Power:
        return v <= 0.0 ? 0.0 : std::pow(v, 1.0 / exponent);
    case Kind::Linear:
        return v;
    }
    return v;
}

double GammaCurve::inverse(double v) const {
    switch (kind) {
    case Kind::Srgb:
        return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
    case Kind::Power:
        return v <= 0.0 ? 0.0 : std::pow(v, exponent);
    case Kind::Linear:
        return v;
    }
    return v;
}

void IspParams::validate() const {
    if (!(exposure_gain > 0.0) || !(wb_red > 0.0) || !(wb_blue > 0.0))
        throw UsageError("isp: gains must be positive");
    for (int r = 0; r < 3; ++r) {
        const double s = ccm[r * 3] + ccm[r * 3 + 1] + ccm[r * 3 + 2];
        if (std::abs(s - 1.0) > 1e-9)
            throw UsageError("isp: ccm row " + std::to_string(r) + " sums to " + std::to_string(s) + ", expected 1");
    }
    if (gamma.kind == GammaCurve::Kind::Power && !(gamma.exponent > 0.0))
        throw UsageError("isp: gamma exponent must be positive");
}

void to_json(nlohmann::json& j, const GammaCurve& g) {
    switch (g.kind) {
    case GammaCurve::Kind::Srgb:
        j = {{"kind", "srgb"}};
        break;
    case GammaCurve::Kind::Power:
        j = {{"kind", "power"}, {"exponent", g.exponent}};
        break;
    case GammaCurve::Kind::Linear:
        j = {{"kind", "linear"}};
        break;
    }
}

void from_json(const nlohmann::json& j, GammaCurve& g) {
    const auto kind = j.value("kind", std::string("srgb"));
    if (kind == "srgb")
        g.kind = GammaCurve::Kind::Srgb;
    else if (kind == "power")
        g.kind = GammaCurve::Kind::Power;
    else if (kind == "linear")
        g.kind = GammaCurve::Kind::Linear;
    else
        throw DataError("unknown gamma kind '" + kind + "'");
    g.exponent = j.value("exponent", 2.2);
}

void to_json(nlohmann::json& j, const IspParams& p) {
    j = {{"exposure_gain", p.exposure_gain},
         {"wb_red", p.wb_red},
         {"wb_blue", p.wb_blue},
         {"ccm", p.ccm},
         {"gamma", p.gamma}};
}

void from_json(const nlohmann::json& j, IspParams& p) {
    p.exposure_gain = j.value("exposure_gain", p.exposure_gain);
    p.wb_red = j.value("wb_red", p.wb_red);
    p.wb_blue = j.value("wb_blue", p.wb_blue);
    if (j.contains("ccm"))
        p.ccm = j.at("ccm").get<std::array<double, 9>>();
    if (j.contains("gamma"))
        p.gamma = j.at("gamma").get<GammaCurve>();
}

RawImage::RawImage(Tensor planes, IspParams isp) : planes_(std::move(planes)), isp_(std::move(isp)) {
    if (planes_.rank() != 3 || planes_.dim(0) != 4)
        throw UsageError("raw image planes must be [4, H/2, W/2], got " + shape_string(planes_.shape()));
}

RawImage RawImage::zeros(std::size_t height, std::size_t width, IspParams isp) {
    if (height == 0 || width == 0 || height % 2 || width % 2)
        throw UsageError("raw image extents must be positive and even, got " + std::to_string(height) + "x" +
                         std::to_string(width));
    return RawImage(Tensor({4, height / 2, width / 2}), std::move(isp));
}

} // namespace rawdiff
