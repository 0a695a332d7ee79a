#include "raw/isp.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace rawdiff {

namespace {

double clip01(double v) {
    return std::clamp(v, 0.0, 1.0);
}

// Zero-padded 3x3 correlation of a single [H, W] plane.
Tensor conv3x3(const Tensor& plane, const std::array<double, 9>& k) {
    const std::size_t H = plane.dim(0), W = plane.dim(1);
    Tensor out({H, W});
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            double s = 0.0;
            for (int dy = -1; dy <= 1; ++dy) {
                const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H))
                    continue;
                for (int dx = -1; dx <= 1; ++dx) {
                    const auto sx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W))
                        continue;
                    s += k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] *
                         plane[static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)];
                }
            }
            out[y * W + x] = s;
        }
    }
    return out;
}

// RGGB: 0 = red, 1 = green, 2 = blue
int bayer_color(std::size_t y, std::size_t x) {
    if (y % 2 == 0)
        return x % 2 == 0 ? 0 : 1;
    return x % 2 == 0 ? 1 : 2;
}

constexpr std::array<double, 9> kGreenKernel{0, 0.25, 0, 0.25, 1, 0.25, 0, 0.25, 0};
constexpr std::array<double, 9> kRedBlueKernel{0.25, 0.5, 0.25, 0.5, 1, 0.5, 0.25, 0.5, 0.25};

} // namespace

RgbImage::RgbImage(Tensor channels) : channels_(std::move(channels)) {
    if (channels_.rank() != 3 || channels_.dim(0) != 3)
        throw UsageError("rgb image must be [3, H, W], got " + shape_string(channels_.shape()));
}

RgbImage::RgbImage(std::size_t height, std::size_t width, double fill) : channels_({3, height, width}, fill) {}

RawImage mosaic_pack(const Tensor& mosaic, const IspParams& isp) {
    if (mosaic.rank() != 2)
        throw UsageError("mosaic must be [H, W], got " + shape_string(mosaic.shape()));
    const std::size_t H = mosaic.dim(0), W = mosaic.dim(1);
    if (H % 2 || W % 2)
        throw UsageError("mosaic extents must be even, got " + std::to_string(H) + "x" + std::to_string(W));
    Tensor planes({4, H / 2, W / 2});
    for (std::size_t y = 0; y < H / 2; ++y) {
        for (std::size_t x = 0; x < W / 2; ++x) {
            planes.at(kRed, y, x) = mosaic[(2 * y) * W + 2 * x];
            planes.at(kGreenR, y, x) = mosaic[(2 * y) * W + 2 * x + 1];
            planes.at(kGreenB, y, x) = mosaic[(2 * y + 1) * W + 2 * x];
            planes.at(kBlue, y, x) = mosaic[(2 * y + 1) * W + 2 * x + 1];
        }
    }
    return RawImage(std::move(planes), isp);
}

Tensor mosaic_unpack(const RawImage& raw) {
    const std::size_t H = raw.height(), W = raw.width();
    const Tensor& planes = raw.planes();
    Tensor mosaic({H, W});
    for (std::size_t y = 0; y < H / 2; ++y) {
        for (std::size_t x = 0; x < W / 2; ++x) {
            mosaic[(2 * y) * W + 2 * x] = planes.at(kRed, y, x);
            mosaic[(2 * y) * W + 2 * x + 1] = planes.at(kGreenR, y, x);
            mosaic[(2 * y + 1) * W + 2 * x] = planes.at(kGreenB, y, x);
            mosaic[(2 * y + 1) * W + 2 * x + 1] = planes.at(kBlue, y, x);
        }
    }
    return mosaic;
}

Tensor demosaic_bilinear(const Tensor& mosaic) {
    const std::size_t H = mosaic.dim(0), W = mosaic.dim(1);
    Tensor rgb({3, H, W});
    for (int color = 0; color < 3; ++color) {
        Tensor samples({H, W}), mask({H, W});
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                if (bayer_color(y, x) == color) {
                    samples[y * W + x] = mosaic[y * W + x];
                    mask[y * W + x] = 1.0;
                }
        const auto& kernel = color == 1 ? kGreenKernel : kRedBlueKernel;
        const Tensor num = conv3x3(samples, kernel);
        const Tensor den = conv3x3(mask, kernel);
        for (std::size_t i = 0; i < H * W; ++i)
            rgb[static_cast<std::size_t>(color) * H * W + i] = num[i] / den[i];
    }
    return rgb;
}

RgbImage isp_render(const RawImage& raw, const IspParams& isp) {
    isp.validate();
    RawImage scaled = raw;
    const std::array<double, 4> gains{isp.wb_red, 1.0, 1.0, isp.wb_blue};
    Tensor& planes = scaled.planes();
    const std::size_t P = raw.plane_height() * raw.plane_width();
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < P; ++i) {
            double& v = planes[c * P + i];
            v = clip01(v * isp.exposure_gain * gains[c]);
        }
    const Tensor linear = demosaic_bilinear(mosaic_unpack(scaled));
    const std::size_t H = raw.height(), W = raw.width(), N = H * W;
    RgbImage out(H, W);
    Tensor& dst = out.channels();
    const auto& m = isp.ccm;
    for (std::size_t i = 0; i < N; ++i) {
        const double r = linear[i], g = linear[N + i], b = linear[2 * N + i];
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = m[c * 3] * r + m[c * 3 + 1] * g + m[c * 3 + 2] * b;
            dst[c * N + i] = isp.gamma.forward(clip01(v));
        }
    }
    return out;
}

std::array<double, 9> invert_3x3(const std::array<double, 9>& m) {
    const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                       m[2] * (m[3] * m[7] - m[4] * m[6]);
    if (std::abs(det) < 1e-12)
        throw UsageError("isp: color correction matrix is singular");
    const double inv = 1.0 / det;
    return {(m[4] * m[8] - m[5] * m[7]) * inv, (m[2] * m[7] - m[1] * m[8]) * inv, (m[1] * m[5] - m[2] * m[4]) * inv,
            (m[5] * m[6] - m[3] * m[8]) * inv, (m[0] * m[8] - m[2] * m[6]) * inv, (m[2] * m[3] - m[0] * m[5]) * inv,
            (m[3] * m[7] - m[4] * m[6]) * inv, (m[1] * m[6] - m[0] * m[7]) * inv, (m[0] * m[4] - m[1] * m[3]) * inv};
}

RawImage invert_isp(const RgbImage& rgb, const IspParams& isp) {
    isp.validate();
    const auto inv = invert_3x3(isp.ccm);
    const std::size_t H = rgb.height(), W = rgb.width(), N = H * W;
    if (H % 2 || W % 2)
        throw UsageError("invert_isp: image extents must be even, got " + std::to_string(H) + "x" + std::to_string(W));
    const Tensor& src = rgb.channels();
    const std::array<double, 3> gains{isp.exposure_gain * isp.wb_red, isp.exposure_gain,
                                      isp.exposure_gain * isp.wb_blue};
    Tensor mosaic({H, W});
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t i = y * W + x;
            const double r = isp.gamma.inverse(clip01(src[i]));
            const double g = isp.gamma.inverse(clip01(src[N + i]));
            const double b = isp.gamma.inverse(clip01(src[2 * N + i]));
            const auto c = static_cast<std::size_t>(bayer_color(y, x));
            const double lin = inv[c * 3] * r + inv[c * 3 + 1] * g + inv[c * 3 + 2] * b;
            mosaic[i] = clip01(lin / gains[c]);
        }
    }
    return mosaic_pack(mosaic, isp);
}

} // namespace rawdiff
