#pragma once

#include "raw/raw_image.hpp"
#include "tensor/tensor.hpp"

namespace rawdiff {

/// Planar RGB image, tensor [3, H, W].
class RgbImage {
public:
    RgbImage() = default;
    explicit RgbImage(Tensor channels);
    RgbImage(std::size_t height, std::size_t width, double fill = 0.0);

    std::size_t height() const { return channels_.dim(1); }
    std::size_t width() const { return channels_.dim(2); }
    const Tensor& channels() const { return channels_; }
    Tensor& channels() { return channels_; }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return channels_.at(c, y, x); }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return channels_.at(c, y, x); }

    bool operator==(const RgbImage&) const = default;

private:
    Tensor channels_;
};

/// Splits an RGGB mosaic [H, W] into planes; H and W must be even.
RawImage mosaic_pack(const Tensor& mosaic, const IspParams& isp = {});
/// Inverse of mosaic_pack.
Tensor mosaic_unpack(const RawImage& raw);

/// Bilinear demosaic of an RGGB mosaic [H, W] -> [3, H, W] using fixed 3x3
/// kernels. Each color is a zero-padded convolution of its masked samples,
/// normalized by the same convolution of the mask, so interior pixels get the
/// textbook bilinear weights and borders average only existing samples.
Tensor demosaic_bilinear(const Tensor& mosaic);

/// exposure gain -> white balance -> clip -> demosaic -> CCM -> clip -> gamma.
RgbImage isp_render(const RawImage& raw, const IspParams& isp);
inline RgbImage isp_render(const RawImage& raw) { return isp_render(raw, raw.isp()); }

/// inverse gamma -> inverse CCM -> inverse gains -> Bayer subsampling -> clip.
/// Throws UsageError for a singular CCM.
RawImage invert_isp(const RgbImage& rgb, const IspParams& isp);

/// 3x3 row-major inverse; throws UsageError when singular.
std::array<double, 9> invert_3x3(const std::array<double, 9>& m);

} // namespace rawdiff
