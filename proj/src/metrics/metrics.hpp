#pragma once

#include "raw/isp.hpp"
#include "raw/raw_image.hpp"

namespace rawdiff {

inline constexpr double kPsnrReportCap = 99.0;

/// 10 log10(peak^2 / MSE) over all four planes; +inf when the images match.
double psnr_raw(const RawImage& a, const RawImage& b, double peak = 1.0);

/// Finite value for reports: min(psnr, 99).
double psnr_report(double psnr);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};

/// Mean local SSIM over the valid window positions, averaged over channels.
double ssim_rgb(const RgbImage& a, const RgbImage& b, const SsimOptions& opt = {});

/// Per-term means: luminance l, and contrast-structure cs, with ssim the
/// mean of their product (not the product of means).
struct SsimTerms {
    double ssim = 0.0;
    double luminance = 0.0;
    double contrast_structure = 0.0;
};
SsimTerms ssim_terms(const RgbImage& a, const RgbImage& b, const SsimOptions& opt = {});

} // namespace rawdiff
