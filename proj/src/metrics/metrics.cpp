#include "metrics/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "common/error.hpp"

namespace rawdiff {

double psnr_raw(const RawImage& a, const RawImage& b, double peak) {
    if (a.planes().shape() != b.planes().shape())
        throw UsageError("psnr: extent mismatch " + shape_string(a.planes().shape()) + " vs " +
                         shape_string(b.planes().shape()));
    if (!(peak > 0))
        throw UsageError("psnr: peak must be positive");
    const auto x = a.planes().values();
    const auto y = b.planes().values();
    // Neumaier summation keeps uniform-error cases exact.
    double sum = 0.0, carry = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        const double term = d * d, next = sum + term;
        carry += std::abs(sum) >= term ? (sum - next) + term : (term - next) + sum;
        sum = next;
    }
    const double mse = (sum + carry) / static_cast<double>(x.size());
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double psnr_report(double psnr) {
    return std::isnan(psnr) ? psnr : std::min(psnr, kPsnrReportCap);
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        w[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (auto& v : w)
        v /= sum;
    return w;
}

// Separable 'valid' filtering of one channel.
std::vector<double> filter_valid(const double* img, std::size_t h, std::size_t w, const std::vector<double>& k) {
    const std::size_t n = k.size();
    const std::size_t oh = h - n + 1, ow = w - n + 1;
    std::vector<double> rows(h * ow);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                s += k[i] * img[y * w + x + i];
            rows[y * ow + x] = s;
        }
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                s += k[i] * rows[(y + i) * ow + x];
            out[y * ow + x] = s;
        }
    return out;
}

} // namespace

SsimTerms ssim_terms(const RgbImage& a, const RgbImage& b, const SsimOptions& opt) {
    if (a.channels().shape() != b.channels().shape())
        throw UsageError("ssim: extent mismatch " + shape_string(a.channels().shape()) + " vs " +
                         shape_string(b.channels().shape()));
    if (opt.window < 1 || opt.window % 2 == 0 || !(opt.sigma > 0))
        throw UsageError("ssim: window must be odd and sigma positive");
    const std::size_t h = a.height(), w = a.width(), n = static_cast<std::size_t>(opt.window);
    if (h < n || w < n)
        throw UsageError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the " +
                         std::to_string(n) + "x" + std::to_string(n) + " window");
    const auto k = gaussian_window(opt.window, opt.sigma);
    const double c1 = (opt.k1 * opt.range) * (opt.k1 * opt.range);
    const double c2 = (opt.k2 * opt.range) * (opt.k2 * opt.range);
    const std::size_t plane = h * w;
    SsimTerms total;
    std::vector<double> xx(plane), yy(plane), xy(plane);
    for (std::size_t c = 0; c < 3; ++c) {
        const double* x = a.channels().data() + c * plane;
        const double* y = b.channels().data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w, k);
        const auto my = filter_valid(y, h, w, k);
        const auto sxx = filter_valid(xx.data(), h, w, k);
        const auto syy = filter_valid(yy.data(), h, w, k);
        const auto sxy = filter_valid(xy.data(), h, w, k);
        double s = 0.0, l = 0.0, cs = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            const double li = (2 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
            const double csi = (2 * cov + c2) / (vx + vy + c2);
            l += li;
            cs += csi;
            s += li * csi;
        }
        const double count = static_cast<double>(mx.size());
        total.ssim += s / count;
        total.luminance += l / count;
        total.contrast_structure += cs / count;
    }
    total.ssim /= 3.0;
    total.luminance /= 3.0;
    total.contrast_structure /= 3.0;
    return total;
}

double ssim_rgb(const RgbImage& a, const RgbImage& b, const SsimOptions& opt) {
    return ssim_terms(a, b, opt).ssim;
}

} // namespace rawdiff
