#include "raw/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include <png.h>

#include "common/binio.hpp"
#include "common/error.hpp"

namespace rawdiff {

namespace {

constexpr char kRawMagic[] = "RDRW";
constexpr std::uint32_t kRawVersion = 1;

std::uint32_t quantize(double v, std::uint32_t maxval) {
    return static_cast<std::uint32_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports through callbacks; keep the message for the thrown error
// instead of letting the default handler print it.
thread_local std::string png_message;

void png_error_sink(png_structp png, png_const_charp msg) {
    png_message = msg ? msg : "unknown libpng error";
    png_longjmp(png, 1);
}

void png_warning_sink(png_structp, png_const_charp) {}

RgbImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp)
        throw DataError("cannot open '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_sink, png_warning_sink);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng initialisation failed");
    }
    std::vector<std::vector<png_byte>> rows;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("'" + path + "' is not a readable PNG: " + png_message);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_bit_depth(png, info) < 8)
        png_set_expand(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const std::size_t W = png_get_image_width(png, info);
    const std::size_t H = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    rows.assign(H, std::vector<png_byte>(png_get_rowbytes(png, info)));
    for (auto& r : rows)
        row_ptrs.push_back(r.data());
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    RgbImage img(H, W);
    const double maxval = depth == 16 ? 65535.0 : 255.0;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t k = x * 3 + c;
                const double v = depth == 16 ? (rows[y][2 * k] << 8 | rows[y][2 * k + 1]) : rows[y][k];
                img.at(c, y, x) = v / maxval;
            }
    return img;
}

void write_png(const std::string& path, const RgbImage& image, int bit_depth) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp)
        throw DataError("cannot open '" + path + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_sink, png_warning_sink);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialisation failed");
    }
    const std::size_t H = image.height(), W = image.width();
    const std::size_t bytes = bit_depth == 16 ? 2 : 1;
    std::vector<std::vector<png_byte>> rows(H, std::vector<png_byte>(W * 3 * bytes));
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const auto q = quantize(image.at(c, y, x), bit_depth == 16 ? 65535 : 255);
                const std::size_t k = (x * 3 + c) * bytes;
                if (bytes == 2) {
                    rows[y][k] = static_cast<png_byte>(q >> 8);
                    rows[y][k + 1] = static_cast<png_byte>(q & 0xff);
                } else {
                    rows[y][k] = static_cast<png_byte>(q);
                }
            }
    std::vector<png_bytep> row_ptrs;
    for (auto& r : rows)
        row_ptrs.push_back(r.data());
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed writing PNG '" + path + "': " + png_message);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), bit_depth,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

RgbImage read_ppm(const std::string& path) {
    const auto data = binio::read_file(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n')
                    ++pos;
            } else if (std::isspace(data[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < data.size() && !std::isspace(data[pos]))
            t.push_back(static_cast<char>(data[pos++]));
        return t;
    };
    if (token() != "P6")
        throw DataError("'" + path + "' is not a binary PPM (P6)");
    std::size_t W = 0, H = 0;
    unsigned long maxval = 0;
    try {
        W = std::stoul(token());
        H = std::stoul(token());
        maxval = std::stoul(token());
    } catch (const std::exception&) {
        throw DataError("'" + path + "': malformed PPM header");
    }
    ++pos;  // single whitespace before raster
    if (W == 0 || H == 0 || maxval == 0 || maxval > 65535)
        throw DataError("'" + path + "': unsupported PPM header");
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    if (data.size() < pos + W * H * 3 * bytes)
        throw DataError("'" + path + "': truncated PPM raster");
    RgbImage img(H, W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t k = pos + ((y * W + x) * 3 + c) * bytes;
                const double v = bytes == 2 ? (data[k] << 8 | data[k + 1]) : data[k];
                img.at(c, y, x) = v / static_cast<double>(maxval);
            }
    return img;
}

void write_ppm(const std::string& path, const RgbImage& image, int bit_depth) {
    const std::size_t H = image.height(), W = image.width();
    const std::uint32_t maxval = bit_depth == 16 ? 65535 : 255;
    const std::string header = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n" + std::to_string(maxval) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const auto q = quantize(image.at(c, y, x), maxval);
                if (bit_depth == 16)
                    out.push_back(static_cast<std::uint8_t>(q >> 8));
                out.push_back(static_cast<std::uint8_t>(q & 0xff));
            }
    binio::write_file(path, out);
}

} // namespace

bool has_extension(const std::string& path, const std::string& ext) {
    auto e = std::filesystem::path(path).extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return e == ext;
}

RgbImage read_rgb(const std::string& path) {
    if (has_extension(path, ".png"))
        return read_png(path);
    if (has_extension(path, ".ppm"))
        return read_ppm(path);
    throw DataError("unsupported RGB image format: '" + path + "' (expected .png or .ppm)");
}

void write_rgb(const std::string& path, const RgbImage& image, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16)
        throw UsageError("bit depth must be 8 or 16");
    const std::filesystem::path p(path);
    if (p.has_parent_path())
        std::filesystem::create_directories(p.parent_path());
    if (has_extension(path, ".png"))
        return write_png(path, image, bit_depth);
    if (has_extension(path, ".ppm"))
        return write_ppm(path, image, bit_depth);
    throw UsageError("unsupported RGB output format: '" + path + "' (expected .png or .ppm)");
}

std::vector<std::uint8_t> encode_raw(const RawImage& raw, RawDtype dtype) {
    binio::Writer w;
    w.magic(kRawMagic);
    w.u32(kRawVersion);
    w.u32(static_cast<std::uint32_t>(raw.height()));
    w.u32(static_cast<std::uint32_t>(raw.width()));
    w.u8(static_cast<std::uint8_t>(dtype));
    for (double v : raw.planes().values()) {
        if (dtype == RawDtype::F32)
            w.f32(static_cast<float>(v));
        else
            w.f64(v);
    }
    w.string_u32(nlohmann::json(raw.isp()).dump());
    return w.take();
}

RawImage decode_raw(std::span<const std::uint8_t> bytes, const std::string& context) {
    binio::Reader r(bytes, context);
    if (!r.magic(kRawMagic))
        throw DataError(context + ": bad magic (expected RDRW)");
    if (const auto v = r.u32(); v != kRawVersion)
        throw DataError(context + ": unsupported version " + std::to_string(v));
    const std::size_t H = r.u32(), W = r.u32();
    if (H == 0 || W == 0 || H % 2 || W % 2)
        throw DataError(context + ": invalid extents " + std::to_string(H) + "x" + std::to_string(W));
    const auto dtype = r.u8();
    if (dtype > 1)
        throw DataError(context + ": unknown dtype tag " + std::to_string(dtype));
    Tensor planes({4, H / 2, W / 2});
    for (auto& v : planes.values())
        v = dtype == 0 ? static_cast<double>(r.f32()) : r.f64();
    IspParams isp;
    try {
        isp = nlohmann::json::parse(r.string_u32()).get<IspParams>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(context + ": bad ISP metadata: " + e.what());
    }
    return RawImage(std::move(planes), isp);
}

void write_raw(const std::string& path, const RawImage& raw, RawDtype dtype) {
    binio::write_file(path, encode_raw(raw, dtype));
}

RawImage read_raw(const std::string& path) {
    const auto bytes = binio::read_file(path);
    return decode_raw(bytes, path);
}

} // namespace rawdiff
