#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "raw/isp.hpp"
#include "raw/raw_image.hpp"

namespace rawdiff {

/// Reads an 8- or 16-bit PNG or binary PPM (P6) into [0,1] values.
/// Gray and alpha PNGs are expanded/stripped to RGB.
RgbImage read_rgb(const std::string& path);

/// Writes PNG or PPM (chosen by extension) at 8 or 16 bits per channel.
/// Values are clipped to [0,1] and rounded.
void write_rgb(const std::string& path, const RgbImage& image, int bit_depth = 8);

enum class RawDtype : std::uint8_t { F32 = 0, F64 = 1 };

/// "RDRW" container: magic, version u32, H u32, W u32, dtype u8, the four
/// planes little-endian row-major, then a u32-length-prefixed JSON IspParams.
std::vector<std::uint8_t> encode_raw(const RawImage& raw, RawDtype dtype = RawDtype::F64);
RawImage decode_raw(std::span<const std::uint8_t> bytes, const std::string& context = "raw file");
void write_raw(const std::string& path, const RawImage& raw, RawDtype dtype = RawDtype::F64);
RawImage read_raw(const std::string& path);

bool has_extension(const std::string& path, const std::string& ext);

} // namespace rawdiff
