#pragma once

#include <filesystem>

#include "stainqc/image.hpp"

namespace stainqc {

/// Lossless RGB PNG (8-bit, 3 channel).
void write_png_rgb(const std::filesystem::path& path, const ImageU8& img);

/// 1-bit grayscale PNG; any nonzero input pixel becomes white.
void write_png_bitmap(const std::filesystem::path& path, const ImageU8& mask);

/// Reads a PNG into 8-bit gray (channels=1) or RGB (channels=3); palettes and
/// sub-byte depths are expanded, alpha is stripped.
ImageU8 read_png(const std::filesystem::path& path);

} // namespace stainqc
