#pragma once

#include <filesystem>
#include <vector>

#include "advaug/image.hpp"

namespace advaug::data {

// Decodes PNG (any bit depth, palette, alpha composited over white) and
// binary or ASCII PNM (P2, P3, P5, P6) to luminance in [0,1].
Image read_image(const std::filesystem::path& path);

// 8-bit grayscale PNG; values are clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);

bool is_supported_image(const std::filesystem::path& path);

// Images laid out left to right with a 4-pixel gray gutter, rows top to bottom.
Image make_grid(const std::vector<std::vector<Image>>& rows);

}  // namespace advaug::data
