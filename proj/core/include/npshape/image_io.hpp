#pragma once

#include <filesystem>

#include "npshape/raster.hpp"

namespace npshape {

/// Reads any PNG as 8-bit grayscale. Colour inputs are converted to luminance;
/// 16-bit inputs are min-max rescaled per image.
GrayImage read_gray_png(const std::filesystem::path& path);
void write_gray_png(const GrayImage& image, const std::filesystem::path& path);
void write_rgb_png(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_rgb_png(const std::filesystem::path& path);

/// Mask PNGs hold 0/255; any non-zero pixel is foreground.
BinaryMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const BinaryMask& mask, const std::filesystem::path& path);

}  // namespace npshape
