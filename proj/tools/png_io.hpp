#pragma once

#include <filesystem>

#include "hypermatch/image_io.hpp"

namespace hypermatch::tools {

/// 8-bit grayscale PNG; values above 255 are clamped.
void write_png_gray(const GrayImage& img, const std::filesystem::path& path);

/// Any PNG, converted to 8-bit grayscale.
GrayImage read_png_gray(const std::filesystem::path& path);

/// Reads a mask from .png or .pgm; nonzero pixels are anomalous.
MaskMatrix read_mask(const std::filesystem::path& path);

}  // namespace hypermatch::tools
