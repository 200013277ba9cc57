#pragma once

#include <filesystem>

#include "gazefit/render.hpp"

namespace gazefit {

/// Writes binary PGM (P5, maxval 255); intensities are quantized by rounding,
/// background-sentinel pixels are written as 0.
void save_pgm(const Image& image, const std::filesystem::path& path);

/// Reads binary PGM (P5) back to intensities in [0, 1].
Image load_pgm(const std::filesystem::path& path);

} // namespace gazefit
