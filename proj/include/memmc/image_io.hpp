#pragma once

#include <string>

#include "memmc/patchgrid.hpp"

namespace memmc {

/// Decodes a PNG or JPEG file (detected by magic bytes) into float planes
/// scaled to [0,1]. Grayscale files yield 1 channel, color files 3.
Image<float> read_image(const std::string& path);

/// Writes an 8-bit PNG; 1 plane -> grayscale, 3 planes -> RGB. Values are
/// clamped to [0,1] before quantization.
void write_png(const std::string& path, const Image<float>& image);

}  // namespace memmc
