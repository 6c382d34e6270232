#pragma once

#include <filesystem>

#include "perceptlab/core/types.hpp"

namespace perceptlab {

// 8-bit PNG only. Grayscale maps to 1 channel, everything else to RGB
// (palette expanded, alpha dropped, 16-bit narrowed).
ImageTensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageTensor& img);

} // namespace perceptlab
