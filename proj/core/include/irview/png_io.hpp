#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "irview/image.hpp"

namespace irview {

GrayImage8 read_gray_png(const std::filesystem::path& path);
void write_gray_png(const std::filesystem::path& path, const GrayImage8& image);

/// Interleaved 8-bit RGB.
void write_rgb_png(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);

}  // namespace irview
