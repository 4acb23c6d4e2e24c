#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace irview {

inline constexpr int kImageSize = 64;
inline constexpr int kImagePixels = kImageSize * kImageSize;

/// 8-bit single-channel image as stored on disk.
struct GrayImage8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  bool operator==(const GrayImage8&) const = default;
};

/// Normalized 64x64 grayscale raster, values in [-1, 1], row-major.
class Raster {
 public:
  Raster() : values_(kImagePixels, -1.0f) {}
  explicit Raster(std::vector<float> values);

  std::span<const float> values() const noexcept { return values_; }
  std::span<float> values() noexcept { return values_; }
  float at(int row, int col) const { return values_[static_cast<std::size_t>(row * kImageSize + col)]; }

  bool operator==(const Raster&) const = default;

 private:
  std::vector<float> values_;
};

/// raw / 127.5 - 1, elementwise. Throws ShapeError unless the image is 64x64.
Raster normalize_image(const GrayImage8& raw);

/// Inverse of normalize_image with rounding to the nearest 8-bit level (values clamped to [0,255]).
GrayImage8 denormalize_image(const Raster& raster);

}  // namespace irview
