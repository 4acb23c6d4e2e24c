#include "irview/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "irview/errors.hpp"

namespace irview {

Raster::Raster(std::vector<float> values) : values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(kImagePixels))
    throw ShapeError("raster: expected " + std::to_string(kImagePixels) + " values, got " +
                     std::to_string(values_.size()));
}

Raster normalize_image(const GrayImage8& raw) {
  if (raw.width != kImageSize || raw.height != kImageSize ||
      raw.pixels.size() != static_cast<std::size_t>(kImagePixels))
    throw ShapeError("normalize_image: expected 64x64, got " + std::to_string(raw.width) + "x" +
                     std::to_string(raw.height));
  std::vector<float> out(raw.pixels.size());
  std::transform(raw.pixels.begin(), raw.pixels.end(), out.begin(),
                 [](std::uint8_t v) { return static_cast<float>(static_cast<double>(v) / 127.5 - 1.0); });
  return Raster(std::move(out));
}

GrayImage8 denormalize_image(const Raster& raster) {
  GrayImage8 img{kImageSize, kImageSize, std::vector<std::uint8_t>(kImagePixels)};
  auto src = raster.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double level = std::round((static_cast<double>(src[i]) + 1.0) * 127.5);
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
  }
  return img;
}

}  // namespace irview
