#include "irview/png_io.hpp"

#include <png.h>

#include <cstring>
#include <string>

#include "irview/errors.hpp"

namespace irview {

namespace {

class PngImage {
 public:
  PngImage() {
    std::memset(&image_, 0, sizeof(image_));
    image_.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image_); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
  png_image* get() { return &image_; }

 private:
  png_image image_;
};

}  // namespace

GrayImage8 read_gray_png(const std::filesystem::path& path) {
  PngImage png;
  if (!png_image_begin_read_from_file(png.get(), path.c_str()))
    throw IoError("read_gray_png: " + path.string() + ": " + png.get()->message);
  png.get()->format = PNG_FORMAT_GRAY;
  GrayImage8 img;
  img.width = static_cast<int>(png.get()->width);
  img.height = static_cast<int>(png.get()->height);
  img.pixels.resize(PNG_IMAGE_SIZE(*png.get()));
  if (!png_image_finish_read(png.get(), nullptr, img.pixels.data(), 0, nullptr))
    throw IoError("read_gray_png: " + path.string() + ": " + png.get()->message);
  return img;
}

void write_gray_png(const std::filesystem::path& path, const GrayImage8& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height))
    throw ShapeError("write_gray_png: pixel count does not match dimensions");
  PngImage png;
  png.get()->width = static_cast<png_uint_32>(image.width);
  png.get()->height = static_cast<png_uint_32>(image.height);
  png.get()->format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(png.get(), path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw IoError("write_gray_png: " + path.string() + ": " + png.get()->message);
}

void write_rgb_png(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
    throw ShapeError("write_rgb_png: pixel count does not match dimensions");
  PngImage png;
  png.get()->width = static_cast<png_uint_32>(width);
  png.get()->height = static_cast<png_uint_32>(height);
  png.get()->format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(png.get(), path.c_str(), 0, rgb.data(), 0, nullptr))
    throw IoError("write_rgb_png: " + path.string() + ": " + png.get()->message);
}

}  // namespace irview
