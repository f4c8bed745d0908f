#include "rhrseg/image_io.hpp"

#include <png.h>

#include <cstring>
#include <string>

#include "rhrseg/errors.hpp"

namespace rhrseg {

namespace {

std::vector<std::uint8_t> read_png(const std::filesystem::path& path,
                                   png_uint_32 format, int& height, int& width) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IOError("cannot read " + path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IOError("cannot decode " + path.string() + ": " + msg);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return buffer;
}

void write(const std::filesystem::path& path, png_uint_32 format, int height,
           int width, const std::vector<std::uint8_t>& pixels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw IOError("cannot write " + path.string() + ": " + image.message);
  }
}

}  // namespace

RgbImage read_rgb_png(const std::filesystem::path& path) {
  RgbImage img;
  img.pixels = read_png(path, PNG_FORMAT_RGB, img.height, img.width);
  return img;
}

GrayImage read_gray_png(const std::filesystem::path& path) {
  GrayImage img;
  img.pixels = read_png(path, PNG_FORMAT_GRAY, img.height, img.width);
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write(path, PNG_FORMAT_RGB, image.height, image.width, image.pixels);
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  write(path, PNG_FORMAT_GRAY, image.height, image.width, image.pixels);
}

}  // namespace rhrseg
