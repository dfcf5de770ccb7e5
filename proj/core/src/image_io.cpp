#include "npshape/image_io.hpp"

#include <png.h>

#include <cstring>
#include <string>

#include "npshape/error.hpp"

namespace npshape {
namespace {

struct PngImage {
  png_image image{};
  PngImage() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

[[noreturn]] void fail(const std::filesystem::path& path, const png_image& image) {
  throw FormatError("png '" + path.string() + "': " + image.message);
}

void begin_read(PngImage& png, const std::filesystem::path& path) {
  if (!png_image_begin_read_from_file(&png.image, path.string().c_str())) {
    fail(path, png.image);
  }
}

template <typename T>
void write_png(const Raster<T>& image, std::uint32_t format, int channels,
               const std::filesystem::path& path) {
  if (image.empty()) throw ValidationError("cannot write an empty raster to " + path.string());
  PngImage png;
  png.image.width = static_cast<png_uint_32>(image.cols());
  png.image.height = static_cast<png_uint_32>(image.rows());
  png.image.format = format;
  if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, image.pixels().data(),
                               image.cols() * channels, nullptr)) {
    fail(path, png.image);
  }
}

}  // namespace

GrayImage read_gray_png(const std::filesystem::path& path) {
  PngImage png;
  begin_read(png, path);
  const int rows = static_cast<int>(png.image.height);
  const int cols = static_cast<int>(png.image.width);
  if (png.image.format & PNG_FORMAT_FLAG_LINEAR) {
    Raster<std::uint16_t> wide(rows, cols);
    png.image.format = PNG_FORMAT_LINEAR_Y;
    if (!png_image_finish_read(&png.image, nullptr, wide.pixels().data(), 0, nullptr)) {
      fail(path, png.image);
    }
    return rescale_to_8bit(wide);
  }
  GrayImage out(rows, cols);
  png.image.format = PNG_FORMAT_GRAY;
  if (!png_image_finish_read(&png.image, nullptr, out.pixels().data(), 0, nullptr)) {
    fail(path, png.image);
  }
  return out;
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
  PngImage png;
  begin_read(png, path);
  RgbImage out(static_cast<int>(png.image.height), static_cast<int>(png.image.width));
  png.image.format = PNG_FORMAT_RGB;
  if (!png_image_finish_read(&png.image, nullptr, out.pixels().data(), 0, nullptr)) {
    fail(path, png.image);
  }
  return out;
}

void write_gray_png(const GrayImage& image, const std::filesystem::path& path) {
  write_png(image, PNG_FORMAT_GRAY, 1, path);
}

void write_rgb_png(const RgbImage& image, const std::filesystem::path& path) {
  static_assert(sizeof(Rgb) == 3);
  write_png(image, PNG_FORMAT_RGB, 3, path);
}

BinaryMask read_mask_png(const std::filesystem::path& path) {
  GrayImage gray = read_gray_png(path);
  for (auto& v : gray.pixels()) v = v != 0 ? 1 : 0;
  return gray;
}

void write_mask_png(const BinaryMask& mask, const std::filesystem::path& path) {
  GrayImage gray(mask.rows(), mask.cols());
  auto src = mask.pixels();
  auto dst = gray.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] ? 255 : 0;
  write_gray_png(gray, path);
}

}  // namespace npshape
