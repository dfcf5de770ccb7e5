#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace npshape {

/// Row-major 2-D pixel grid.
template <typename T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int r, int c) { return data_[index(r, c)]; }
  const T& operator()(int r, int c) const { return data_[index(r, c)]; }

  bool contains(int r, int c) const noexcept {
    return r >= 0 && c >= 0 && r < rows_ && c < cols_;
  }

  std::span<T> pixels() noexcept { return data_; }
  std::span<const T> pixels() const noexcept { return data_; }

  bool operator==(const Raster&) const = default;

 private:
  std::size_t index(int r, int c) const noexcept {
    return static_cast<std::size_t>(r) * cols_ + c;
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

/// 8-bit grayscale; the canonical pixel type of the pipeline.
using GrayImage = Raster<std::uint8_t>;
/// Foreground = 1, background = 0.
using BinaryMask = Raster<std::uint8_t>;
using RgbImage = Raster<Rgb>;

/// Number of non-zero pixels.
std::int64_t count_foreground(const BinaryMask& mask);

/// Linear min-max rescale of a 16-bit raster to 8 bits; a constant raster maps to 0.
GrayImage rescale_to_8bit(const Raster<std::uint16_t>& image);

}  // namespace npshape
