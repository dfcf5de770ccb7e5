#include "npshape/raster.hpp"

#include <algorithm>
#include <cmath>

namespace npshape {

std::int64_t count_foreground(const BinaryMask& mask) {
  return std::count_if(mask.pixels().begin(), mask.pixels().end(),
                       [](std::uint8_t v) { return v != 0; });
}

GrayImage rescale_to_8bit(const Raster<std::uint16_t>& image) {
  GrayImage out(image.rows(), image.cols());
  if (image.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(image.pixels().begin(), image.pixels().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi <= lo) return out;
  const double scale = 255.0 / (hi - lo);
  auto src = image.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<std::uint8_t>(std::lround((src[i] - lo) * scale));
  }
  return out;
}

}  // namespace npshape
