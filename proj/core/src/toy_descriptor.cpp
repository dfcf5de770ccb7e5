#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "npshape/embed.hpp"

namespace npshape::embed {
namespace {

constexpr int kHuCount = 7;
constexpr int kRadialBins = 16;
constexpr int kAngleBins = 16;
constexpr int kBlockGrid = 5;
constexpr double kHuLogFloor = 12.0;

static_assert(kHuCount + kRadialBins + kAngleBins + kBlockGrid * kBlockGrid == kToyDim);

struct Moments {
  double m00 = 0.0, cx = 0.0, cy = 0.0;
  std::array<double, kHuCount> hu{};
};

Moments intensity_moments(const Raster<double>& img) {
  Moments m;
  double sx = 0.0, sy = 0.0;
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < img.cols(); ++c) {
      const double v = img(r, c);
      m.m00 += v;
      sx += c * v;
      sy += r * v;
    }
  }
  m.cx = sx / m.m00;
  m.cy = sy / m.m00;

  double mu20 = 0, mu02 = 0, mu11 = 0, mu30 = 0, mu03 = 0, mu21 = 0, mu12 = 0;
  for (int r = 0; r < img.rows(); ++r) {
    const double y = r - m.cy;
    for (int c = 0; c < img.cols(); ++c) {
      const double v = img(r, c);
      if (v == 0.0) continue;
      const double x = c - m.cx;
      mu20 += x * x * v;
      mu02 += y * y * v;
      mu11 += x * y * v;
      mu30 += x * x * x * v;
      mu03 += y * y * y * v;
      mu21 += x * x * y * v;
      mu12 += x * y * y * v;
    }
  }
  const double n2 = std::pow(m.m00, 2.0);
  const double n3 = std::pow(m.m00, 2.5);
  const double e20 = mu20 / n2, e02 = mu02 / n2, e11 = mu11 / n2;
  const double e30 = mu30 / n3, e03 = mu03 / n3, e21 = mu21 / n3, e12 = mu12 / n3;

  const double a = e30 + e12, b = e21 + e03;
  const double c = e30 - 3 * e12, d = 3 * e21 - e03;
  m.hu[0] = e20 + e02;
  m.hu[1] = (e20 - e02) * (e20 - e02) + 4 * e11 * e11;
  m.hu[2] = c * c + d * d;
  m.hu[3] = a * a + b * b;
  m.hu[4] = c * a * (a * a - 3 * b * b) + d * b * (3 * a * a - b * b);
  m.hu[5] = (e20 - e02) * (a * a - b * b) + 4 * e11 * a * b;
  m.hu[6] = d * a * (a * a - 3 * b * b) - c * b * (3 * a * a - b * b);
  return m;
}

int otsu_threshold(const GrayImage& raster) {
  std::array<double, 256> hist{};
  for (auto v : raster.pixels()) hist[v] += 1.0;
  const double total = static_cast<double>(raster.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];

  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int threshold = -1;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mean0 = sum0 / w0;
    const double mean1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (mean0 - mean1) * (mean0 - mean1);
    if (between > best) {
      best = between;
      threshold = t;
    }
  }
  return threshold < 0 ? 0 : threshold;
}

// 0/1 indicator of the largest 8-connected component above the Otsu level.
Raster<std::uint8_t> largest_component(const GrayImage& raster) {
  const int t = otsu_threshold(raster);
  const int rows = raster.rows(), cols = raster.cols();
  Raster<int> label(rows, cols, -1);
  std::vector<std::size_t> sizes;
  std::vector<std::pair<int, int>> stack;
  for (int r0 = 0; r0 < rows; ++r0) {
    for (int c0 = 0; c0 < cols; ++c0) {
      if (raster(r0, c0) <= t || label(r0, c0) >= 0) continue;
      const int k = static_cast<int>(sizes.size());
      sizes.push_back(0);
      label(r0, c0) = k;
      stack.assign(1, {r0, c0});
      while (!stack.empty()) {
        auto [r, c] = stack.back();
        stack.pop_back();
        ++sizes[static_cast<std::size_t>(k)];
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (raster.contains(rr, cc) && raster(rr, cc) > t && label(rr, cc) < 0) {
              label(rr, cc) = k;
              stack.emplace_back(rr, cc);
            }
          }
        }
      }
    }
  }
  Raster<std::uint8_t> out(rows, cols);
  if (sizes.empty()) return out;
  const int keep =
      static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out(r, c) = label(r, c) == keep ? 1 : 0;
  }
  return out;
}

// Separable [1 4 6 4 1]/16 smoothing, zero outside the raster.
Raster<double> smooth(const Raster<std::uint8_t>& indicator) {
  static constexpr std::array<double, 5> k{1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  const int rows = indicator.rows(), cols = indicator.cols();
  Raster<double> tmp(rows, cols), out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int i = -2; i <= 2; ++i) {
        if (c + i >= 0 && c + i < cols) s += k[i + 2] * indicator(r, c + i);
      }
      tmp(r, c) = s;
    }
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int i = -2; i <= 2; ++i) {
        if (r + i >= 0 && r + i < rows) s += k[i + 2] * tmp(r + i, c);
      }
      out(r, c) = s;
    }
  }
  return out;
}

std::array<double, kAngleBins> contour_angles(const GrayImage& raster) {
  std::array<double, kAngleBins> hist{};
  const auto comp = largest_component(raster);
  const auto soft = smooth(comp);
  auto at = [&](int r, int c) { return soft.contains(r, c) ? soft(r, c) : 0.0; };
  auto inside = [&](int r, int c) { return comp.contains(r, c) && comp(r, c) != 0; };
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  for (int r = 0; r < comp.rows(); ++r) {
    for (int c = 0; c < comp.cols(); ++c) {
      if (!inside(r, c)) continue;
      if (inside(r - 1, c) && inside(r + 1, c) && inside(r, c - 1) && inside(r, c + 1)) continue;
      const double gx = (at(r - 1, c + 1) + 2 * at(r, c + 1) + at(r + 1, c + 1)) -
                        (at(r - 1, c - 1) + 2 * at(r, c - 1) + at(r + 1, c - 1));
      const double gy = (at(r + 1, c - 1) + 2 * at(r + 1, c) + at(r + 1, c + 1)) -
                        (at(r - 1, c - 1) + 2 * at(r - 1, c) + at(r - 1, c + 1));
      if (gx == 0.0 && gy == 0.0) continue;
      double theta = std::atan2(gy, gx);
      if (theta < 0) theta += kTwoPi;
      int bin = static_cast<int>(theta / kTwoPi * kAngleBins);
      hist[static_cast<std::size_t>(std::min(bin, kAngleBins - 1))] += 1.0;
    }
  }
  return hist;
}

// Rounds a centroid coordinate to the nearest pixel, stable under
// floating-point noise for exact integer translations.
int snap(double v) { return static_cast<int>(std::floor(std::round(v * 1e6) / 1e6 + 0.5)); }

}  // namespace

std::vector<float> toy_descriptor(const GrayImage& raster) {
  std::vector<float> out(kToyDim, 0.0f);
  if (raster.empty()) return out;
  const auto peak = *std::max_element(raster.pixels().begin(), raster.pixels().end());
  if (peak == 0) return out;

  Raster<double> img(raster.rows(), raster.cols());
  for (std::size_t i = 0; i < raster.size(); ++i) {
    img.pixels()[i] = raster.pixels()[i] / static_cast<double>(peak);
  }
  const Moments m = intensity_moments(img);
  std::size_t k = 0;

  for (double h : m.hu) {
    const double a = std::abs(h);
    const double v = a > 0.0 ? (std::log10(a) + kHuLogFloor) / kHuLogFloor : 0.0;
    out[k++] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }

  {
    std::array<double, kRadialBins> radial{};
    const double reach = std::max(raster.rows(), raster.cols()) / 2.0 + 0.5;
    const double width = reach / kRadialBins;
    for (int r = 0; r < img.rows(); ++r) {
      for (int c = 0; c < img.cols(); ++c) {
        const double v = img(r, c);
        if (v == 0.0) continue;
        const double dist = std::hypot(c - m.cx, r - m.cy);
        const int bin = std::min(static_cast<int>(dist / width), kRadialBins - 1);
        radial[static_cast<std::size_t>(bin)] += v;
      }
    }
    const double top = *std::max_element(radial.begin(), radial.end());
    for (double v : radial) out[k++] = static_cast<float>(top > 0 ? v / top : 0.0);
  }

  {
    const auto angles = contour_angles(raster);
    const auto top_it = std::max_element(angles.begin(), angles.end());
    const double top = *top_it;
    const auto shift = static_cast<std::size_t>(top_it - angles.begin());
    for (std::size_t i = 0; i < angles.size(); ++i) {
      const double v = angles[(i + shift) % angles.size()];
      out[k++] = static_cast<float>(top > 0 ? v / top : 0.0);
    }
  }

  {
    const int rows = img.rows(), cols = img.cols();
    const int r0 = snap(m.cy) - rows / 2;
    const int c0 = snap(m.cx) - cols / 2;
    for (int br = 0; br < kBlockGrid; ++br) {
      const int ra = r0 + br * rows / kBlockGrid, rb = r0 + (br + 1) * rows / kBlockGrid;
      for (int bc = 0; bc < kBlockGrid; ++bc) {
        const int ca = c0 + bc * cols / kBlockGrid, cb = c0 + (bc + 1) * cols / kBlockGrid;
        double sum = 0.0;
        for (int r = std::max(ra, 0); r < std::min(rb, rows); ++r) {
          for (int c = std::max(ca, 0); c < std::min(cb, cols); ++c) sum += img(r, c);
        }
        const double area = static_cast<double>(rb - ra) * (cb - ca);
        out[k++] = static_cast<float>(area > 0 ? sum / area : 0.0);
      }
    }
  }
  for (auto& v : out) v *= static_cast<float>(kToyScale);
  return out;
}

}  // namespace npshape::embed
