#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npshape/mask_io.hpp"
#include "npshape/raster.hpp"

namespace npshape::eval {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::vector<std::string> class_map;
  std::vector<std::int64_t> counts;  // K x K row-major

  std::size_t classes() const noexcept { return class_map.size(); }
  std::int64_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * classes() + pred];
  }
  std::int64_t total() const;
};

/// Throws ValidationError on length mismatch or labels outside class_map.
ConfusionMatrix confusion(std::span<const std::string> y_true, std::span<const std::string> y_pred,
                          std::span<const std::string> class_map);

struct ClassMetric {
  std::string label;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  /// Set when a denominator was zero and the affected value was reported as 0.
  bool zero_division = false;
};

/// Harmonic mean 2PR/(P+R); 0 when P+R = 0.
double f1_score(double precision, double recall);

std::vector<ClassMetric> precision_recall_f1(const ConfusionMatrix& cm);

struct MacroAverage {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

/// Unweighted mean over the given classes.
MacroAverage macro_average(std::span<const ClassMetric> metrics);

double accuracy(const ConfusionMatrix& cm);

double macro_f1(std::span<const std::string> y_true, std::span<const std::string> y_pred,
                std::span<const std::string> class_map);

/// One (dataset, class, method) line of a comparison table.
struct ReportRow {
  std::string dataset;
  std::string label;
  std::string method;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  std::optional<std::int64_t> support;
  /// |f1 - 2PR/(P+R)| exceeds the tolerance; the printed values are kept.
  bool harmonic_mismatch = false;

  bool operator==(const ReportRow&) const = default;
};

inline constexpr double kHarmonicTolerance = 0.02;

bool harmonic_consistent(const ReportRow& row, double tolerance = kHarmonicTolerance);

std::vector<ReportRow> rows_from_metrics(const std::string& dataset, const std::string& method,
                                         std::span<const ClassMetric> metrics);

/// Static rows from a JSON array of {dataset, class, method, recall, precision, f1}.
/// Rows failing the harmonic-mean identity are flagged, not corrected.
std::vector<ReportRow> load_baseline_rows(const std::filesystem::path& path);
std::vector<ReportRow> parse_baseline_rows(const std::string& json_text);

struct MethodAverage {
  std::string method;
  MacroAverage average;
  std::size_t rows = 0;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  /// Free-form notes (e.g. overlapping masks that were not deduplicated).
  std::vector<std::string> notes;
};

/// Unweighted mean of each method's rows, methods in first-appearance order.
std::vector<MethodAverage> method_averages(const EvalReport& report);

/// Table with one row per (dataset, class, method) plus one Average row per
/// method, values rounded to 2 decimals. An empty report renders the header only.
std::string render_markdown(const EvalReport& report);
std::string render_json(const EvalReport& report);
EvalReport report_from_json(const std::string& json_text);

struct OverlayBox {
  mask_io::BoundingBox box;
  std::string label;
};

using Palette = std::map<std::string, Rgb>;

/// cube blue, pyramid green, circle green, triangle blue,
/// truncated_triangle red, dot green, blob/non_dot red.
Palette default_palette();

/// Palette colour, or a fixed fallback sequence keyed by label text.
Rgb color_for(const std::string& label, const Palette& palette);

inline constexpr int kStrokeWidth = 2;

/// Draws each box with a 2-px stroke inside its bounds, in input order (later
/// boxes on top), over a gray-to-RGB copy of `image`.
RgbImage render_overlay(const GrayImage& image, std::span<const OverlayBox> boxes,
                        const Palette& palette = default_palette());

}  // namespace npshape::eval
