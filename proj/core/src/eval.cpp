#include "npshape/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "npshape/digest.hpp"
#include "npshape/error.hpp"

namespace npshape::eval {

using nlohmann::json;

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

ConfusionMatrix confusion(std::span<const std::string> y_true, std::span<const std::string> y_pred,
                          std::span<const std::string> class_map) {
  if (y_true.size() != y_pred.size()) {
    throw ValidationError("confusion: " + std::to_string(y_true.size()) + " true labels vs " +
                          std::to_string(y_pred.size()) + " predictions");
  }
  ConfusionMatrix cm{{class_map.begin(), class_map.end()}, {}};
  const std::size_t k = cm.classes();
  cm.counts.assign(k * k, 0);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < k; ++i) index.emplace(class_map[i], i);
  auto lookup = [&](const std::string& label) {
    auto it = index.find(label);
    if (it == index.end()) throw ValidationError("label '" + label + "' is not in the class map");
    return it->second;
  };
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ++cm.counts[lookup(y_true[i]) * k + lookup(y_pred[i])];
  }
  return cm;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

std::vector<ClassMetric> precision_recall_f1(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  if (cm.counts.size() != k * k) throw ValidationError("confusion matrix shape mismatch");
  std::vector<ClassMetric> out;
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t tp = cm.at(c, c), row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    ClassMetric m;
    m.label = cm.class_map[c];
    m.support = row;
    if (row > 0) {
      m.recall = static_cast<double>(tp) / static_cast<double>(row);
    } else {
      m.zero_division = true;
    }
    if (col > 0) {
      m.precision = static_cast<double>(tp) / static_cast<double>(col);
    } else {
      m.zero_division = true;
    }
    m.f1 = f1_score(m.precision, m.recall);
    out.push_back(std::move(m));
  }
  return out;
}

MacroAverage macro_average(std::span<const ClassMetric> metrics) {
  MacroAverage avg;
  if (metrics.empty()) return avg;
  for (const auto& m : metrics) {
    avg.recall += m.recall;
    avg.precision += m.precision;
    avg.f1 += m.f1;
  }
  const double n = static_cast<double>(metrics.size());
  avg.recall /= n;
  avg.precision /= n;
  avg.f1 /= n;
  return avg;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) return 0.0;
  std::int64_t diag = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) diag += cm.at(i, i);
  return static_cast<double>(diag) / static_cast<double>(total);
}

double macro_f1(std::span<const std::string> y_true, std::span<const std::string> y_pred,
                std::span<const std::string> class_map) {
  const auto metrics = precision_recall_f1(confusion(y_true, y_pred, class_map));
  return macro_average(metrics).f1;
}

bool harmonic_consistent(const ReportRow& row, double tolerance) {
  return std::abs(row.f1 - f1_score(row.precision, row.recall)) <= tolerance;
}

std::vector<ReportRow> rows_from_metrics(const std::string& dataset, const std::string& method,
                                         std::span<const ClassMetric> metrics) {
  std::vector<ReportRow> rows;
  for (const auto& m : metrics) {
    rows.push_back({dataset, m.label, method, m.recall, m.precision, m.f1, m.support, false});
  }
  return rows;
}

namespace {

ReportRow row_from_json(const json& j) {
  ReportRow row;
  row.dataset = j.at("dataset").get<std::string>();
  row.label = j.at("class").get<std::string>();
  row.method = j.at("method").get<std::string>();
  row.recall = j.at("recall").get<double>();
  row.precision = j.at("precision").get<double>();
  row.f1 = j.at("f1").get<double>();
  if (j.contains("support") && !j.at("support").is_null()) {
    row.support = j.at("support").get<std::int64_t>();
  }
  for (double v : {row.recall, row.precision, row.f1}) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ValidationError("row " + row.dataset + "/" + row.label + "/" + row.method +
                            ": metrics must lie in [0,1]");
    }
  }
  return row;
}

json row_to_json(const ReportRow& row) {
  json j = {{"dataset", row.dataset},     {"class", row.label}, {"method", row.method},
            {"recall", row.recall},       {"precision", row.precision},
            {"f1", row.f1},               {"harmonic_mismatch", row.harmonic_mismatch}};
  j["support"] = row.support ? json(*row.support) : json(nullptr);
  return j;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::vector<ReportRow> parse_baseline_rows(const std::string& text) {
  std::vector<ReportRow> rows;
  try {
    const auto doc = json::parse(text);
    const json& list = doc.is_object() ? doc.at("rows") : doc;
    for (const auto& j : list) {
      auto row = row_from_json(j);
      row.harmonic_mismatch = !harmonic_consistent(row);
      rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("baseline rows: ") + e.what());
  }
  return rows;
}

std::vector<ReportRow> load_baseline_rows(const std::filesystem::path& path) {
  return parse_baseline_rows(read_text_file(path));
}

std::vector<MethodAverage> method_averages(const EvalReport& report) {
  std::vector<MethodAverage> out;
  for (const auto& row : report.rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const MethodAverage& m) { return m.method == row.method; });
    if (it == out.end()) {
      out.push_back({row.method, {}, 0});
      it = out.end() - 1;
    }
    it->average.recall += row.recall;
    it->average.precision += row.precision;
    it->average.f1 += row.f1;
    ++it->rows;
  }
  for (auto& m : out) {
    const double n = static_cast<double>(m.rows);
    m.average.recall /= n;
    m.average.precision /= n;
    m.average.f1 /= n;
  }
  return out;
}

std::string render_markdown(const EvalReport& report) {
  std::string md = "| Dataset | Class | Method | Recall | Precision | F1 |\n";
  md += "|---|---|---|---:|---:|---:|\n";
  for (const auto& row : report.rows) {
    md += "| " + row.dataset + " | " + row.label + " | " + row.method + " | " +
          fixed2(row.recall) + " | " + fixed2(row.precision) + " | " + fixed2(row.f1) + " |\n";
  }
  for (const auto& avg : method_averages(report)) {
    md += "| Average |  | " + avg.method + " | " + fixed2(avg.average.recall) + " | " +
          fixed2(avg.average.precision) + " | " + fixed2(avg.average.f1) + " |\n";
  }
  std::vector<const ReportRow*> flagged;
  for (const auto& row : report.rows) {
    if (row.harmonic_mismatch) flagged.push_back(&row);
  }
  if (!flagged.empty()) {
    md += "\nRows whose F1 differs from 2PR/(P+R) by more than " + fixed2(kHarmonicTolerance) +
          " (kept as given):\n";
    for (const auto* row : flagged) {
      md += "- " + row->dataset + " / " + row->label + " / " + row->method + ": F1 " +
            fixed2(row->f1) + " vs " + fixed2(f1_score(row->precision, row->recall)) + "\n";
    }
  }
  if (!report.notes.empty()) {
    md += "\nNotes:\n";
    for (const auto& note : report.notes) md += "- " + note + "\n";
  }
  return md;
}

std::string render_json(const EvalReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) rows.push_back(row_to_json(row));
  json averages = json::array();
  for (const auto& avg : method_averages(report)) {
    averages.push_back({{"method", avg.method},
                        {"recall", avg.average.recall},
                        {"precision", avg.average.precision},
                        {"f1", avg.average.f1},
                        {"rows", avg.rows}});
  }
  const json doc = {{"rows", rows}, {"averages", averages}, {"notes", report.notes}};
  return doc.dump(1);
}

EvalReport report_from_json(const std::string& text) {
  EvalReport report;
  try {
    const auto doc = json::parse(text);
    for (const auto& j : doc.at("rows")) {
      auto row = row_from_json(j);
      row.harmonic_mismatch = j.value("harmonic_mismatch", false);
      report.rows.push_back(std::move(row));
    }
    if (doc.contains("notes")) report.notes = doc.at("notes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("report json: ") + e.what());
  }
  return report;
}

Palette default_palette() {
  constexpr Rgb kRed{230, 25, 25}, kGreen{25, 200, 25}, kBlue{30, 60, 240};
  return {{"cube", kBlue},   {"pyramid", kGreen},           {"circle", kGreen},
          {"triangle", kBlue}, {"truncated_triangle", kRed}, {"dot", kGreen},
          {"blob", kRed},    {"non_dot", kRed}};
}

Rgb color_for(const std::string& label, const Palette& palette) {
  if (auto it = palette.find(label); it != palette.end()) return it->second;
  static constexpr Rgb kFallback[] = {{255, 165, 0}, {160, 32, 240}, {0, 200, 200},
                                      {240, 240, 0}, {255, 105, 180}, {139, 69, 19}};
  std::uint32_t h = 2166136261u;
  for (unsigned char ch : label) h = (h ^ ch) * 16777619u;
  return kFallback[h % std::size(kFallback)];
}

RgbImage render_overlay(const GrayImage& image, std::span<const OverlayBox> boxes,
                        const Palette& palette) {
  RgbImage out(image.rows(), image.cols());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const auto v = image.pixels()[i];
    out.pixels()[i] = {v, v, v};
  }
  for (const auto& item : boxes) {
    const auto& b = item.box;
    if (!image.contains(b.row_min, b.col_min) || !image.contains(b.row_max, b.col_max)) {
      throw ValidationError("overlay box for '" + item.label + "' lies outside the image");
    }
    const Rgb color = color_for(item.label, palette);
    for (int t = 0; t < kStrokeWidth; ++t) {
      const int top = std::min(b.row_min + t, b.row_max);
      const int bottom = std::max(b.row_max - t, b.row_min);
      const int left = std::min(b.col_min + t, b.col_max);
      const int right = std::max(b.col_max - t, b.col_min);
      for (int c = b.col_min; c <= b.col_max; ++c) {
        out(top, c) = color;
        out(bottom, c) = color;
      }
      for (int r = b.row_min; r <= b.row_max; ++r) {
        out(r, left) = color;
        out(r, right) = color;
      }
    }
  }
  return out;
}

}  // namespace npshape::eval
