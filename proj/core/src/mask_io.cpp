#include "npshape/mask_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "npshape/digest.hpp"
#include "npshape/error.hpp"
#include "npshape/image_io.hpp"

namespace npshape::mask_io {

using nlohmann::json;

MaskRecord make_record(std::string id, std::string source_image_id, BinaryMask mask,
                       double predicted_iou, double stability_score) {
  MaskRecord record{std::move(id), std::move(source_image_id), std::move(mask), predicted_iou,
                    stability_score, 0};
  record.area_px = count_foreground(record.mask);
  return record;
}

void validate(const MaskRecord& record) {
  const std::string where = "mask '" + record.id + "': ";
  if (record.id.empty()) throw ValidationError("mask record with empty id");
  for (double v : {record.predicted_iou, record.stability_score}) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ValidationError(where + "confidence values must lie in [0,1]");
    }
  }
  const auto counted = count_foreground(record.mask);
  if (counted != record.area_px) {
    throw ValidationError(where + "area_px " + std::to_string(record.area_px) +
                          " does not match " + std::to_string(counted) + " foreground pixels");
  }
}

void validate(const FilterThresholds& t) {
  if (!std::isfinite(t.min_predicted_iou) || !std::isfinite(t.min_stability)) {
    throw ValidationError("filter thresholds must be finite");
  }
  if (t.min_area_px < 0) throw ValidationError("min_area_px must be >= 0");
}

std::vector<MaskRecord> filter_masks(std::span<const MaskRecord> records,
                                     const FilterThresholds& t) {
  validate(t);
  std::vector<MaskRecord> kept;
  for (const auto& r : records) {
    validate(r);
    if (r.predicted_iou >= t.min_predicted_iou && r.stability_score >= t.min_stability &&
        r.area_px >= t.min_area_px) {
      kept.push_back(r);
    }
  }
  return kept;
}

BoundingBox bbox_from_mask(const BinaryMask& mask) {
  const int rows = mask.rows(), cols = mask.cols();
  std::vector<std::uint8_t> col_any(static_cast<std::size_t>(cols), 0);
  BoundingBox box{-1, -1, -1, -1};
  const std::uint8_t* p = mask.pixels().data();
  for (int r = 0; r < rows; ++r, p += cols) {
    std::uint8_t any = 0;
    for (int c = 0; c < cols; ++c) {
      col_any[static_cast<std::size_t>(c)] |= p[c];
      any |= p[c];
    }
    if (any) {
      if (box.row_min < 0) box.row_min = r;
      box.row_max = r;
    }
  }
  if (box.row_max < 0) throw EmptyMaskError("mask has no foreground pixels");
  for (int c = 0; c < cols; ++c) {
    if (col_any[static_cast<std::size_t>(c)]) {
      if (box.col_min < 0) box.col_min = c;
      box.col_max = c;
    }
  }
  return box;
}

BoundingBox expand(const BoundingBox& box, int margin, int rows, int cols) {
  if (margin < 0) throw ValidationError("margin must be >= 0");
  return {std::max(0, box.row_min - margin), std::max(0, box.col_min - margin),
          std::min(rows - 1, box.row_max + margin), std::min(cols - 1, box.col_max + margin)};
}

bool touches_border(const BoundingBox& box, int rows, int cols) {
  return box.row_min == 0 || box.col_min == 0 || box.row_max == rows - 1 ||
         box.col_max == cols - 1;
}

const char* to_string(CropVariant variant) {
  switch (variant) {
    case CropVariant::raw_crop: return "raw_crop";
    case CropVariant::background_removed: return "background_removed";
    case CropVariant::binary_mask: return "binary_mask";
  }
  return "?";
}

CropVariant parse_crop_variant(const std::string& text) {
  if (text == "raw" || text == "raw_crop") return CropVariant::raw_crop;
  if (text == "nobg" || text == "background_removed") return CropVariant::background_removed;
  if (text == "mask" || text == "binary_mask") return CropVariant::binary_mask;
  throw ValidationError("unknown crop variant '" + text + "'");
}

namespace {

void fill_variant(ParticleCrop& crop, const GrayImage& source_pixels) {
  crop.pixels = GrayImage(crop.footprint.rows(), crop.footprint.cols());
  for (int r = 0; r < crop.pixels.rows(); ++r) {
    for (int c = 0; c < crop.pixels.cols(); ++c) {
      const bool inside = crop.footprint(r, c) != 0;
      switch (crop.variant) {
        case CropVariant::raw_crop: crop.pixels(r, c) = source_pixels(r, c); break;
        case CropVariant::background_removed:
          crop.pixels(r, c) = inside ? source_pixels(r, c) : 0;
          break;
        case CropVariant::binary_mask: crop.pixels(r, c) = inside ? 255 : 0; break;
      }
    }
  }
}

}  // namespace

ParticleCrop crop_particle(const GrayImage& image, const MaskRecord& record, CropVariant variant,
                           int margin) {
  if (image.rows() != record.mask.rows() || image.cols() != record.mask.cols()) {
    throw ValidationError("mask '" + record.id + "': raster is " +
                          std::to_string(record.mask.rows()) + "x" +
                          std::to_string(record.mask.cols()) + " but image is " +
                          std::to_string(image.rows()) + "x" + std::to_string(image.cols()));
  }
  const BoundingBox box =
      expand(bbox_from_mask(record.mask), margin, image.rows(), image.cols());

  ParticleCrop crop;
  crop.mask_id = record.id;
  crop.bbox = box;
  crop.variant = variant;
  crop.footprint = BinaryMask(box.height(), box.width());
  GrayImage raw(box.height(), box.width());
  for (int r = 0; r < box.height(); ++r) {
    for (int c = 0; c < box.width(); ++c) {
      raw(r, c) = image(box.row_min + r, box.col_min + c);
      crop.footprint(r, c) = record.mask(box.row_min + r, box.col_min + c) ? 1 : 0;
    }
  }
  fill_variant(crop, raw);
  return crop;
}

ParticleCrop with_variant(const ParticleCrop& crop, CropVariant variant) {
  if (variant == crop.variant) return crop;
  if (crop.variant != CropVariant::raw_crop && variant == CropVariant::raw_crop) {
    throw ValidationError("crop '" + crop.mask_id + "': cannot recover raw pixels from " +
                          to_string(crop.variant));
  }
  ParticleCrop out = crop;
  out.variant = variant;
  fill_variant(out, crop.pixels);
  return out;
}

std::vector<MaskRecord> split_components(const MaskRecord& record) {
  const int rows = record.mask.rows();
  const int cols = record.mask.cols();
  Raster<int> label(rows, cols, -1);
  std::vector<BinaryMask> parts;
  std::vector<std::pair<int, int>> stack;
  for (int r0 = 0; r0 < rows; ++r0) {
    for (int c0 = 0; c0 < cols; ++c0) {
      if (!record.mask(r0, c0) || label(r0, c0) >= 0) continue;
      const int k = static_cast<int>(parts.size());
      parts.emplace_back(rows, cols);
      stack.assign(1, {r0, c0});
      label(r0, c0) = k;
      while (!stack.empty()) {
        auto [r, c] = stack.back();
        stack.pop_back();
        parts[k](r, c) = 1;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (record.mask.contains(rr, cc) && record.mask(rr, cc) && label(rr, cc) < 0) {
              label(rr, cc) = k;
              stack.emplace_back(rr, cc);
            }
          }
        }
      }
    }
  }
  if (parts.size() <= 1) return {record};
  std::vector<MaskRecord> out;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.push_back(make_record(record.id + "_c" + std::to_string(k), record.source_image_id,
                              std::move(parts[k]), record.predicted_iou,
                              record.stability_score));
  }
  return out;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError("mask_iou: raster sizes differ");
  }
  std::int64_t inter = 0, uni = 0;
  auto pa = a.pixels();
  auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const bool x = pa[i] != 0, y = pb[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<OverlapPair> find_overlaps(std::span<const MaskRecord> records, double threshold) {
  std::vector<BoundingBox> boxes;
  boxes.reserve(records.size());
  for (const auto& r : records) boxes.push_back(bbox_from_mask(r.mask));
  std::vector<OverlapPair> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = i + 1; j < records.size(); ++j) {
      const auto& a = boxes[i];
      const auto& b = boxes[j];
      if (a.row_max < b.row_min || b.row_max < a.row_min || a.col_max < b.col_min ||
          b.col_max < a.col_min) {
        continue;
      }
      const double iou = mask_iou(records[i].mask, records[j].mask);
      if (iou > threshold) out.push_back({records[i].id, records[j].id, iou});
    }
  }
  return out;
}

std::vector<std::int64_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::int64_t> counts;
  std::uint8_t current = 0;
  std::int64_t run = 0;
  for (auto v : mask.pixels()) {
    const std::uint8_t bit = v ? 1 : 0;
    if (bit != current) {
      counts.push_back(run);
      run = 0;
      current = bit;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

BinaryMask rle_decode(int rows, int cols, std::span<const std::int64_t> counts) {
  if (rows <= 0 || cols <= 0) throw FormatError("rle size must be positive");
  BinaryMask mask(rows, cols);
  auto px = mask.pixels();
  std::size_t pos = 0;
  std::uint8_t bit = 0;
  for (auto n : counts) {
    if (n < 0) throw FormatError("rle counts must be non-negative");
    if (pos + static_cast<std::size_t>(n) > px.size()) {
      throw FormatError("rle counts exceed " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    std::fill_n(px.begin() + static_cast<std::ptrdiff_t>(pos), n, bit);
    pos += static_cast<std::size_t>(n);
    bit ^= 1;
  }
  if (pos != px.size()) {
    throw FormatError("rle counts cover " + std::to_string(pos) + " of " +
                      std::to_string(px.size()) + " pixels");
  }
  return mask;
}

MaskSet read_mask_set(const std::filesystem::path& manifest) {
  const auto file = std::filesystem::is_directory(manifest) ? manifest / "masks.json" : manifest;
  const auto dir = file.parent_path();
  json doc;
  try {
    doc = json::parse(read_text_file(file));
  } catch (const json::exception& e) {
    throw FormatError("mask manifest '" + file.string() + "': " + e.what());
  }
  MaskSet set;
  try {
    set.source_image = doc.at("source_image").get<std::string>();
    int rows = -1, cols = -1;
    for (const auto& entry : doc.at("masks")) {
      const auto id = entry.at("id").get<std::string>();
      BinaryMask mask;
      if (entry.contains("rle")) {
        const auto& rle = entry.at("rle");
        const auto size = rle.at("size").get<std::vector<int>>();
        if (size.size() != 2) throw FormatError("mask '" + id + "': rle size must be [H,W]");
        mask = rle_decode(size[0], size[1], rle.at("counts").get<std::vector<std::int64_t>>());
      } else if (entry.contains("file")) {
        mask = read_mask_png(dir / entry.at("file").get<std::string>());
      } else {
        throw FormatError("mask '" + id + "': entry needs 'file' or 'rle'");
      }
      if (rows < 0) {
        rows = mask.rows();
        cols = mask.cols();
      } else if (mask.rows() != rows || mask.cols() != cols) {
        throw ValidationError("mask '" + id + "': raster size differs from other masks");
      }
      auto record = make_record(id, set.source_image, std::move(mask),
                                entry.at("predicted_iou").get<double>(),
                                entry.at("stability_score").get<double>());
      if (entry.contains("area")) {
        record.area_px = entry.at("area").get<std::int64_t>();
      }
      validate(record);
      set.masks.push_back(std::move(record));
    }
  } catch (const json::exception& e) {
    throw FormatError("mask manifest '" + file.string() + "': " + e.what());
  }
  return set;
}

void write_mask_set(const MaskSet& set, const std::filesystem::path& dir, MaskEncoding encoding) {
  std::filesystem::create_directories(dir);
  json masks = json::array();
  for (const auto& record : set.masks) {
    validate(record);
    json entry = {{"id", record.id},
                  {"predicted_iou", record.predicted_iou},
                  {"stability_score", record.stability_score},
                  {"area", record.area_px}};
    if (encoding == MaskEncoding::rle) {
      entry["rle"] = {{"size", {record.mask.rows(), record.mask.cols()}},
                      {"counts", rle_encode(record.mask)}};
    } else {
      const auto name = record.id + ".png";
      write_mask_png(record.mask, dir / name);
      entry["file"] = name;
    }
    masks.push_back(std::move(entry));
  }
  json doc = {{"source_image", set.source_image}, {"masks", std::move(masks)}};
  write_text_file(dir / "masks.json", doc.dump(1));
}

}  // namespace npshape::mask_io
