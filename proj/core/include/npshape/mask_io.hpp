#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "npshape/raster.hpp"

namespace npshape::mask_io {

/// One segmentation mask with the segmenter's confidence metadata.
///
/// `mask` spans the full source image. `area_px` must equal the number of
/// foreground pixels; use make_record() to have it computed.
struct MaskRecord {
  std::string id;
  std::string source_image_id;
  BinaryMask mask;
  double predicted_iou = 0.0;
  double stability_score = 0.0;
  std::int64_t area_px = 0;

  bool operator==(const MaskRecord&) const = default;
};

MaskRecord make_record(std::string id, std::string source_image_id, BinaryMask mask,
                       double predicted_iou, double stability_score);

/// Throws ValidationError naming the record id if an invariant is broken.
void validate(const MaskRecord& record);

struct FilterThresholds {
  double min_predicted_iou = 0.95;
  double min_stability = 0.95;
  std::int64_t min_area_px = 500;
};

void validate(const FilterThresholds& thresholds);

/// Records meeting every threshold (inclusive), in input order.
std::vector<MaskRecord> filter_masks(std::span<const MaskRecord> records,
                                     const FilterThresholds& thresholds);

/// Inclusive pixel bounds.
struct BoundingBox {
  int row_min = 0;
  int col_min = 0;
  int row_max = 0;
  int col_max = 0;

  int height() const noexcept { return row_max - row_min + 1; }
  int width() const noexcept { return col_max - col_min + 1; }
  bool contains(int r, int c) const noexcept {
    return r >= row_min && r <= row_max && c >= col_min && c <= col_max;
  }
  bool operator==(const BoundingBox&) const = default;
};

/// Tightest axis-aligned box around the foreground. Throws EmptyMaskError.
BoundingBox bbox_from_mask(const BinaryMask& mask);

/// Grows the box by `margin` on every side, clamped to a rows x cols image.
BoundingBox expand(const BoundingBox& box, int margin, int rows, int cols);

bool touches_border(const BoundingBox& box, int rows, int cols);

enum class CropVariant { raw_crop, background_removed, binary_mask };

const char* to_string(CropVariant variant);
/// Accepts the CLI spellings raw|nobg|mask as well as the enum names.
CropVariant parse_crop_variant(const std::string& text);

struct ParticleCrop {
  std::string mask_id;
  GrayImage pixels;
  BoundingBox bbox;
  CropVariant variant = CropVariant::raw_crop;
  /// Mask restricted to bbox (0/1), kept so later stages can derive other variants.
  BinaryMask footprint;
};

/// Crops `image` to the mask's bounding box (optionally grown by `margin`).
/// raw_crop copies pixels, background_removed zeroes everything outside the
/// mask, binary_mask emits the mask itself as 0/255.
ParticleCrop crop_particle(const GrayImage& image, const MaskRecord& record, CropVariant variant,
                           int margin = 0);

/// Rebuilds `crop` as another variant using its footprint.
ParticleCrop with_variant(const ParticleCrop& crop, CropVariant variant);

/// Splits a record into one record per 8-connected component, ids suffixed
/// "_c<k>" in raster-scan order of each component's first pixel. A
/// single-component record is returned unchanged.
std::vector<MaskRecord> split_components(const MaskRecord& record);

double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct OverlapPair {
  std::string first;
  std::string second;
  double iou = 0.0;
};

/// Pairs of records whose mask IoU exceeds `threshold`. Nothing is removed;
/// callers report these.
std::vector<OverlapPair> find_overlaps(std::span<const MaskRecord> records,
                                       double threshold = 0.8);

/// Row-major run lengths starting with a background run.
std::vector<std::int64_t> rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(int rows, int cols, std::span<const std::int64_t> counts);

/// Masks of one source image, as stored on disk.
struct MaskSet {
  std::string source_image;
  std::vector<MaskRecord> masks;
};

enum class MaskEncoding { png, rle };

/// Reads `masks.json` (path to the file or its directory). Entries carry
/// either "file" (PNG relative to the manifest) or "rle". An optional "area"
/// is checked against the decoded raster.
MaskSet read_mask_set(const std::filesystem::path& manifest);

/// Writes `dir/masks.json` and, for png encoding, `dir/<id>.png`.
void write_mask_set(const MaskSet& set, const std::filesystem::path& dir,
                    MaskEncoding encoding = MaskEncoding::png);

}  // namespace npshape::mask_io
