#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "npshape/dataset.hpp"
#include "npshape/mask_io.hpp"

namespace npshape::synth {

enum class ShapeClass { cube, pyramid, triangle, truncated_triangle, circle, dot, blob };

inline constexpr std::array kAllShapes = {ShapeClass::cube,     ShapeClass::pyramid,
                                          ShapeClass::triangle, ShapeClass::truncated_triangle,
                                          ShapeClass::circle,   ShapeClass::dot,
                                          ShapeClass::blob};

const char* to_string(ShapeClass shape);
ShapeClass parse_shape_class(const std::string& text);

/// Smallest mask area emitted for dots (resampled below this).
inline constexpr std::int64_t kMinDotArea = 300;

struct SynthSpec {
  std::uint64_t seed = 1;
  std::string scene_id = "scene";
  int rows = 512;
  int cols = 512;
  std::map<ShapeClass, int> counts;
  /// Side length or diameter range for every class except dots.
  int min_size = 40;
  int max_size = 80;
  int dot_diameter = 30;
  bool overlap_allowed = false;
  double noise_sigma = 6.0;
  double blur_sigma = 1.0;
  std::uint8_t background = 40;
};

void validate(const SynthSpec& spec);

struct SynthScene {
  std::string id;
  GrayImage image;
  std::vector<mask_io::MaskRecord> masks;
  std::map<std::string, std::string> labels;  // mask id -> class
};

/// Rasterizes every requested shape at a random pose, then blurs and adds
/// noise to the image. Masks are exact and taken before noise. Masks are
/// disjoint, with a 2-px gap, unless overlap_allowed. Fully determined by
/// the seed. Throws PlacementError after 1000 failed placements of one shape.
SynthScene generate_scene(const SynthSpec& spec);

struct DatasetSpec {
  std::uint64_t seed = 1;
  std::string name = "synthetic";
  int rows = 512;
  int cols = 512;
  int shapes_per_scene = 12;
  std::map<ShapeClass, dataset::SplitCounts> classes;
  int min_size = 40;
  int max_size = 80;
  int dot_diameter = 30;
  double noise_sigma = 6.0;
  double blur_sigma = 1.0;
};

/// Class-balanced scene plan producing exactly the requested total per class.
std::vector<SynthSpec> plan_scenes(const DatasetSpec& spec);

/// Writes scenes (PNG image + mask manifest each) and labels.json under `dir`,
/// assigning each class's masks to train, validation and test in a seeded
/// shuffled order. Throws ValidationError when a class has too few masks.
dataset::DatasetIndex export_dataset(std::span<const SynthScene> scenes,
                                     const std::map<std::string, dataset::SplitCounts>& splits,
                                     std::uint64_t seed, const std::filesystem::path& dir,
                                     mask_io::MaskEncoding encoding = mask_io::MaskEncoding::rle);

/// plan_scenes + generate_scene + export, one scene in memory at a time.
dataset::DatasetIndex generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir,
                                       mask_io::MaskEncoding encoding = mask_io::MaskEncoding::rle);

/// Split sizes matching the three reference particle datasets:
/// "cubes" (cube/pyramid), "triangles" (triangle/truncated_triangle/circle),
/// "dots" (dot/blob).
DatasetSpec preset_dataset(const std::string& name, std::uint64_t seed = 1);

SynthSpec synth_spec_from_json(const std::string& text);
DatasetSpec dataset_spec_from_json(const std::string& text);
/// True when the JSON describes a dataset (has "splits") rather than one scene.
bool is_dataset_spec(const std::string& text);

}  // namespace npshape::synth
