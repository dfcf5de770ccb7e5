#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "npshape/embed.hpp"
#include "npshape/mask_io.hpp"

namespace npshape::preprocess {

/// Candidate pipelines in tie-break order.
enum class Pipeline {
  stretch_resize,
  pad_square_resize,
  center_canvas,
  masked_pad_resize,
  binary_mask_pad_resize,
};

inline constexpr std::array kAllPipelines = {
    Pipeline::stretch_resize, Pipeline::pad_square_resize, Pipeline::center_canvas,
    Pipeline::masked_pad_resize, Pipeline::binary_mask_pad_resize};

const char* to_string(Pipeline pipeline);
Pipeline parse_pipeline(const std::string& text);

struct PreprocSpec {
  Pipeline pipeline = Pipeline::pad_square_resize;
  int target_side = 224;
  std::uint8_t pad_value = 0;

  /// e.g. "pad_square_resize/224/0"
  std::string tag() const;
  static PreprocSpec from_tag(const std::string& tag);
  bool operator==(const PreprocSpec&) const = default;
};

/// `patch_size` > 0 additionally requires target_side % patch_size == 0.
void validate(const PreprocSpec& spec, int patch_size = 0);

/// Bilinear resize with half-pixel centres (not corner aligned), edge clamp,
/// no antialiasing, round-half-up to 8 bits.
GrayImage resize_bilinear(const GrayImage& image, int rows, int cols);

/// Pads the shorter side symmetrically (extra pixel after) to a square.
GrayImage pad_to_square(const GrayImage& image, std::uint8_t pad_value);

/// Places `image` at the centre of a side x side canvas; requires it to fit.
GrayImage center_on_canvas(const GrayImage& image, int side, std::uint8_t pad_value);

/// Produces a target_side x target_side raster from a crop.
GrayImage apply_preproc(const mask_io::ParticleCrop& crop, const PreprocSpec& spec);

using Centroids = std::map<std::string, std::vector<double>>;

/// Arithmetic mean row per label. Throws ValidationError on length mismatch
/// or an empty input.
Centroids class_centroids(const embed::EmbeddingMatrix& x, std::span<const std::string> labels);

/// Mean Euclidean distance over all unordered centroid pairs; needs >= 2 classes.
double avg_centroid_distance(const Centroids& centroids);

struct CandidateScore {
  PreprocSpec spec;
  double distance = 0.0;
};

struct SelectionReport {
  std::vector<CandidateScore> candidates;
  PreprocSpec chosen;
};

struct SelectionOptions {
  /// L2-normalize embedding rows before computing centroids.
  bool l2_normalize = false;
  /// Embed candidates concurrently.
  bool parallel = true;
};

/// Embeds the training crops under each candidate and keeps the one with the
/// largest average inter-centroid distance. Distances are compared after
/// rounding to 1e-9; ties go to the lowest Pipeline value.
SelectionReport select_preproc(std::span<const mask_io::ParticleCrop> crops,
                               std::span<const std::string> labels,
                               std::span<const PreprocSpec> candidates,
                               const embed::Provider& provider,
                               const SelectionOptions& options = {});

/// All five pipelines at the given side and pad value.
std::vector<PreprocSpec> all_candidates(int target_side = 224, std::uint8_t pad_value = 0);

}  // namespace npshape::preprocess
