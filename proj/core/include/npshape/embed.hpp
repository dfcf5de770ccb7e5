#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "npshape/raster.hpp"

namespace npshape::embed {

/// N x D feature rows aligned with `ids`.
struct EmbeddingMatrix {
  std::vector<std::string> ids;
  int dim = 0;
  std::vector<float> values;  // row-major N x dim
  std::string provider_fingerprint;

  std::size_t rows() const noexcept { return ids.size(); }
  std::span<const float> row(std::size_t i) const {
    return std::span(values).subspan(i * static_cast<std::size_t>(dim),
                                     static_cast<std::size_t>(dim));
  }
  std::span<float> row(std::size_t i) {
    return std::span(values).subspan(i * static_cast<std::size_t>(dim),
                                     static_cast<std::size_t>(dim));
  }

  bool operator==(const EmbeddingMatrix&) const = default;
};

/// Unique ids, finite values, consistent shape. Throws ValidationError.
void validate(const EmbeddingMatrix& matrix);

/// Scales every row to unit Euclidean norm (zero rows stay zero).
EmbeddingMatrix l2_normalize_rows(EmbeddingMatrix matrix);

/// Rows for `ids`, in that order. Throws ValidationError for unknown ids.
EmbeddingMatrix select_rows(const EmbeddingMatrix& matrix, std::span<const std::string> ids);

inline constexpr char kEmbeddingMagic[] = "NPEMB1";

/// `NPEMB1`, u32 LE header length, JSON header {n, d, ids, provider},
/// then n*d little-endian float32.
void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);

enum class ProviderKind { portable_graph, precomputed_file, toy_descriptor };

/// Applied after intensities are scaled to [0,1]; gray is replicated to RGB.
struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

inline constexpr int kBackboneDim = 768;
inline constexpr int kBackboneSide = 224;
inline constexpr int kBackbonePatch = 14;
inline constexpr int kToyDim = 64;
/// Toy descriptor values span [0, kToyScale], close to backbone feature magnitudes.
inline constexpr double kToyScale = 10.0;

struct ProviderConfig {
  ProviderKind kind = ProviderKind::toy_descriptor;
  /// Graph file for portable_graph, embedding file for precomputed_file.
  std::filesystem::path path;
  int embedding_dim = kToyDim;
  Normalization normalization;

  /// Parses "toy", "graph:<path>" or "file:<path>".
  static ProviderConfig parse(const std::string& spec);

  /// Stable digest of every field; changes whenever the config changes.
  std::string fingerprint() const;
};

class GraphRunner;

/// Maps standardized rasters to feature rows. Implementations are immutable
/// after construction and safe to call from several threads.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual int dim() const = 0;
  virtual std::string fingerprint() const = 0;
  /// Row i embeds rasters[i] under ids[i]. Rasters must share one square size.
  virtual EmbeddingMatrix embed_batch(std::span<const std::string> ids,
                                      std::span<const GrayImage> rasters) const = 0;
};

/// `runner` is only consulted for portable_graph; when null, the command
/// runner configured through NPSHAPE_GRAPH_RUNNER is used.
std::unique_ptr<Provider> make_provider(const ProviderConfig& config,
                                        std::shared_ptr<const GraphRunner> runner = nullptr);

/// 64-value shape descriptor used as a test-time stand-in for the backbone.
///
/// Computed on intensities divided by the raster maximum, so any constant
/// rescaling of a binary mask yields the same vector. Sections:
///  [0,7)   Hu moment invariants h, mapped to clamp((log10|h| + 12) / 12, 0, 1)
///  [7,23)  radial intensity mass about the centroid, 16 bins over [0, side/2 + 0.5),
///          divided by the largest bin
///  [23,39) boundary-normal angle histogram of the largest Otsu-thresholded
///          8-connected component, 16 bins, rotated so the largest bin is first,
///          divided by that bin
///  [39,64) 5x5 block means of a side x side window centred on the centroid
/// Every value is finally multiplied by kToyScale. An all-zero raster yields
/// the all-zero vector.
std::vector<float> toy_descriptor(const GrayImage& raster);

}  // namespace npshape::embed
