#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npshape/embed.hpp"

namespace npshape::embed {

/// Executes a single-input, single-output portable graph.
class GraphRunner {
 public:
  virtual ~GraphRunner() = default;
  /// `input` is N x 3 x side x side float32; returns the N x width output.
  virtual std::vector<float> run(const std::filesystem::path& graph, std::span<const float> input,
                                 const std::array<std::int64_t, 4>& shape) const = 0;
};

/// Delegates to an external program: `<command> <graph> <input> <output>`.
/// Tensors travel as NPTEN1 files (see write_tensor_file).
class CommandGraphRunner final : public GraphRunner {
 public:
  explicit CommandGraphRunner(std::string command);

  std::vector<float> run(const std::filesystem::path& graph, std::span<const float> input,
                         const std::array<std::int64_t, 4>& shape) const override;

 private:
  std::string command_;
};

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

/// `NPTEN1`, u32 rank, rank x i64 dims, float32 payload; little-endian.
void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor_file(const std::filesystem::path& path);

/// N x 3 x side x side tensor: intensities / 255, gray replicated to three
/// channels, then (x - mean[c]) / std[c].
std::vector<float> to_input_tensor(std::span<const GrayImage> rasters, const Normalization& norm);

/// Last dimension of the first graph output as declared in an ONNX model
/// file; nullopt when the dimension is symbolic or absent.
std::optional<std::int64_t> onnx_output_width(std::span<const std::uint8_t> model_bytes);
std::optional<std::int64_t> onnx_output_width(const std::filesystem::path& model);

/// Reference vector recorded by the export tool beside an exported graph.
struct ParityProbe {
  std::string probe_digest;  // sha256 of the probe PNG file
  std::vector<double> reference;
  std::string exporter_version;
};

ParityProbe read_parity_probe(const std::filesystem::path& path);
void write_parity_probe(const ParityProbe& probe, const std::filesystem::path& path);

/// Largest |provider(probe) - reference| over all coordinates.
double parity_max_abs_diff(const Provider& provider, const GrayImage& probe_raster,
                           const ParityProbe& probe);

}  // namespace npshape::embed
