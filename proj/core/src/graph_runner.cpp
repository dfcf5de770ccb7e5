#include "npshape/graph_runner.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include <unistd.h>

#include "json.hpp"
#include "npshape/digest.hpp"
#include "npshape/error.hpp"

namespace npshape::embed {

using nlohmann::json;

namespace {

constexpr char kTensorMagic[] = "NPTEN1";

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

class ScratchDir {
 public:
  ScratchDir() {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("npshape-graph-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Minimal protobuf wire-format reader; enough to walk nested messages.
class WireReader {
 public:
  WireReader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}

  bool done() const { return p_ >= end_; }

  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      if (p_ >= end_) throw FormatError("onnx: truncated varint");
      const std::uint8_t b = *p_++;
      v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
      if (!(b & 0x80)) return v;
    }
    throw FormatError("onnx: varint too long");
  }

  struct Field {
    std::uint32_t number;
    std::uint32_t wire;
    std::uint64_t value;          // varint / fixed payload
    const std::uint8_t* bytes;    // length-delimited payload
    std::size_t length;
  };

  Field next() {
    const auto key = varint();
    Field f{static_cast<std::uint32_t>(key >> 3), static_cast<std::uint32_t>(key & 7), 0, nullptr,
            0};
    switch (f.wire) {
      case 0: f.value = varint(); break;
      case 1: skip(8); break;
      case 5: skip(4); break;
      case 2: {
        const auto len = varint();
        if (len > static_cast<std::uint64_t>(end_ - p_)) {
          throw FormatError("onnx: truncated length-delimited field");
        }
        f.bytes = p_;
        f.length = static_cast<std::size_t>(len);
        p_ += len;
        break;
      }
      default: throw FormatError("onnx: unsupported wire type " + std::to_string(f.wire));
    }
    return f;
  }

 private:
  void skip(std::size_t n) {
    if (static_cast<std::size_t>(end_ - p_) < n) throw FormatError("onnx: truncated field");
    p_ += n;
  }

  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

// Returns the first length-delimited field with `number`, or {nullptr, 0}.
std::pair<const std::uint8_t*, std::size_t> find_message(const std::uint8_t* data,
                                                         std::size_t size, std::uint32_t number) {
  WireReader r(data, size);
  while (!r.done()) {
    const auto f = r.next();
    if (f.number == number && f.wire == 2) return {f.bytes, f.length};
  }
  return {nullptr, 0};
}

}  // namespace

CommandGraphRunner::CommandGraphRunner(std::string command) : command_(std::move(command)) {}

std::vector<float> CommandGraphRunner::run(const std::filesystem::path& graph,
                                           std::span<const float> input,
                                           const std::array<std::int64_t, 4>& shape) const {
  ScratchDir scratch;
  const auto in_path = scratch.path() / "input.npt";
  const auto out_path = scratch.path() / "output.npt";
  write_tensor_file(in_path, {{shape.begin(), shape.end()}, {input.begin(), input.end()}});
  const std::string cmd = command_ + " " + shell_quote(graph.string()) + " " +
                          shell_quote(in_path.string()) + " " + shell_quote(out_path.string());
  const int status = std::system(cmd.c_str());
  if (status != 0) {
    throw ProviderError("graph runner exited with status " + std::to_string(status));
  }
  Tensor out;
  try {
    out = read_tensor_file(out_path);
  } catch (const Error& e) {
    throw ProviderError(std::string("graph runner output: ") + e.what());
  }
  if (out.shape.size() != 2 || out.shape[0] != shape[0]) {
    throw ProviderError("graph runner must return an N x width tensor");
  }
  return std::move(out.values);
}

void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor) {
  std::size_t count = 1;
  for (auto d : tensor.shape) {
    if (d < 0) throw ValidationError("tensor dimensions must be non-negative");
    count *= static_cast<std::size_t>(d);
  }
  if (count != tensor.values.size()) throw ValidationError("tensor shape does not match payload");
  std::vector<std::uint8_t> bytes(kTensorMagic, kTensorMagic + 6);
  auto put = [&](std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(tensor.shape.size(), 4);
  for (auto d : tensor.shape) put(static_cast<std::uint64_t>(d), 8);
  for (float v : tensor.values) put(std::bit_cast<std::uint32_t>(v), 4);
  write_file_bytes(path, bytes);
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto get = [&](int width) {
    if (pos + static_cast<std::size_t>(width) > bytes.size()) {
      throw FormatError("tensor file '" + path.string() + "' is truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
    return v;
  };
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kTensorMagic, 6) != 0) {
    throw FormatError("tensor file '" + path.string() + "' lacks NPTEN1 magic");
  }
  pos = 6;
  Tensor t;
  const auto rank = get(4);
  if (rank > 8) throw FormatError("tensor rank too large");
  std::size_t count = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    t.shape.push_back(static_cast<std::int64_t>(get(8)));
    count *= static_cast<std::size_t>(t.shape.back());
  }
  if (bytes.size() - pos != count * 4) {
    throw FormatError("tensor file '" + path.string() + "' payload does not match its shape");
  }
  t.values.resize(count);
  for (auto& v : t.values) v = std::bit_cast<float>(static_cast<std::uint32_t>(get(4)));
  return t;
}

std::vector<float> to_input_tensor(std::span<const GrayImage> rasters, const Normalization& norm) {
  if (rasters.empty()) return {};
  const int side = rasters.front().rows();
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  std::vector<float> out(rasters.size() * 3 * plane);
  for (std::size_t n = 0; n < rasters.size(); ++n) {
    const auto px = rasters[n].pixels();
    if (px.size() != plane) throw ValidationError("to_input_tensor: rasters differ in size");
    for (int c = 0; c < 3; ++c) {
      float* dst = out.data() + (n * 3 + static_cast<std::size_t>(c)) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] = static_cast<float>((px[i] / 255.0 - norm.mean[c]) / norm.std[c]);
      }
    }
  }
  return out;
}

std::optional<std::int64_t> onnx_output_width(std::span<const std::uint8_t> bytes) {
  // ModelProto.graph = 7, GraphProto.output = 12, ValueInfoProto.type = 2,
  // TypeProto.tensor_type = 1, Tensor.shape = 2, TensorShapeProto.dim = 1,
  // Dimension.dim_value = 1.
  auto graph = find_message(bytes.data(), bytes.size(), 7);
  if (!graph.first) throw FormatError("onnx: model has no graph");
  auto output = find_message(graph.first, graph.second, 12);
  if (!output.first) throw FormatError("onnx: graph declares no output");
  auto type = find_message(output.first, output.second, 2);
  if (!type.first) return std::nullopt;
  auto tensor = find_message(type.first, type.second, 1);
  if (!tensor.first) return std::nullopt;
  auto shape = find_message(tensor.first, tensor.second, 2);
  if (!shape.first) return std::nullopt;

  std::optional<std::int64_t> last;
  WireReader dims(shape.first, shape.second);
  while (!dims.done()) {
    const auto f = dims.next();
    if (f.number != 1 || f.wire != 2) continue;
    last.reset();
    WireReader dim(f.bytes, f.length);
    while (!dim.done()) {
      const auto g = dim.next();
      if (g.number == 1 && g.wire == 0) last = static_cast<std::int64_t>(g.value);
    }
  }
  return last;
}

std::optional<std::int64_t> onnx_output_width(const std::filesystem::path& model) {
  return onnx_output_width(read_file_bytes(model));
}

ParityProbe read_parity_probe(const std::filesystem::path& path) {
  try {
    const auto doc = json::parse(read_text_file(path));
    ParityProbe probe{doc.at("probe_sha256").get<std::string>(),
                      doc.at("reference").get<std::vector<double>>(),
                      doc.at("exporter_version").get<std::string>()};
    for (double v : probe.reference) {
      if (!std::isfinite(v)) throw FormatError("parity probe reference has non-finite values");
    }
    return probe;
  } catch (const json::exception& e) {
    throw FormatError("parity probe '" + path.string() + "': " + e.what());
  }
}

void write_parity_probe(const ParityProbe& probe, const std::filesystem::path& path) {
  const json doc = {{"probe_sha256", probe.probe_digest},
                    {"reference", probe.reference},
                    {"exporter_version", probe.exporter_version}};
  write_text_file(path, doc.dump(1));
}

double parity_max_abs_diff(const Provider& provider, const GrayImage& probe_raster,
                           const ParityProbe& probe) {
  const std::string id = "probe";
  const auto m = provider.embed_batch(std::span(&id, 1), std::span(&probe_raster, 1));
  if (static_cast<std::size_t>(m.dim) != probe.reference.size()) {
    throw ProviderError("parity probe has " + std::to_string(probe.reference.size()) +
                        " values, provider emits " + std::to_string(m.dim));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.reference.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(m.values[i]) - probe.reference[i]));
  }
  return worst;
}

}  // namespace npshape::embed
