#include "npshape/embed.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "npshape/digest.hpp"
#include "npshape/error.hpp"
#include "npshape/graph_runner.hpp"

namespace npshape::embed {

using nlohmann::json;

void validate(const EmbeddingMatrix& m) {
  if (m.dim <= 0 && !m.ids.empty()) throw ValidationError("embedding dimension must be positive");
  if (m.values.size() != m.ids.size() * static_cast<std::size_t>(std::max(m.dim, 0))) {
    throw ValidationError("embedding payload holds " + std::to_string(m.values.size()) +
                          " values, expected " + std::to_string(m.ids.size()) + " x " +
                          std::to_string(m.dim));
  }
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < m.ids.size(); ++i) {
    if (!seen.insert(m.ids[i]).second) {
      throw ValidationError("duplicate embedding id '" + m.ids[i] + "'");
    }
    for (float v : m.row(i)) {
      if (!std::isfinite(v)) {
        throw ValidationError("embedding row '" + m.ids[i] + "' has a non-finite value");
      }
    }
  }
}

EmbeddingMatrix l2_normalize_rows(EmbeddingMatrix m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    double ss = 0.0;
    for (float v : row) ss += static_cast<double>(v) * v;
    if (ss <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(ss);
    for (auto& v : row) v = static_cast<float>(v * inv);
  }
  m.provider_fingerprint += "+l2";
  return m;
}

EmbeddingMatrix select_rows(const EmbeddingMatrix& m, std::span<const std::string> ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < m.ids.size(); ++i) index.emplace(m.ids[i], i);
  EmbeddingMatrix out;
  out.dim = m.dim;
  out.provider_fingerprint = m.provider_fingerprint;
  out.values.reserve(ids.size() * static_cast<std::size_t>(m.dim));
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError("no embedding for id '" + id + "'");
    out.ids.push_back(id);
    const auto row = m.row(it->second);
    out.values.insert(out.values.end(), row.begin(), row.end());
  }
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  validate(m);
  const json header = {{"n", m.rows()}, {"d", m.dim}, {"ids", m.ids},
                       {"provider", m.provider_fingerprint}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> bytes(kEmbeddingMagic, kEmbeddingMagic + 6);
  put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.reserve(bytes.size() + m.values.size() * 4);
  for (float v : m.values) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
  write_file_bytes(path, bytes);
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string where = "embedding file '" + path.string() + "': ";
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kEmbeddingMagic, 6) != 0) {
    throw FormatError(where + "missing NPEMB1 magic");
  }
  const std::size_t header_len = get_u32(bytes.data() + 6);
  if (10 + header_len > bytes.size()) throw FormatError(where + "truncated header");
  EmbeddingMatrix m;
  std::size_t n = 0;
  try {
    const auto header = json::parse(bytes.begin() + 10,
                                    bytes.begin() + static_cast<std::ptrdiff_t>(10 + header_len));
    n = header.at("n").get<std::size_t>();
    m.dim = header.at("d").get<int>();
    m.ids = header.at("ids").get<std::vector<std::string>>();
    m.provider_fingerprint = header.at("provider").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(where + "bad header: " + e.what());
  }
  if (m.ids.size() != n) throw FormatError(where + "header lists " + std::to_string(m.ids.size()) +
                                           " ids for n=" + std::to_string(n));
  if (m.dim <= 0) throw FormatError(where + "dimension must be positive");
  const std::size_t expected = n * static_cast<std::size_t>(m.dim) * 4;
  const std::size_t payload = bytes.size() - 10 - header_len;
  if (payload != expected) {
    throw FormatError(where + "payload is " + std::to_string(payload) + " bytes, header implies " +
                      std::to_string(expected) + " (corrupt or truncated)");
  }
  m.values.resize(n * static_cast<std::size_t>(m.dim));
  const std::uint8_t* p = bytes.data() + 10 + header_len;
  for (std::size_t i = 0; i < m.values.size(); ++i, p += 4) {
    m.values[i] = std::bit_cast<float>(get_u32(p));
  }
  try {
    validate(m);
  } catch (const ValidationError& e) {
    throw FormatError(where + e.what());
  }
  return m;
}

ProviderConfig ProviderConfig::parse(const std::string& spec) {
  ProviderConfig cfg;
  if (spec == "toy") {
    cfg.kind = ProviderKind::toy_descriptor;
    cfg.embedding_dim = kToyDim;
  } else if (spec.rfind("graph:", 0) == 0) {
    cfg.kind = ProviderKind::portable_graph;
    cfg.path = spec.substr(6);
    cfg.embedding_dim = kBackboneDim;
  } else if (spec.rfind("file:", 0) == 0) {
    cfg.kind = ProviderKind::precomputed_file;
    cfg.path = spec.substr(5);
    cfg.embedding_dim = 0;  // taken from the file
  } else {
    throw ConfigError("unknown provider '" + spec + "' (expected toy, graph:<path> or file:<path>)");
  }
  if (cfg.kind != ProviderKind::toy_descriptor && cfg.path.empty()) {
    throw ConfigError("provider '" + spec + "' needs a path");
  }
  return cfg;
}

std::string ProviderConfig::fingerprint() const {
  static constexpr const char* kKinds[] = {"graph", "file", "toy"};
  std::string canon = std::string("kind=") + kKinds[static_cast<int>(kind)] +
                      ";path=" + path.generic_string() + ";dim=" + std::to_string(embedding_dim);
  char buf[64];
  for (int c = 0; c < 3; ++c) {
    std::snprintf(buf, sizeof buf, ";m%d=%.17g;s%d=%.17g", c, normalization.mean[c], c,
                  normalization.std[c]);
    canon += buf;
  }
  return std::string(kKinds[static_cast<int>(kind)]) + ":" + sha256_hex(canon).substr(0, 16);
}

namespace {

void check_square_batch(std::span<const std::string> ids, std::span<const GrayImage> rasters) {
  if (ids.size() != rasters.size()) {
    throw ValidationError("embed_batch: " + std::to_string(ids.size()) + " ids for " +
                          std::to_string(rasters.size()) + " rasters");
  }
  for (std::size_t i = 0; i < rasters.size(); ++i) {
    const auto& r = rasters[i];
    if (r.empty() || r.rows() != r.cols() || r.rows() != rasters.front().rows()) {
      throw ValidationError("embed_batch: raster '" + ids[i] +
                            "' is not the shared square input size");
    }
  }
}

class ToyProvider final : public Provider {
 public:
  explicit ToyProvider(const ProviderConfig& cfg) : fingerprint_(cfg.fingerprint()) {
    if (cfg.embedding_dim != kToyDim) {
      throw ProviderError("toy provider emits " + std::to_string(kToyDim) + " values, config asks " +
                          std::to_string(cfg.embedding_dim));
    }
  }
  int dim() const override { return kToyDim; }
  std::string fingerprint() const override { return fingerprint_; }
  EmbeddingMatrix embed_batch(std::span<const std::string> ids,
                              std::span<const GrayImage> rasters) const override {
    check_square_batch(ids, rasters);
    EmbeddingMatrix m;
    m.dim = kToyDim;
    m.provider_fingerprint = fingerprint_;
    m.ids.assign(ids.begin(), ids.end());
    m.values.reserve(ids.size() * kToyDim);
    for (const auto& r : rasters) {
      const auto d = toy_descriptor(r);
      m.values.insert(m.values.end(), d.begin(), d.end());
    }
    validate(m);
    return m;
  }

 private:
  std::string fingerprint_;
};

class PrecomputedProvider final : public Provider {
 public:
  explicit PrecomputedProvider(const ProviderConfig& cfg) {
    try {
      table_ = load_embeddings(cfg.path);
    } catch (const Error& e) {
      throw ProviderError(std::string("precomputed provider: ") + e.what());
    }
    if (cfg.embedding_dim > 0 && cfg.embedding_dim != table_.dim) {
      throw ProviderError("precomputed file has d=" + std::to_string(table_.dim) +
                          ", config expects " + std::to_string(cfg.embedding_dim));
    }
    fingerprint_ = cfg.fingerprint() + "|" + table_.provider_fingerprint;
  }
  int dim() const override { return table_.dim; }
  std::string fingerprint() const override { return fingerprint_; }
  EmbeddingMatrix embed_batch(std::span<const std::string> ids,
                              std::span<const GrayImage> rasters) const override {
    if (!rasters.empty() && rasters.size() != ids.size()) {
      throw ValidationError("embed_batch: ids and rasters differ in length");
    }
    EmbeddingMatrix m;
    try {
      m = select_rows(table_, ids);
    } catch (const ValidationError& e) {
      throw ProviderError(std::string("precomputed provider: ") + e.what());
    }
    m.provider_fingerprint = fingerprint_;
    return m;
  }

 private:
  EmbeddingMatrix table_;
  std::string fingerprint_;
};

class GraphProvider final : public Provider {
 public:
  GraphProvider(const ProviderConfig& cfg, std::shared_ptr<const GraphRunner> runner)
      : cfg_(cfg), runner_(std::move(runner)), fingerprint_(cfg.fingerprint()) {
    if (cfg_.embedding_dim <= 0) throw ProviderError("graph provider needs embedding_dim > 0");
    if (!std::filesystem::is_regular_file(cfg_.path)) {
      throw ProviderError("graph file '" + cfg_.path.string() + "' does not exist");
    }
    std::optional<std::int64_t> width;
    try {
      width = onnx_output_width(cfg_.path);
    } catch (const FormatError& e) {
      throw ProviderError(std::string("cannot load graph: ") + e.what());
    }
    if (width && *width != cfg_.embedding_dim) {
      throw ProviderError("graph declares output width " + std::to_string(*width) +
                          " but embedding_dim is " + std::to_string(cfg_.embedding_dim));
    }
    if (!runner_) {
      const char* command = std::getenv("NPSHAPE_GRAPH_RUNNER");
      if (command == nullptr || *command == '\0') {
        throw ProviderError("no graph runner available; set NPSHAPE_GRAPH_RUNNER");
      }
      runner_ = std::make_shared<CommandGraphRunner>(command);
    }
  }
  int dim() const override { return cfg_.embedding_dim; }
  std::string fingerprint() const override { return fingerprint_; }
  EmbeddingMatrix embed_batch(std::span<const std::string> ids,
                              std::span<const GrayImage> rasters) const override {
    check_square_batch(ids, rasters);
    EmbeddingMatrix m;
    m.dim = cfg_.embedding_dim;
    m.provider_fingerprint = fingerprint_;
    m.ids.assign(ids.begin(), ids.end());
    constexpr std::size_t kBatch = 32;
    for (std::size_t start = 0; start < rasters.size(); start += kBatch) {
      const auto chunk = rasters.subspan(start, std::min(kBatch, rasters.size() - start));
      const auto input = to_input_tensor(chunk, cfg_.normalization);
      const std::int64_t side = chunk.front().rows();
      const std::array<std::int64_t, 4> shape{static_cast<std::int64_t>(chunk.size()), 3, side,
                                              side};
      const auto out = runner_->run(cfg_.path, input, shape);
      if (out.size() != chunk.size() * static_cast<std::size_t>(m.dim)) {
        throw ProviderError("graph output has " + std::to_string(out.size()) +
                            " values, expected " + std::to_string(chunk.size()) + " x " +
                            std::to_string(m.dim));
      }
      m.values.insert(m.values.end(), out.begin(), out.end());
    }
    try {
      validate(m);
    } catch (const ValidationError& e) {
      throw ProviderError(std::string("graph output rejected: ") + e.what());
    }
    return m;
  }

 private:
  ProviderConfig cfg_;
  std::shared_ptr<const GraphRunner> runner_;
  std::string fingerprint_;
};

}  // namespace

std::unique_ptr<Provider> make_provider(const ProviderConfig& config,
                                        std::shared_ptr<const GraphRunner> runner) {
  switch (config.kind) {
    case ProviderKind::toy_descriptor: return std::make_unique<ToyProvider>(config);
    case ProviderKind::precomputed_file: return std::make_unique<PrecomputedProvider>(config);
    case ProviderKind::portable_graph:
      return std::make_unique<GraphProvider>(config, std::move(runner));
  }
  throw ProviderError("unknown provider kind");
}

}  // namespace npshape::embed
