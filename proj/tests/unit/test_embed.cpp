#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "npshape/digest.hpp"
#include "npshape/embed.hpp"
#include "npshape/error.hpp"
#include "scratch.hpp"

using namespace npshape;
using namespace npshape::embed;

namespace {

GrayImage disc(int side, double cy, double cx, double radius, std::uint8_t value = 255) {
  GrayImage g(side, side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      if ((r + 0.5 - cy) * (r + 0.5 - cy) + (c + 0.5 - cx) * (c + 0.5 - cx) <= radius * radius)
        g(r, c) = value;
  return g;
}

// Equilateral triangle pointing up, centred on (cy, cx).
GrayImage triangle(int side, double cy, double cx, double edge, std::uint8_t value = 255) {
  GrayImage g(side, side);
  const double h = edge * std::sqrt(3.0) / 2.0;
  const double top = cy - 2.0 * h / 3.0, bottom = cy + h / 3.0;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const double y = r + 0.5, x = c + 0.5;
      if (y < top || y > bottom) continue;
      const double half = (y - top) / h * edge / 2.0;
      if (std::abs(x - cx) <= half) g(r, c) = value;
    }
  }
  return g;
}

EmbeddingMatrix random_matrix(std::mt19937_64& rng, std::size_t n, int d) {
  std::normal_distribution<float> g(0.0f, 3.0f);
  EmbeddingMatrix m;
  m.dim = d;
  m.provider_fingerprint = "test";
  for (std::size_t i = 0; i < n; ++i) m.ids.push_back("id" + std::to_string(i));
  m.values.resize(n * static_cast<std::size_t>(d));
  for (auto& v : m.values) v = g(rng);
  return m;
}

}  // namespace

TEST_SUITE("embed") {
  TEST_CASE("all-zero raster gives the all-zero descriptor") {
    const auto v = toy_descriptor(GrayImage(64, 64));
    REQUIRE(v.size() == static_cast<std::size_t>(kToyDim));
    for (float x : v) CHECK(x == 0.0f);
  }

  TEST_CASE("descriptor values are finite and bounded") {
    const auto v = toy_descriptor(triangle(64, 34, 30, 30));
    for (float x : v) {
      CHECK(std::isfinite(x));
      CHECK(x >= 0.0f);
      CHECK(x <= kToyScale);
    }
  }

  TEST_CASE("descriptor is translation invariant on a centred canvas") {
    const auto a = toy_descriptor(triangle(96, 48, 48, 30));
    const auto b = toy_descriptor(triangle(96, 45, 53, 30));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-6);
  }

  TEST_CASE("binary mask intensity scaling does not change the descriptor") {
    const auto a = toy_descriptor(disc(64, 30, 33, 14, 255));
    const auto b = toy_descriptor(disc(64, 30, 33, 14, 100));
    CHECK(a == b);
  }

  TEST_CASE("circle and triangle of equal area differ in the contour-angle section") {
    const double r = 14.0;
    const double edge = std::sqrt(4.0 * M_PI * r * r / std::sqrt(3.0));
    const auto a = toy_descriptor(disc(64, 32, 32, r));
    const auto b = toy_descriptor(triangle(64, 34, 32, edge));
    double largest = 0.0;
    for (int i = 23; i < 39; ++i) {
      largest = std::max(largest, std::abs(static_cast<double>(a[static_cast<std::size_t>(i)]) -
                                           b[static_cast<std::size_t>(i)]) /
                                      kToyScale);
    }
    CHECK(largest >= 0.2);
  }

  TEST_CASE("toy provider is deterministic and order preserving") {
    const auto toy = make_provider(ProviderConfig::parse("toy"));
    CHECK(toy->dim() == kToyDim);
    const std::vector<GrayImage> rasters{disc(48, 24, 24, 9), triangle(48, 25, 24, 22),
                                         disc(48, 24, 24, 9)};
    const std::vector<std::string> ids{"a", "b", "c"};
    const auto m = toy->embed_batch(ids, rasters);
    CHECK(m.ids == ids);
    CHECK(std::vector<float>(m.row(0).begin(), m.row(0).end()) ==
          std::vector<float>(m.row(2).begin(), m.row(2).end()));
    const std::vector<GrayImage> swapped{rasters[1], rasters[0]};
    const std::vector<std::string> swapped_ids{"b", "a"};
    const auto s = toy->embed_batch(swapped_ids, swapped);
    CHECK(std::vector<float>(s.row(0).begin(), s.row(0).end()) ==
          std::vector<float>(m.row(1).begin(), m.row(1).end()));
    CHECK(toy->embed_batch(ids, rasters) == m);

    const std::vector<GrayImage> mixed{GrayImage(8, 8), GrayImage(9, 9)};
    const std::vector<std::string> two{"x", "y"};
    CHECK_THROWS_AS(toy->embed_batch(two, mixed), ValidationError);
  }

  TEST_CASE("fingerprint changes whenever the config changes") {
    auto a = ProviderConfig::parse("graph:/models/b.onnx");
    auto b = a;
    CHECK(a.fingerprint() == b.fingerprint());
    b.normalization.std[1] = 0.25;
    CHECK(a.fingerprint() != b.fingerprint());
    b = a;
    b.embedding_dim = 384;
    CHECK(a.fingerprint() != b.fingerprint());
    b = a;
    b.path = "/models/c.onnx";
    CHECK(a.fingerprint() != b.fingerprint());
    CHECK(ProviderConfig::parse("toy").fingerprint() != a.fingerprint());
  }

  TEST_CASE("provider spec parsing") {
    CHECK(ProviderConfig::parse("toy").kind == ProviderKind::toy_descriptor);
    CHECK(ProviderConfig::parse("file:x.npe").kind == ProviderKind::precomputed_file);
    CHECK(ProviderConfig::parse("graph:g.onnx").embedding_dim == kBackboneDim);
    CHECK_THROWS_AS(ProviderConfig::parse("dino"), ConfigError);
    CHECK_THROWS_AS(ProviderConfig::parse("file:"), ConfigError);
  }

  TEST_CASE("embedding file round-trips bit-exact") {
    testing_support::ScratchDir dir("emb");
    std::mt19937_64 rng(1);
    auto m = random_matrix(rng, 37, 19);
    m.values[5] = -0.0f;
    m.values[6] = std::numeric_limits<float>::denorm_min();
    save_embeddings(m, dir / "a.npe");
    const auto back = load_embeddings(dir / "a.npe");
    CHECK(back == m);
    CHECK(std::signbit(back.values[5]));
    save_embeddings(back, dir / "b.npe");
    CHECK(read_file_bytes(dir / "a.npe") == read_file_bytes(dir / "b.npe"));
  }

  TEST_CASE("table-scale file loads with matching counts") {
    testing_support::ScratchDir dir("emb768");
    std::mt19937_64 rng(2);
    const auto m = random_matrix(rng, 188, kBackboneDim);
    save_embeddings(m, dir / "test.npe");
    const auto back = load_embeddings(dir / "test.npe");
    CHECK(back.rows() == 188);
    CHECK(back.dim == 768);
  }

  TEST_CASE("corrupt embedding files are rejected") {
    testing_support::ScratchDir dir("corrupt");
    std::mt19937_64 rng(3);
    const auto m = random_matrix(rng, 4, 3);
    save_embeddings(m, dir / "ok.npe");
    auto bytes = read_file_bytes(dir / "ok.npe");

    auto truncated = bytes;
    truncated.resize(truncated.size() - 4);
    write_file_bytes(dir / "t.npe", truncated);
    CHECK_THROWS_WITH_AS(load_embeddings(dir / "t.npe"),
                         doctest::Contains("corrupt or truncated"), FormatError);

    auto magic = bytes;
    magic[0] = 'X';
    write_file_bytes(dir / "m.npe", magic);
    CHECK_THROWS_AS(load_embeddings(dir / "m.npe"), FormatError);

    // Overwrite the last float with a quiet NaN.
    auto nan = bytes;
    nan[nan.size() - 1] = 0x7F;
    nan[nan.size() - 2] = 0xC0;
    write_file_bytes(dir / "n.npe", nan);
    CHECK_THROWS_AS(load_embeddings(dir / "n.npe"), FormatError);

    CHECK_THROWS_AS(load_embeddings(dir / "missing.npe"), Error);
  }

  TEST_CASE("matrix validation") {
    EmbeddingMatrix m;
    m.dim = 2;
    m.ids = {"a", "a"};
    m.values = {1, 2, 3, 4};
    CHECK_THROWS_AS(validate(m), ValidationError);
    m.ids = {"a", "b"};
    m.values = {1, 2, 3};
    CHECK_THROWS_AS(validate(m), ValidationError);
    m.values = {1, 2, 3, std::numeric_limits<float>::infinity()};
    CHECK_THROWS_AS(validate(m), ValidationError);
  }

  TEST_CASE("l2 normalization and row selection") {
    EmbeddingMatrix m;
    m.dim = 2;
    m.ids = {"a", "b", "z"};
    m.values = {3, 4, 0, 2, 0, 0};
    const auto n = l2_normalize_rows(m);
    CHECK(n.values[0] == doctest::Approx(0.6));
    CHECK(n.values[1] == doctest::Approx(0.8));
    CHECK(n.values[3] == 1.0f);
    CHECK(n.values[4] == 0.0f);
    const std::vector<std::string> pick{"z", "a"};
    const auto s = select_rows(m, pick);
    CHECK(s.ids == pick);
    CHECK(s.values == std::vector<float>{0, 0, 3, 4});
    const std::vector<std::string> unknown{"q"};
    CHECK_THROWS_AS(select_rows(m, unknown), ValidationError);
  }

  TEST_CASE("precomputed provider serves rows by id") {
    testing_support::ScratchDir dir("pre");
    std::mt19937_64 rng(4);
    const auto m = random_matrix(rng, 6, 5);
    save_embeddings(m, dir / "e.npe");
    const auto provider = make_provider(ProviderConfig::parse("file:" + (dir / "e.npe").string()));
    CHECK(provider->dim() == 5);
    const std::vector<std::string> ids{"id4", "id1"};
    const auto got = provider->embed_batch(ids, {});
    CHECK(got.ids == ids);
    CHECK(std::vector<float>(got.row(0).begin(), got.row(0).end()) ==
          std::vector<float>(m.row(4).begin(), m.row(4).end()));
    const std::vector<std::string> missing{"nope"};
    CHECK_THROWS_AS(provider->embed_batch(missing, {}), ProviderError);
    CHECK_THROWS_AS(make_provider(ProviderConfig::parse("file:" + (dir / "x.npe").string())),
                    ProviderError);
  }
}
