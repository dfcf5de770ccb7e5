#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "npshape/embed.hpp"
#include "npshape/error.hpp"
#include "npshape/preprocess.hpp"
#include "oracles.hpp"

using namespace npshape;
using namespace npshape::preprocess;
using mask_io::CropVariant;

namespace {

mask_io::ParticleCrop crop_of(const GrayImage& pixels, CropVariant variant = CropVariant::raw_crop) {
  static int serial = 0;
  mask_io::ParticleCrop crop;
  crop.mask_id = "c" + std::to_string(serial++);
  crop.pixels = pixels;
  crop.bbox = {0, 0, pixels.rows() - 1, pixels.cols() - 1};
  crop.variant = variant;
  crop.footprint = BinaryMask(pixels.rows(), pixels.cols(), 1);
  return crop;
}

embed::EmbeddingMatrix matrix_from(const oracle::Matrix& x) {
  embed::EmbeddingMatrix m;
  m.dim = static_cast<int>(x.front().size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.ids.push_back("r" + std::to_string(i));
    for (double v : x[i]) m.values.push_back(static_cast<float>(v));
  }
  return m;
}

oracle::Matrix as_float_rows(const oracle::Matrix& x) {
  oracle::Matrix out = x;
  for (auto& row : out)
    for (auto& v : row) v = static_cast<float>(v);
  return out;
}

// Maps every raster to the same row, so all class centroids coincide.
class ConstantProvider final : public embed::Provider {
 public:
  int dim() const override { return 2; }
  std::string fingerprint() const override { return "const"; }
  embed::EmbeddingMatrix embed_batch(std::span<const std::string> ids,
                                     std::span<const GrayImage>) const override {
    embed::EmbeddingMatrix m;
    m.dim = 2;
    m.ids.assign(ids.begin(), ids.end());
    m.values.assign(ids.size() * 2, 1.0f);
    return m;
  }
};

}  // namespace

TEST_SUITE("preprocess") {
  TEST_CASE("pad_square_resize pads the short side symmetrically before resizing") {
    GrayImage tall(50, 30, 200);
    const auto padded = pad_to_square(tall, 0);
    REQUIRE(padded.rows() == 50);
    REQUIRE(padded.cols() == 50);
    for (int r = 0; r < 50; ++r) {
      for (int c = 0; c < 50; ++c) {
        const bool inside = c >= 10 && c < 40;
        REQUIRE(padded(r, c) == (inside ? 200 : 0));
      }
    }
    const auto out = apply_preproc(crop_of(tall), {Pipeline::pad_square_resize, 224, 0});
    CHECK(out.rows() == 224);
    CHECK(out.cols() == 224);
    CHECK(out == resize_bilinear(padded, 224, 224));
  }

  TEST_CASE("odd padding puts the extra pixel after") {
    const auto padded = pad_to_square(GrayImage(5, 2, 9), 1);
    CHECK(padded(0, 0) == 1);
    CHECK(padded(0, 1) == 9);
    CHECK(padded(0, 2) == 9);
    CHECK(padded(0, 3) == 1);
    CHECK(padded(0, 4) == 1);
  }

  TEST_CASE("center_canvas places small crops without scaling") {
    GrayImage crop(100, 100, 77);
    const auto out = apply_preproc(crop_of(crop), {Pipeline::center_canvas, 224, 5});
    for (int r = 0; r < 224; ++r) {
      for (int c = 0; c < 224; ++c) {
        const bool inside = r >= 62 && r <= 161 && c >= 62 && c <= 161;
        REQUIRE(out(r, c) == (inside ? 77 : 5));
      }
    }
  }

  TEST_CASE("center_canvas falls back to pad_square_resize for large crops") {
    GrayImage big(300, 120, 50);
    const PreprocSpec canvas{Pipeline::center_canvas, 224, 3};
    const PreprocSpec pad{Pipeline::pad_square_resize, 224, 3};
    CHECK(apply_preproc(crop_of(big), canvas) == apply_preproc(crop_of(big), pad));
  }

  TEST_CASE("square uniform crop gives identical stretch and pad outputs") {
    GrayImage sq(37, 37, 140);
    CHECK(apply_preproc(crop_of(sq), {Pipeline::stretch_resize, 224, 0}) ==
          apply_preproc(crop_of(sq), {Pipeline::pad_square_resize, 224, 0}));
  }

  TEST_CASE("masked pipelines derive their variant from the footprint") {
    GrayImage px(4, 4, 90);
    auto crop = crop_of(px);
    crop.footprint(0, 0) = 0;
    const auto masked = apply_preproc(crop, {Pipeline::masked_pad_resize, 4, 0});
    CHECK(masked(0, 0) == 0);
    CHECK(masked(3, 3) == 90);
    const auto bin = apply_preproc(crop, {Pipeline::binary_mask_pad_resize, 4, 0});
    CHECK(bin(0, 0) == 0);
    CHECK(bin(2, 2) == 255);
  }

  TEST_CASE("output side always equals target_side") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> dim(1, 90);
    for (int i = 0; i < 40; ++i) {
      GrayImage img(dim(rng), dim(rng), 30);
      for (auto p : kAllPipelines) {
        const auto out = apply_preproc(crop_of(img), {p, 56, 0});
        REQUIRE(out.rows() == 56);
        REQUIRE(out.cols() == 56);
      }
    }
  }

  TEST_CASE("bilinear resize uses half-pixel centres") {
    GrayImage g(1, 2);
    g(0, 0) = 0;
    g(0, 1) = 100;
    const auto up = resize_bilinear(g, 1, 4);
    // Source x = (i + 0.5) / 2 - 0.5 -> -0.25, 0.25, 0.75, 1.25; clamped at the edges.
    CHECK(up(0, 0) == 0);
    CHECK(up(0, 1) == 25);
    CHECK(up(0, 2) == 75);
    CHECK(up(0, 3) == 100);
    GrayImage same(3, 5, 0);
    same(1, 2) = 211;
    CHECK(resize_bilinear(same, 3, 5) == same);
  }

  TEST_CASE("spec tags and validation") {
    const PreprocSpec spec{Pipeline::masked_pad_resize, 224, 3};
    CHECK(spec.tag() == "masked_pad_resize/224/3");
    CHECK(PreprocSpec::from_tag(spec.tag()) == spec);
    CHECK_THROWS_AS(PreprocSpec::from_tag("nope/1/2"), ValidationError);
    CHECK_NOTHROW(validate(spec, 14));
    CHECK_THROWS_AS(validate({Pipeline::stretch_resize, 100, 0}, 14), ValidationError);
    CHECK_THROWS_AS(validate({Pipeline::stretch_resize, 0, 0}), ValidationError);
    for (auto p : kAllPipelines) CHECK(parse_pipeline(to_string(p)) == p);
  }

  TEST_CASE("centroids are per-class means") {
    embed::EmbeddingMatrix m;
    m.dim = 2;
    m.ids = {"a", "b", "c"};
    m.values = {0, 0, 0, 2, 5, 7};
    const std::vector<std::string> y{"A", "A", "B"};
    const auto c = class_centroids(m, y);
    CHECK(c.at("A") == std::vector<double>{0, 1});
    CHECK(c.at("B") == std::vector<double>{5, 7});
    const std::vector<std::string> short_y{"A"};
    CHECK_THROWS_AS(class_centroids(m, short_y), ValidationError);
  }

  TEST_CASE("centroids match brute force and ignore row order") {
    std::mt19937_64 rng(8);
    const auto x = as_float_rows(oracle::random_matrix(rng, 20, 8));
    std::vector<std::string> y;
    for (int i = 0; i < 20; ++i) y.push_back(std::string(1, static_cast<char>('A' + i % 3)));
    const auto got = class_centroids(matrix_from(x), y);
    for (const auto& [label, centroid] : got) {
      for (std::size_t d = 0; d < 8; ++d) {
        double sum = 0;
        int n = 0;
        for (std::size_t i = 0; i < 20; ++i) {
          if (y[i] == label) {
            sum += x[i][d];
            ++n;
          }
        }
        CHECK(centroid[d] == doctest::Approx(sum / n).epsilon(1e-12));
      }
    }
    std::vector<std::size_t> perm(20);
    for (std::size_t i = 0; i < 20; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    oracle::Matrix px;
    std::vector<std::string> py;
    for (auto i : perm) {
      px.push_back(x[i]);
      py.push_back(y[i]);
    }
    const auto shuffled = class_centroids(matrix_from(px), py);
    for (const auto& [label, centroid] : got) {
      for (std::size_t d = 0; d < 8; ++d) {
        CHECK(shuffled.at(label)[d] == doctest::Approx(centroid[d]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("avg_centroid_distance examples") {
    CHECK(avg_centroid_distance({{"a", {0, 1}}, {"b", {4, 1}}}) == 4.0);
    CHECK(avg_centroid_distance({{"a", {0}}, {"b", {1}}, {"c", {2}}}) ==
          doctest::Approx(4.0 / 3.0));
    CHECK_THROWS_AS(avg_centroid_distance({{"a", {0}}}), ValidationError);
  }

  TEST_CASE("avg_centroid_distance is translation invariant and scales linearly") {
    std::mt19937_64 rng(4);
    Centroids c;
    for (int k = 0; k < 5; ++k) {
      std::vector<double> v(6);
      for (auto& x : v) x = std::uniform_real_distribution<double>(-3, 3)(rng);
      c["k" + std::to_string(k)] = v;
    }
    const double base = avg_centroid_distance(c);
    Centroids moved = c, scaled = c;
    for (auto& [k, v] : moved)
      for (std::size_t d = 0; d < v.size(); ++d) v[d] += 10.0 * static_cast<double>(d) - 7.0;
    for (auto& [k, v] : scaled)
      for (auto& x : v) x *= 2.5;
    CHECK(avg_centroid_distance(moved) == doctest::Approx(base).epsilon(1e-12));
    CHECK(avg_centroid_distance(scaled) == doctest::Approx(2.5 * base).epsilon(1e-12));
  }

  TEST_CASE("selection prefers a separating candidate over a collapsing one") {
    // Two classes that differ only in footprint shape: a binary-mask pipeline
    // separates them; a crop whose raw pixels are uniform does not under
    // stretch_resize when both footprints fill the box.
    std::vector<mask_io::ParticleCrop> crops;
    std::vector<std::string> labels;
    for (int i = 0; i < 4; ++i) {
      GrayImage px(20, 20, 180);
      auto crop = crop_of(px);
      if (i % 2 == 1) {
        for (int r = 0; r < 20; ++r)
          for (int c = 0; c < 20; ++c)
            if (r + c > 20) crop.footprint(r, c) = 0;
      }
      crops.push_back(crop);
      labels.push_back(i % 2 ? "tri" : "square");
    }
    const auto toy = embed::make_provider(embed::ProviderConfig::parse("toy"));
    const std::vector<PreprocSpec> candidates{{Pipeline::stretch_resize, 56, 0},
                                              {Pipeline::binary_mask_pad_resize, 56, 0}};
    const auto report = select_preproc(crops, labels, candidates, *toy);
    REQUIRE(report.candidates.size() == 2);
    CHECK(report.candidates[0].distance == 0.0);
    CHECK(report.candidates[1].distance > 0.0);
    CHECK(report.chosen == candidates[1]);
  }

  TEST_CASE("equal distances pick the first pipeline in enum order") {
    std::vector<mask_io::ParticleCrop> crops{crop_of(GrayImage(8, 8, 1)), crop_of(GrayImage(8, 8, 2))};
    const std::vector<std::string> labels{"a", "b"};
    const ConstantProvider constant;
    auto candidates = all_candidates(28, 0);
    std::reverse(candidates.begin(), candidates.end());
    const auto report = select_preproc(crops, labels, candidates, constant);
    CHECK(report.chosen.pipeline == Pipeline::stretch_resize);
    const std::vector<std::string> one_class{"a", "a"};
    CHECK_THROWS_AS(select_preproc(crops, one_class, candidates, constant), ValidationError);
  }

  TEST_CASE("toy selection equals brute-force argmax and ignores training order") {
    std::mt19937_64 rng(21);
    std::vector<mask_io::ParticleCrop> crops;
    std::vector<std::string> labels;
    for (int i = 0; i < 12; ++i) {
      const int h = 10 + static_cast<int>(rng() % 20), w = 10 + static_cast<int>(rng() % 20);
      GrayImage px(h, w);
      for (auto& v : px.pixels()) v = static_cast<std::uint8_t>(60 + rng() % 120);
      auto crop = crop_of(px);
      const bool disc = i % 2 == 0;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          const double dy = (r + 0.5) / h - 0.5, dx = (c + 0.5) / w - 0.5;
          crop.footprint(r, c) = disc ? (dx * dx + dy * dy <= 0.25) : (dx + dy <= 0.2);
        }
      }
      crops.push_back(crop);
      labels.push_back(disc ? "disc" : "wedge");
    }
    const auto toy = embed::make_provider(embed::ProviderConfig::parse("toy"));
    const auto candidates = all_candidates(56, 0);
    const auto report = select_preproc(crops, labels, candidates, *toy);

    std::size_t best = 0;
    double best_distance = -1;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      oracle::Matrix rows;
      for (const auto& crop : crops) {
        const auto v = embed::toy_descriptor(apply_preproc(crop, candidates[k]));
        rows.emplace_back(v.begin(), v.end());
      }
      const double d = oracle::avg_centroid_distance(rows, labels);
      CHECK(report.candidates[k].distance == doctest::Approx(d).epsilon(1e-9));
      if (std::round(d * 1e9) > std::round(best_distance * 1e9)) {
        best_distance = d;
        best = k;
      }
    }
    CHECK(report.chosen == candidates[best]);

    std::vector<std::size_t> perm(crops.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<mask_io::ParticleCrop> crops2;
    std::vector<std::string> labels2;
    for (auto i : perm) {
      crops2.push_back(crops[i]);
      labels2.push_back(labels[i]);
    }
    CHECK(select_preproc(crops2, labels2, candidates, *toy).chosen == report.chosen);
  }
}
