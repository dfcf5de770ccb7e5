#include "doctest.h"

#include <random>

#include "json.hpp"
#include "npshape/digest.hpp"
#include "npshape/error.hpp"
#include "npshape/image_io.hpp"
#include "npshape/mask_io.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace npshape;
using namespace npshape::mask_io;

namespace {

BinaryMask rect_mask(int rows, int cols, int r0, int c0, int r1, int c1) {
  BinaryMask m(rows, cols);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) m(r, c) = 1;
  return m;
}

MaskRecord record_with(double iou, double stab, std::int64_t area, const std::string& id = "m") {
  // A 1-row strip keeps area exact without building big rasters by hand.
  BinaryMask m(1, static_cast<int>(std::max<std::int64_t>(area, 1)));
  for (std::int64_t i = 0; i < area; ++i) m(0, static_cast<int>(i)) = 1;
  return make_record(id, "img", std::move(m), iou, stab);
}

BinaryMask random_mask(std::mt19937_64& rng, int rows, int cols, double p) {
  std::bernoulli_distribution coin(p);
  BinaryMask m(rows, cols);
  for (auto& v : m.pixels()) v = coin(rng) ? 1 : 0;
  return m;
}

}  // namespace

TEST_SUITE("mask_io") {
  TEST_CASE("filter keeps confident large masks and drops the rest") {
    const std::vector<MaskRecord> records{record_with(0.96, 0.97, 600, "keep"),
                                          record_with(0.94, 0.99, 9000, "low_iou"),
                                          record_with(0.99, 0.99, 499, "small")};
    const auto kept = filter_masks(records, FilterThresholds{});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].id == "keep");
  }

  TEST_CASE("thresholds are inclusive") {
    const std::vector<MaskRecord> records{record_with(0.95, 0.95, 500)};
    CHECK(filter_masks(records, FilterThresholds{}).size() == 1);
  }

  TEST_CASE("filter rejects an area mismatch naming the record") {
    auto bad = record_with(0.99, 0.99, 600, "liar");
    bad.area_px = 601;
    const std::vector<MaskRecord> records{bad};
    try {
      filter_masks(records, FilterThresholds{});
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("liar") != std::string::npos);
    }
  }

  TEST_CASE("threshold validation") {
    FilterThresholds t;
    t.min_area_px = -1;
    CHECK_THROWS_AS(validate(t), ValidationError);
    t = {};
    t.min_predicted_iou = std::nan("");
    CHECK_THROWS_AS(validate(t), ValidationError);
  }

  TEST_CASE("filter preserves order and is idempotent and monotone") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.85, 1.0);
    std::uniform_int_distribution<int> area(0, 900);
    std::vector<MaskRecord> records;
    for (int i = 0; i < 200; ++i) {
      records.push_back(record_with(u(rng), u(rng), area(rng), "r" + std::to_string(i)));
    }
    const FilterThresholds t{0.93, 0.92, 400};
    const auto once = filter_masks(records, t);
    CHECK(filter_masks(once, t) == once);
    for (std::size_t i = 1; i < once.size(); ++i) {
      CHECK(std::stoi(once[i - 1].id.substr(1)) < std::stoi(once[i].id.substr(1)));
    }
    FilterThresholds stricter = t;
    stricter.min_area_px = 600;
    const auto fewer = filter_masks(records, stricter);
    for (const auto& r : fewer) {
      CHECK(std::find(once.begin(), once.end(), r) != once.end());
    }
  }

  TEST_CASE("bbox examples") {
    CHECK(bbox_from_mask(rect_mask(5, 5, 1, 1, 3, 2)) == BoundingBox{1, 1, 3, 2});
    BinaryMask single(5, 5);
    single(0, 4) = 1;
    CHECK(bbox_from_mask(single) == BoundingBox{0, 4, 0, 4});
    CHECK(bbox_from_mask(rect_mask(7, 3, 0, 0, 6, 2)) == BoundingBox{0, 0, 6, 2});
    CHECK_THROWS_AS(bbox_from_mask(BinaryMask(4, 4)), EmptyMaskError);
  }

  TEST_CASE("bbox matches a brute-force scan on wide random masks") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      std::uniform_int_distribution<int> dim(1, 140);
      const auto m = random_mask(rng, dim(rng), dim(rng), 0.002);
      const auto want = oracle::brute_bbox(m);
      if (want.r0 < 0) {
        CHECK_THROWS_AS(bbox_from_mask(m), EmptyMaskError);
        continue;
      }
      CHECK(bbox_from_mask(m) == BoundingBox{want.r0, want.c0, want.r1, want.c1});
    }
  }

  TEST_CASE("expand clamps to the image") {
    const BoundingBox b{1, 2, 3, 4};
    CHECK(expand(b, 0, 10, 10) == b);
    CHECK(expand(b, 2, 10, 6) == BoundingBox{0, 0, 5, 5});
    CHECK_THROWS_AS(expand(b, -1, 10, 10), ValidationError);
    CHECK(touches_border(BoundingBox{0, 3, 4, 4}, 10, 10));
    CHECK_FALSE(touches_border(BoundingBox{1, 1, 8, 8}, 10, 10));
    CHECK(touches_border(BoundingBox{1, 1, 8, 9}, 10, 10));
  }

  TEST_CASE("crop variants") {
    GrayImage uniform(6, 6, 128);
    auto two = make_record("a", "img", rect_mask(6, 6, 2, 3, 3, 4), 1, 1);
    const auto raw = crop_particle(uniform, two, CropVariant::raw_crop);
    CHECK(raw.pixels.rows() == 2);
    CHECK(raw.pixels.cols() == 2);
    for (auto v : raw.pixels.pixels()) CHECK(v == 128);

    // L shape: the top-right corner of its box is outside the mask.
    BinaryMask l(5, 5);
    l(1, 1) = l(2, 1) = l(3, 1) = l(3, 2) = l(3, 3) = 1;
    GrayImage img(5, 5);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) img(r, c) = static_cast<std::uint8_t>(10 + 10 * r + c);
    const auto rec = make_record("l", "img", l, 1, 1);
    const auto nobg = crop_particle(img, rec, CropVariant::background_removed);
    CHECK(nobg.bbox == BoundingBox{1, 1, 3, 3});
    CHECK(nobg.pixels(0, 2) == 0);
    CHECK(nobg.pixels(2, 2) == img(3, 3));
    const auto bin = crop_particle(img, rec, CropVariant::binary_mask);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) CHECK(bin.pixels(r, c) == (l(r + 1, c + 1) ? 255 : 0));

    CHECK(with_variant(raw, CropVariant::binary_mask).pixels == GrayImage(2, 2, 255));
    CHECK_THROWS_AS(with_variant(bin, CropVariant::raw_crop), ValidationError);
    CHECK_THROWS_AS(crop_particle(GrayImage(4, 5), rec, CropVariant::raw_crop), ValidationError);
  }

  TEST_CASE("crop margin grows the box and clamps") {
    GrayImage img(8, 8, 7);
    const auto rec = make_record("a", "img", rect_mask(8, 8, 0, 3, 1, 4), 1, 1);
    const auto crop = crop_particle(img, rec, CropVariant::raw_crop, 2);
    CHECK(crop.bbox == BoundingBox{0, 1, 3, 6});
    CHECK(crop.pixels.rows() == 4);
    CHECK(crop.pixels.cols() == 6);
  }

  TEST_CASE("background removal zeroes every outside pixel exhaustively on 3x3") {
    GrayImage img(3, 3);
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = static_cast<std::uint8_t>(100 + i);
    for (unsigned bits = 1; bits < 512; ++bits) {
      BinaryMask m(3, 3);
      for (int i = 0; i < 9; ++i) m.pixels()[static_cast<std::size_t>(i)] = (bits >> i) & 1;
      const auto rec = make_record("x", "img", m, 1, 1);
      const auto crop = crop_particle(img, rec, CropVariant::background_removed);
      REQUIRE(crop.pixels.rows() == crop.bbox.height());
      REQUIRE(crop.pixels.cols() == crop.bbox.width());
      for (int r = 0; r < crop.pixels.rows(); ++r) {
        for (int c = 0; c < crop.pixels.cols(); ++c) {
          const int sr = r + crop.bbox.row_min, sc = c + crop.bbox.col_min;
          REQUIRE(crop.pixels(r, c) == (m(sr, sc) ? img(sr, sc) : 0));
        }
      }
    }
  }

  TEST_CASE("crop variant spellings") {
    CHECK(parse_crop_variant("raw") == CropVariant::raw_crop);
    CHECK(parse_crop_variant("nobg") == CropVariant::background_removed);
    CHECK(parse_crop_variant("mask") == CropVariant::binary_mask);
    CHECK(parse_crop_variant("background_removed") == CropVariant::background_removed);
    CHECK_THROWS_AS(parse_crop_variant("blur"), ValidationError);
  }

  TEST_CASE("split_components uses 8-connectivity and raster order") {
    BinaryMask m(5, 6);
    m(0, 4) = 1;                      // component found first
    m(1, 0) = m(2, 1) = 1;            // diagonal neighbours join
    m(4, 4) = m(4, 5) = 1;
    const auto parts = split_components(make_record("p", "img", m, 0.9, 0.8));
    REQUIRE(parts.size() == 3);
    CHECK(parts[0].id == "p_c0");
    CHECK(parts[0].area_px == 1);
    CHECK(parts[1].area_px == 2);
    CHECK(parts[1].mask(2, 1) == 1);
    CHECK(parts[2].id == "p_c2");
    CHECK(parts[2].predicted_iou == 0.9);
    const auto whole = make_record("q", "img", rect_mask(4, 4, 0, 0, 1, 1), 1, 1);
    const auto same = split_components(whole);
    REQUIRE(same.size() == 1);
    CHECK(same[0] == whole);
  }

  TEST_CASE("overlaps are reported, not removed") {
    const auto a = make_record("a", "img", rect_mask(10, 10, 0, 0, 4, 4), 1, 1);
    const auto b = make_record("b", "img", rect_mask(10, 10, 0, 0, 4, 3), 1, 1);
    const auto c = make_record("c", "img", rect_mask(10, 10, 6, 6, 9, 9), 1, 1);
    CHECK(mask_iou(a.mask, b.mask) == doctest::Approx(0.8));
    const std::vector<MaskRecord> all{a, b, c};
    CHECK(find_overlaps(all, 0.8).empty());
    const auto pairs = find_overlaps(all, 0.75);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].first == "a");
    CHECK(pairs[0].second == "b");
  }

  TEST_CASE("rle encodes row-major runs starting with background") {
    BinaryMask m(2, 3);
    m(0, 0) = m(0, 1) = m(1, 2) = 1;
    CHECK(rle_encode(m) == std::vector<std::int64_t>{0, 2, 3, 1});
    const std::vector<std::int64_t> counts{0, 2, 3, 1};
    CHECK(rle_decode(2, 3, counts) == m);
    const std::vector<std::int64_t> short_counts{2, 2};
    CHECK_THROWS_AS(rle_decode(2, 3, short_counts), FormatError);
    const std::vector<std::int64_t> negative{-1, 7};
    CHECK_THROWS_AS(rle_decode(2, 3, negative), FormatError);
  }

  TEST_CASE("rle and png manifests decode identically and round-trip bit-exact") {
    testing_support::ScratchDir dir("masks");
    std::mt19937_64 rng(3);
    MaskSet set{"scene.png", {}};
    for (int i = 0; i < 25; ++i) {
      auto m = random_mask(rng, 17, 23, 0.3);
      m(0, 0) = 1;
      set.masks.push_back(make_record("m" + std::to_string(i), "scene.png", m, 0.97, 0.96));
    }
    write_mask_set(set, dir / "png", MaskEncoding::png);
    write_mask_set(set, dir / "rle", MaskEncoding::rle);
    const auto a = read_mask_set(dir / "png");
    const auto b = read_mask_set(dir / "rle" / "masks.json");
    REQUIRE(a.masks.size() == set.masks.size());
    CHECK(a.masks == set.masks);
    CHECK(b.masks == set.masks);

    // Writing what was read reproduces the files byte for byte.
    write_mask_set(a, dir / "png2", MaskEncoding::png);
    write_mask_set(b, dir / "rle2", MaskEncoding::rle);
    CHECK(sha256_file(dir / "rle" / "masks.json") == sha256_file(dir / "rle2" / "masks.json"));
    CHECK(sha256_file(dir / "png" / "masks.json") == sha256_file(dir / "png2" / "masks.json"));
    CHECK(sha256_file(dir / "png" / "m7.png") == sha256_file(dir / "png2" / "m7.png"));
  }

  TEST_CASE("manifest area disagreeing with the raster is rejected") {
    testing_support::ScratchDir dir("area");
    BinaryMask m(4, 4);
    for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = 1;
    write_mask_set({"s", {make_record("nine", "s", m, 1, 1)}}, dir.path(), MaskEncoding::rle);
    auto doc = nlohmann::json::parse(read_text_file(dir / "masks.json"));
    doc["masks"][0]["area"] = 10;
    write_text_file(dir / "masks.json", doc.dump());
    CHECK_THROWS_AS(read_mask_set(dir.path()), ValidationError);
  }

  TEST_CASE("malformed manifests") {
    testing_support::ScratchDir dir("bad");
    write_text_file(dir / "masks.json", "{\"source_image\": \"s\", \"masks\": [{\"id\": \"x\"}]}");
    CHECK_THROWS_AS(read_mask_set(dir.path()), FormatError);
    write_text_file(dir / "masks.json", "not json");
    CHECK_THROWS_AS(read_mask_set(dir.path()), FormatError);
  }

  TEST_CASE("png mask files treat any non-zero pixel as foreground") {
    testing_support::ScratchDir dir("png");
    GrayImage g(3, 3);
    g(1, 1) = 17;
    g(2, 0) = 255;
    write_gray_png(g, dir / "m.png");
    const auto m = read_mask_png(dir / "m.png");
    CHECK(count_foreground(m) == 2);
    CHECK(m(1, 1) == 1);
  }

  TEST_CASE("16-bit rescale maps min to 0 and max to 255") {
    Raster<std::uint16_t> r(1, 3);
    r(0, 0) = 1000;
    r(0, 1) = 2000;
    r(0, 2) = 3000;
    const auto g = rescale_to_8bit(r);
    CHECK(g(0, 0) == 0);
    CHECK(g(0, 2) == 255);
    CHECK(rescale_to_8bit(Raster<std::uint16_t>(2, 2, 9)) == GrayImage(2, 2, 0));
  }
}
