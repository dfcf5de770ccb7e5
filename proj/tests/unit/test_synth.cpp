#include "doctest.h"

#include <cmath>
#include <numbers>
#include <set>

#include "npshape/error.hpp"
#include "npshape/synth.hpp"
#include "scratch.hpp"

using namespace npshape;
using namespace npshape::synth;

namespace {

SynthSpec small_spec(std::map<ShapeClass, int> counts, std::uint64_t seed = 7) {
  SynthSpec s;
  s.seed = seed;
  s.rows = 320;
  s.cols = 320;
  s.counts = std::move(counts);
  return s;
}

// True when some foreground pixel of `a` lies within Chebyshev distance `gap` of `b`.
bool near(const BinaryMask& a, const BinaryMask& b, int gap) {
  for (int r = 0; r < a.rows(); ++r) {
    for (int c = 0; c < a.cols(); ++c) {
      if (!a(r, c)) continue;
      for (int dr = -gap; dr <= gap; ++dr) {
        for (int dc = -gap; dc <= gap; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && cc >= 0 && rr < b.rows() && cc < b.cols() && b(rr, cc)) return true;
        }
      }
    }
  }
  return false;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("requested counts and labels") {
    const auto scene = generate_scene(small_spec({{ShapeClass::cube, 10}}));
    REQUIRE(scene.masks.size() == 10);
    for (const auto& m : scene.masks) {
      CHECK(scene.labels.at(m.id) == "cube");
      CHECK(m.predicted_iou == 1.0);
      CHECK(m.stability_score == 1.0);
      CHECK(m.source_image_id == scene.id);
    }
    const auto mixed = generate_scene(
        small_spec({{ShapeClass::triangle, 3}, {ShapeClass::circle, 2}, {ShapeClass::blob, 2}}));
    std::map<std::string, int> seen;
    for (const auto& [id, label] : mixed.labels) ++seen[label];
    CHECK(seen == std::map<std::string, int>{{"triangle", 3}, {"circle", 2}, {"blob", 2}});
  }

  TEST_CASE("same seed gives a bitwise identical scene") {
    const auto spec = small_spec({{ShapeClass::pyramid, 4}, {ShapeClass::truncated_triangle, 4}});
    const auto a = generate_scene(spec);
    const auto b = generate_scene(spec);
    CHECK(a.image == b.image);
    CHECK(a.masks == b.masks);
    CHECK(a.labels == b.labels);
    auto other = spec;
    other.seed = 8;
    CHECK_FALSE(generate_scene(other).image == a.image);
  }

  TEST_CASE("dot area tracks the analytic disc area") {
    auto spec = small_spec({{ShapeClass::dot, 30}});
    spec.dot_diameter = 30;
    const double disc = std::numbers::pi * 15.0 * 15.0;
    const auto scene = generate_scene(spec);
    for (const auto& m : scene.masks) {
      CHECK(m.area_px >= disc * 0.9);
      CHECK(m.area_px <= disc * 1.1);
      CHECK(m.area_px >= kMinDotArea);
    }
  }

  TEST_CASE("masks are disjoint with a two pixel gap and pass validation") {
    const auto scene = generate_scene(small_spec(
        {{ShapeClass::cube, 3}, {ShapeClass::triangle, 3}, {ShapeClass::blob, 3}, {ShapeClass::dot, 3}},
        11));
    for (std::size_t i = 0; i < scene.masks.size(); ++i) {
      const auto& m = scene.masks[i];
      CHECK_NOTHROW(mask_io::validate(m));
      CHECK(m.area_px > 0);
      if (scene.labels.at(m.id) != "dot") CHECK(m.area_px >= 500);
      for (std::size_t j = i + 1; j < scene.masks.size(); ++j) {
        CHECK_FALSE(near(m.mask, scene.masks[j].mask, 2));
      }
    }
    mask_io::FilterThresholds dots;
    dots.min_area_px = 250;
    CHECK(mask_io::filter_masks(scene.masks, dots).size() == scene.masks.size());
  }

  TEST_CASE("placement fails on an impossible request") {
    SynthSpec spec;
    spec.rows = 200;
    spec.cols = 200;
    spec.min_size = 40;
    spec.max_size = 50;
    spec.counts = {{ShapeClass::cube, 30}};
    CHECK_THROWS_AS(generate_scene(spec), PlacementError);
    spec.overlap_allowed = true;
    CHECK(generate_scene(spec).masks.size() == 30);
  }

  TEST_CASE("spec validation") {
    auto spec = small_spec({{ShapeClass::cube, 1}});
    spec.min_size = 90;
    spec.max_size = 40;
    CHECK_THROWS_AS(generate_scene(spec), ValidationError);
    spec = small_spec({{ShapeClass::cube, -1}});
    CHECK_THROWS_AS(validate(spec), ValidationError);
    CHECK_THROWS_AS(parse_shape_class("hexagon"), ValidationError);
    CHECK(parse_shape_class("truncated_triangle") == ShapeClass::truncated_triangle);
    for (auto s : kAllShapes) CHECK(parse_shape_class(to_string(s)) == s);
  }

  TEST_CASE("scene plan covers every requested particle") {
    const auto spec = preset_dataset("triangles");
    const auto plan = plan_scenes(spec);
    std::map<ShapeClass, int> total;
    std::set<std::uint64_t> seeds;
    for (const auto& s : plan) {
      seeds.insert(s.seed);
      for (const auto& [shape, n] : s.counts) total[shape] += n;
    }
    CHECK(seeds.size() == plan.size());
    CHECK(total[ShapeClass::triangle] == 96);
    CHECK(total[ShapeClass::truncated_triangle] == 22);
    CHECK(total[ShapeClass::circle] == 24);
  }

  TEST_CASE("presets follow the reference split sizes") {
    const auto cubes = preset_dataset("cubes");
    CHECK(cubes.classes.at(ShapeClass::cube) == dataset::SplitCounts{10, 73, 176});
    CHECK(cubes.classes.at(ShapeClass::pyramid) == dataset::SplitCounts{10, 58, 12});
    const auto tri = preset_dataset("triangles");
    CHECK(tri.classes.at(ShapeClass::triangle) == dataset::SplitCounts{7, 6, 83});
    const auto dots = preset_dataset("dots");
    CHECK(dots.classes.at(ShapeClass::dot) == dataset::SplitCounts{6, 9, 111});
    CHECK(dots.classes.at(ShapeClass::blob) == dataset::SplitCounts{6, 8, 7});
    CHECK_THROWS_AS(preset_dataset("rods"), ValidationError);
  }

  TEST_CASE("exported splits honour the requested counts and are disjoint") {
    testing_support::ScratchDir dir("export");
    std::vector<SynthScene> scenes{
        generate_scene(small_spec({{ShapeClass::circle, 6}, {ShapeClass::cube, 5}}, 1)),
        generate_scene(small_spec({{ShapeClass::circle, 5}, {ShapeClass::cube, 5}}, 2))};
    scenes[1].id = "second";
    for (auto& m : scenes[1].masks) {
      const auto label = scenes[1].labels.at(m.id);
      scenes[1].labels.erase(m.id);
      m.id = "second_" + m.id;
      m.source_image_id = "second";
      scenes[1].labels[m.id] = label;
    }
    const std::map<std::string, dataset::SplitCounts> splits{{"circle", {3, 2, 6}}, {"cube", {2, 2, 4}}};
    const auto index = export_dataset(scenes, splits, 5, dir.path());
    CHECK(index.class_counts("train") == std::map<std::string, int>{{"circle", 3}, {"cube", 2}});
    CHECK(index.class_counts("validation") == std::map<std::string, int>{{"circle", 2}, {"cube", 2}});
    CHECK(index.class_counts("test") == std::map<std::string, int>{{"circle", 6}, {"cube", 4}});
    std::set<std::string> all;
    std::size_t n = 0;
    for (const auto& [name, ids] : index.splits) {
      all.insert(ids.begin(), ids.end());
      n += ids.size();
    }
    CHECK(all.size() == n);

    const auto back = dataset::read_index(dir / "labels.json");
    CHECK(back.labels == index.labels);
    CHECK(back.splits == index.splits);
    REQUIRE(back.scenes.size() == 2);
    const auto masks = mask_io::read_mask_set(dir / back.scenes[0].masks);
    CHECK(masks.masks == scenes[0].masks);

    const std::map<std::string, dataset::SplitCounts> greedy{{"circle", {10, 2, 0}}};
    CHECK_THROWS_AS(export_dataset(scenes, greedy, 5, dir / "x"), ValidationError);
  }

  TEST_CASE("table-shaped dataset from a json spec") {
    testing_support::ScratchDir dir("tri");
    const std::string text = R"({"name": "tri", "seed": 3,
      "splits": {"triangle": [7, 6, 83], "circle": {"train": 2, "validation": 1, "test": 3}}})";
    CHECK(is_dataset_spec(text));
    const auto spec = dataset_spec_from_json(text);
    CHECK(spec.classes.at(ShapeClass::circle) == dataset::SplitCounts{2, 1, 3});
    const auto index = generate_dataset(spec, dir.path());
    CHECK(index.class_counts("train").at("triangle") == 7);
    CHECK(index.class_counts("validation").at("triangle") == 6);
    CHECK(index.class_counts("test").at("triangle") == 83);
    CHECK(index.class_counts("test").at("circle") == 3);
    CHECK(index.labels.size() == 102);
  }

  TEST_CASE("scene json spec") {
    const auto spec = synth_spec_from_json(
        R"({"seed": 4, "canvas": [200, 300], "counts": {"cube": 2, "dot": 1}, "dot_diameter": 24})");
    CHECK_FALSE(is_dataset_spec(R"({"counts": {"cube": 1}})"));
    CHECK(spec.rows == 200);
    CHECK(spec.cols == 300);
    CHECK(spec.counts.at(ShapeClass::cube) == 2);
    CHECK(spec.dot_diameter == 24);
    CHECK_THROWS_AS(synth_spec_from_json(R"({"counts": {"cube": 1}, "canvas": [1]})"), FormatError);
    CHECK_THROWS_AS(synth_spec_from_json("[]"), FormatError);
  }
}
