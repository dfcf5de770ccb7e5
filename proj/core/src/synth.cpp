#include "npshape/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>

#include "json.hpp"
#include "npshape/digest.hpp"
#include "npshape/error.hpp"
#include "npshape/image_io.hpp"

namespace npshape::synth {

using nlohmann::json;

const char* to_string(ShapeClass shape) {
  switch (shape) {
    case ShapeClass::cube: return "cube";
    case ShapeClass::pyramid: return "pyramid";
    case ShapeClass::triangle: return "triangle";
    case ShapeClass::truncated_triangle: return "truncated_triangle";
    case ShapeClass::circle: return "circle";
    case ShapeClass::dot: return "dot";
    case ShapeClass::blob: return "blob";
  }
  return "?";
}

ShapeClass parse_shape_class(const std::string& text) {
  for (auto s : kAllShapes) {
    if (text == to_string(s)) return s;
  }
  throw ValidationError("unknown shape class '" + text + "'");
}

void validate(const SynthSpec& spec) {
  if (spec.rows <= 0 || spec.cols <= 0) throw ValidationError("synth canvas must be positive");
  if (spec.min_size <= 2 || spec.max_size < spec.min_size) {
    throw ValidationError("synth size range must satisfy 2 < min <= max");
  }
  if (spec.dot_diameter <= 2) throw ValidationError("dot diameter must exceed 2 px");
  if (spec.noise_sigma < 0 || spec.blur_sigma < 0) {
    throw ValidationError("noise and blur sigmas must be >= 0");
  }
  const int largest = std::max(2 * spec.max_size, spec.dot_diameter * 2) + 8;
  if (largest > std::min(spec.rows, spec.cols)) {
    throw ValidationError("shapes up to " + std::to_string(spec.max_size) +
                          " px do not fit the canvas");
  }
  for (const auto& [shape, n] : spec.counts) {
    if (n < 0) throw ValidationError(std::string("negative count for ") + to_string(shape));
  }
}

namespace {

// Portable generator helpers; std distributions differ between libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct Point {
  double x, y;
};

struct ShapeModel {
  std::vector<Point> outline;  // empty for discs
  double cx = 0, cy = 0, radius = 0;
  double extent = 0;  // max distance from (cx, cy) to the outline
  std::function<double(double, double)> shade;

  bool inside(double x, double y) const {
    if (outline.empty()) {
      const double dx = x - cx, dy = y - cy;
      return dx * dx + dy * dy <= radius * radius;
    }
    bool in = false;
    for (std::size_t i = 0, j = outline.size() - 1; i < outline.size(); j = i++) {
      const auto& a = outline[i];
      const auto& b = outline[j];
      if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
    }
    return in;
  }
};

Point rotate(Point p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {p.x * c - p.y * s, p.x * s + p.y * c};
}

std::vector<Point> equilateral(double side, double angle) {
  const double r = side / std::sqrt(3.0);
  std::vector<Point> v;
  for (int k = 0; k < 3; ++k) {
    v.push_back(rotate({r, 0.0}, angle + k * 2.0 * std::numbers::pi / 3.0));
  }
  return v;
}

double max_radius(const std::vector<Point>& pts) {
  double r = 0;
  for (const auto& p : pts) r = std::max(r, std::hypot(p.x, p.y));
  return r;
}

// Shapes are built around the origin; place() translates them.
ShapeModel make_shape(ShapeClass cls, const SynthSpec& spec, Rng& rng) {
  ShapeModel m;
  const double size = rng.uniform(spec.min_size, spec.max_size);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double level = rng.uniform(165.0, 215.0);

  switch (cls) {
    case ShapeClass::cube: {
      const double h = size / 2.0;
      for (Point p : {Point{-h, -h}, Point{h, -h}, Point{h, h}, Point{-h, h}}) {
        m.outline.push_back(rotate(p, angle));
      }
      m.shade = [=](double x, double y) {
        const Point q = rotate({x, y}, -angle);
        return level + (q.x + q.y > 0 ? 22.0 : -8.0) + 10.0 * q.x / h;
      };
      break;
    }
    case ShapeClass::pyramid: {
      m.outline = equilateral(size * 1.3, angle);
      const auto v = m.outline;
      m.shade = [=](double x, double y) {
        // Face = sub-triangle (centroid, edge) holding the point; the vertex
        // opposite that edge has the smallest barycentric weight.
        const double det = (v[1].y - v[2].y) * (v[0].x - v[2].x) +
                           (v[2].x - v[1].x) * (v[0].y - v[2].y);
        const double b0 = ((v[1].y - v[2].y) * (x - v[2].x) + (v[2].x - v[1].x) * (y - v[2].y)) / det;
        const double b1 = ((v[2].y - v[0].y) * (x - v[2].x) + (v[0].x - v[2].x) * (y - v[2].y)) / det;
        const double b2 = 1.0 - b0 - b1;
        const int face = b0 <= b1 && b0 <= b2 ? 0 : (b1 <= b2 ? 1 : 2);
        static constexpr double kFace[] = {20.0, -25.0, 0.0};
        return level + kFace[face];
      };
      break;
    }
    case ShapeClass::triangle: {
      const double side = size * 1.3;
      m.outline = equilateral(side, angle);
      for (auto& p : m.outline) {
        p.x += rng.uniform(-0.06, 0.06) * side;
        p.y += rng.uniform(-0.06, 0.06) * side;
      }
      m.shade = [=](double x, double y) { return level + 8.0 * rotate({x, y}, -angle).x / side; };
      break;
    }
    case ShapeClass::truncated_triangle: {
      const double side = size * 1.3;
      const auto v = equilateral(side, angle);
      for (int i = 0; i < 3; ++i) {
        const auto& cur = v[static_cast<std::size_t>(i)];
        const auto& prev = v[static_cast<std::size_t>((i + 2) % 3)];
        const auto& next = v[static_cast<std::size_t>((i + 1) % 3)];
        const double f = rng.uniform(0.15, 0.30);
        m.outline.push_back({cur.x + f * (prev.x - cur.x), cur.y + f * (prev.y - cur.y)});
        m.outline.push_back({cur.x + f * (next.x - cur.x), cur.y + f * (next.y - cur.y)});
      }
      m.shade = [=](double x, double y) { return level + 8.0 * rotate({x, y}, -angle).x / side; };
      break;
    }
    case ShapeClass::circle:
    case ShapeClass::dot: {
      const double d = cls == ShapeClass::dot
                           ? spec.dot_diameter * rng.uniform(0.96, 1.04)
                           : size;
      m.radius = d / 2.0;
      const double r = m.radius;
      m.shade = [=](double x, double y) { return level + 25.0 * (1.0 - (x * x + y * y) / (r * r)); };
      break;
    }
    case ShapeClass::blob: {
      const double base = size / 2.0;
      double amp[3], phase[3];
      for (int k = 0; k < 3; ++k) {
        amp[k] = rng.uniform(0.10, 0.25);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
      constexpr int kVertices = 72;
      for (int i = 0; i < kVertices; ++i) {
        const double t = 2.0 * std::numbers::pi * i / kVertices;
        double r = 1.0;
        for (int k = 0; k < 3; ++k) r += amp[k] * std::cos((k + 2) * t + phase[k]);
        m.outline.push_back({base * r * std::cos(t), base * r * std::sin(t)});
      }
      m.shade = [=](double x, double) { return level - 6.0 + 12.0 * x / (2.0 * base); };
      break;
    }
  }
  m.extent = m.outline.empty() ? m.radius : max_radius(m.outline);
  return m;
}

struct Footprint {
  int r0 = 0, c0 = 0;
  BinaryMask local;
};

Footprint rasterize(const ShapeModel& m, double cx, double cy) {
  Footprint f;
  const int r0 = static_cast<int>(std::floor(cy - m.extent)) - 1;
  const int r1 = static_cast<int>(std::ceil(cy + m.extent)) + 1;
  const int c0 = static_cast<int>(std::floor(cx - m.extent)) - 1;
  const int c1 = static_cast<int>(std::ceil(cx + m.extent)) + 1;
  f.r0 = r0;
  f.c0 = c0;
  f.local = BinaryMask(r1 - r0 + 1, c1 - c0 + 1);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (m.inside(c + 0.5 - cx, r + 0.5 - cy)) f.local(r - r0, c - c0) = 1;
    }
  }
  return f;
}

Raster<double> gaussian_blur(const Raster<double>& img, double sigma) {
  if (sigma <= 0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  const int rows = img.rows(), cols = img.cols();
  Raster<double> tmp(rows, cols), out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) {
        s += k[static_cast<std::size_t>(i + radius)] * img(r, std::clamp(c + i, 0, cols - 1));
      }
      tmp(r, c) = s;
    }
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) {
        s += k[static_cast<std::size_t>(i + radius)] * tmp(std::clamp(r + i, 0, rows - 1), c);
      }
      out(r, c) = s;
    }
  }
  return out;
}

std::string format_index(const char* fmt, int value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, value);
  return buf;
}

constexpr int kMaxAttempts = 1000;
constexpr int kGap = 2;

}  // namespace

SynthScene generate_scene(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  std::vector<ShapeClass> order;
  for (auto shape : kAllShapes) {
    auto it = spec.counts.find(shape);
    if (it != spec.counts.end()) order.insert(order.end(), static_cast<std::size_t>(it->second), shape);
  }
  rng.shuffle(order);

  SynthScene scene;
  scene.id = spec.scene_id;
  Raster<double> canvas(spec.rows, spec.cols, spec.background);
  BinaryMask occupied(spec.rows, spec.cols);

  int serial = 0;
  for (ShapeClass cls : order) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const ShapeModel model = make_shape(cls, spec, rng);
      const double margin = model.extent + 2.0;
      if (2 * margin >= std::min(spec.rows, spec.cols)) continue;
      const double cx = rng.uniform(margin, spec.cols - margin);
      const double cy = rng.uniform(margin, spec.rows - margin);
      const Footprint fp = rasterize(model, cx, cy);

      std::int64_t area = 0;
      bool clash = false;
      for (int r = 0; r < fp.local.rows() && !clash; ++r) {
        for (int c = 0; c < fp.local.cols(); ++c) {
          if (!fp.local(r, c)) continue;
          const int rr = fp.r0 + r, cc = fp.c0 + c;
          if (!occupied.contains(rr, cc) || (!spec.overlap_allowed && occupied(rr, cc))) {
            clash = true;
            break;
          }
          ++area;
        }
      }
      if (clash || area == 0) continue;
      if (cls == ShapeClass::dot && area < kMinDotArea) continue;

      BinaryMask mask(spec.rows, spec.cols);
      for (int r = 0; r < fp.local.rows(); ++r) {
        for (int c = 0; c < fp.local.cols(); ++c) {
          if (!fp.local(r, c)) continue;
          const int rr = fp.r0 + r, cc = fp.c0 + c;
          mask(rr, cc) = 1;
          canvas(rr, cc) = model.shade(cc + 0.5 - cx, rr + 0.5 - cy);
          for (int dr = -kGap; dr <= kGap; ++dr) {
            for (int dc = -kGap; dc <= kGap; ++dc) {
              if (occupied.contains(rr + dr, cc + dc)) occupied(rr + dr, cc + dc) = 1;
            }
          }
        }
      }
      const std::string id = spec.scene_id + "_m" + format_index("%03d", serial++);
      scene.labels[id] = to_string(cls);
      scene.masks.push_back(mask_io::make_record(id, spec.scene_id, std::move(mask), 1.0, 1.0));
      placed = true;
    }
    if (!placed) {
      throw PlacementError(std::string("could not place a ") + to_string(cls) + " in scene '" +
                           spec.scene_id + "' after " + std::to_string(kMaxAttempts) +
                           " attempts");
    }
  }

  canvas = gaussian_blur(canvas, spec.blur_sigma);
  scene.image = GrayImage(spec.rows, spec.cols);
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    double v = canvas.pixels()[i];
    if (spec.noise_sigma > 0) v += spec.noise_sigma * rng.normal();
    scene.image.pixels()[i] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
  }
  return scene;
}

std::vector<SynthSpec> plan_scenes(const DatasetSpec& spec) {
  if (spec.shapes_per_scene <= 0) throw ValidationError("shapes_per_scene must be positive");
  std::vector<ShapeClass> items;
  for (auto shape : kAllShapes) {
    auto it = spec.classes.find(shape);
    if (it == spec.classes.end()) continue;
    const auto& counts = it->second;
    if (counts.train < 0 || counts.validation < 0 || counts.test < 0) {
      throw ValidationError(std::string("negative split count for ") + to_string(shape));
    }
    items.insert(items.end(), static_cast<std::size_t>(counts.total()), shape);
  }
  const int scenes = static_cast<int>((items.size() + spec.shapes_per_scene - 1) /
                                      static_cast<std::size_t>(spec.shapes_per_scene));
  std::vector<SynthSpec> out(static_cast<std::size_t>(scenes));
  for (int s = 0; s < scenes; ++s) {
    auto& scene = out[static_cast<std::size_t>(s)];
    scene.seed = spec.seed * 1000003ULL + static_cast<std::uint64_t>(s);
    scene.scene_id = spec.name + "_s" + format_index("%03d", s);
    scene.rows = spec.rows;
    scene.cols = spec.cols;
    scene.min_size = spec.min_size;
    scene.max_size = spec.max_size;
    scene.dot_diameter = spec.dot_diameter;
    scene.noise_sigma = spec.noise_sigma;
    scene.blur_sigma = spec.blur_sigma;
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    ++out[i % static_cast<std::size_t>(scenes)].counts[items[i]];
  }
  return out;
}

namespace {

void write_scene(const SynthScene& scene, const std::filesystem::path& dir,
                 mask_io::MaskEncoding encoding, dataset::DatasetIndex& index) {
  const std::string image_name = scene.id + ".png";
  write_gray_png(scene.image, dir / image_name);
  mask_io::write_mask_set({scene.id, scene.masks}, dir / scene.id, encoding);
  index.scenes.push_back({scene.id, image_name, std::filesystem::path(scene.id) / "masks.json"});
  for (const auto& [id, label] : scene.labels) index.labels[id] = label;
}

void assign_splits(dataset::DatasetIndex& index, const std::vector<std::string>& mask_order,
                   const std::map<std::string, dataset::SplitCounts>& splits, std::uint64_t seed) {
  Rng rng(seed ^ 0x5eedULL);
  for (auto& name : {"train", "validation", "test"}) index.splits[name];
  for (const auto& [label, counts] : splits) {
    std::vector<std::string> ids;
    for (const auto& id : mask_order) {
      if (index.labels.at(id) == label) ids.push_back(id);
    }
    if (static_cast<int>(ids.size()) < counts.total()) {
      throw ValidationError("class '" + label + "' has " + std::to_string(ids.size()) +
                            " masks but the splits request " + std::to_string(counts.total()));
    }
    rng.shuffle(ids);
    auto it = ids.begin();
    auto take = [&](const char* split, int n) {
      auto& dst = index.splits[split];
      dst.insert(dst.end(), it, it + n);
      it += n;
    };
    take("train", counts.train);
    take("validation", counts.validation);
    take("test", counts.test);
  }
  for (auto& [name, ids] : index.splits) std::sort(ids.begin(), ids.end());
}

}  // namespace

dataset::DatasetIndex export_dataset(std::span<const SynthScene> scenes,
                                     const std::map<std::string, dataset::SplitCounts>& splits,
                                     std::uint64_t seed, const std::filesystem::path& dir,
                                     mask_io::MaskEncoding encoding) {
  std::filesystem::create_directories(dir);
  dataset::DatasetIndex index;
  index.root = dir;
  std::vector<std::string> order;
  for (const auto& scene : scenes) {
    write_scene(scene, dir, encoding, index);
    for (const auto& m : scene.masks) order.push_back(m.id);
  }
  assign_splits(index, order, splits, seed);
  dataset::write_index(index, dir / "labels.json");
  return index;
}

dataset::DatasetIndex generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir,
                                       mask_io::MaskEncoding encoding) {
  std::filesystem::create_directories(dir);
  dataset::DatasetIndex index;
  index.root = dir;
  std::vector<std::string> order;
  for (const auto& scene_spec : plan_scenes(spec)) {
    const auto scene = generate_scene(scene_spec);
    write_scene(scene, dir, encoding, index);
    for (const auto& m : scene.masks) order.push_back(m.id);
  }
  std::map<std::string, dataset::SplitCounts> splits;
  for (const auto& [shape, counts] : spec.classes) splits[to_string(shape)] = counts;
  assign_splits(index, order, splits, spec.seed);
  dataset::write_index(index, dir / "labels.json");
  return index;
}

DatasetSpec preset_dataset(const std::string& name, std::uint64_t seed) {
  DatasetSpec spec;
  spec.seed = seed;
  spec.name = name;
  if (name == "cubes") {
    spec.classes = {{ShapeClass::cube, {10, 73, 176}}, {ShapeClass::pyramid, {10, 58, 12}}};
  } else if (name == "triangles") {
    spec.classes = {{ShapeClass::triangle, {7, 6, 83}},
                    {ShapeClass::truncated_triangle, {5, 6, 11}},
                    {ShapeClass::circle, {6, 7, 11}}};
  } else if (name == "dots") {
    spec.classes = {{ShapeClass::dot, {6, 9, 111}}, {ShapeClass::blob, {6, 8, 7}}};
    spec.shapes_per_scene = 20;
  } else {
    throw ValidationError("unknown dataset preset '" + name + "' (cubes, triangles, dots)");
  }
  return spec;
}

namespace {

template <typename Spec>
void read_common(const json& doc, Spec& spec) {
  spec.seed = doc.value("seed", spec.seed);
  if (doc.contains("canvas")) {
    const auto canvas = doc.at("canvas").get<std::vector<int>>();
    if (canvas.size() != 2) throw FormatError("synth spec: canvas must be [H, W]");
    spec.rows = canvas[0];
    spec.cols = canvas[1];
  }
  if (doc.contains("size_range")) {
    const auto range = doc.at("size_range").get<std::vector<int>>();
    if (range.size() != 2) throw FormatError("synth spec: size_range must be [min, max]");
    spec.min_size = range[0];
    spec.max_size = range[1];
  }
  spec.dot_diameter = doc.value("dot_diameter", spec.dot_diameter);
  spec.noise_sigma = doc.value("noise_sigma", spec.noise_sigma);
  spec.blur_sigma = doc.value("blur_sigma", spec.blur_sigma);
}

}  // namespace

SynthSpec synth_spec_from_json(const std::string& text) {
  SynthSpec spec;
  try {
    const auto doc = json::parse(text);
    read_common(doc, spec);
    spec.scene_id = doc.value("scene_id", spec.scene_id);
    spec.overlap_allowed = doc.value("overlap_allowed", spec.overlap_allowed);
    spec.background = doc.value("background", spec.background);
    for (const auto& [name, n] : doc.at("counts").items()) {
      spec.counts[parse_shape_class(name)] = n.get<int>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("synth spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

DatasetSpec dataset_spec_from_json(const std::string& text) {
  try {
    const auto doc = json::parse(text);
    DatasetSpec spec = doc.contains("preset")
                           ? preset_dataset(doc.at("preset").get<std::string>(), doc.value("seed", 1ULL))
                           : DatasetSpec{};
    read_common(doc, spec);
    spec.name = doc.value("name", spec.name);
    spec.shapes_per_scene = doc.value("shapes_per_scene", spec.shapes_per_scene);
    if (doc.contains("splits")) {
      spec.classes.clear();
      for (const auto& [name, v] : doc.at("splits").items()) {
        dataset::SplitCounts counts;
        if (v.is_array()) {
          const auto a = v.get<std::vector<int>>();
          if (a.size() != 3) throw FormatError("synth spec: split counts are [train, val, test]");
          counts = {a[0], a[1], a[2]};
        } else {
          counts = {v.value("train", 0), v.value("validation", 0), v.value("test", 0)};
        }
        spec.classes[parse_shape_class(name)] = counts;
      }
    }
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset spec: ") + e.what());
  }
}

bool is_dataset_spec(const std::string& text) {
  try {
    const auto doc = json::parse(text);
    return doc.contains("splits") || doc.contains("preset");
  } catch (const json::exception& e) {
    throw FormatError(std::string("synth spec: ") + e.what());
  }
}

}  // namespace npshape::synth
