#include "npshape/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <set>

#include "npshape/error.hpp"

namespace npshape::preprocess {

const char* to_string(Pipeline pipeline) {
  switch (pipeline) {
    case Pipeline::stretch_resize: return "stretch_resize";
    case Pipeline::pad_square_resize: return "pad_square_resize";
    case Pipeline::center_canvas: return "center_canvas";
    case Pipeline::masked_pad_resize: return "masked_pad_resize";
    case Pipeline::binary_mask_pad_resize: return "binary_mask_pad_resize";
  }
  return "?";
}

Pipeline parse_pipeline(const std::string& text) {
  for (auto p : kAllPipelines) {
    if (text == to_string(p)) return p;
  }
  throw ValidationError("unknown preprocessing pipeline '" + text + "'");
}

std::string PreprocSpec::tag() const {
  return std::string(to_string(pipeline)) + "/" + std::to_string(target_side) + "/" +
         std::to_string(pad_value);
}

PreprocSpec PreprocSpec::from_tag(const std::string& tag) {
  const auto a = tag.find('/');
  if (a == std::string::npos) return {parse_pipeline(tag)};
  const auto b = tag.find('/', a + 1);
  PreprocSpec spec;
  spec.pipeline = parse_pipeline(tag.substr(0, a));
  try {
    spec.target_side = std::stoi(tag.substr(a + 1, b - a - 1));
    if (b != std::string::npos) {
      const int pad = std::stoi(tag.substr(b + 1));
      if (pad < 0 || pad > 255) throw ValidationError("pad value out of range in '" + tag + "'");
      spec.pad_value = static_cast<std::uint8_t>(pad);
    }
  } catch (const std::logic_error&) {
    throw ValidationError("malformed preprocessing tag '" + tag + "'");
  }
  return spec;
}

void validate(const PreprocSpec& spec, int patch_size) {
  if (spec.target_side <= 0) throw ValidationError("target_side must be positive");
  if (patch_size > 0 && spec.target_side % patch_size != 0) {
    throw ValidationError("target_side " + std::to_string(spec.target_side) +
                          " is not a multiple of the patch size " + std::to_string(patch_size));
  }
}

GrayImage resize_bilinear(const GrayImage& image, int rows, int cols) {
  if (image.empty()) throw ValidationError("cannot resize an empty raster");
  if (rows <= 0 || cols <= 0) throw ValidationError("resize target must be positive");
  GrayImage out(rows, cols);
  const double sy = static_cast<double>(image.rows()) / rows;
  const double sx = static_cast<double>(image.cols()) / cols;

  struct Tap {
    int lo, hi;
    double frac;
  };
  auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
      double src = (i + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const int lo = static_cast<int>(std::floor(src));
      t[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, n_in - 1), src - lo};
    }
    return t;
  };
  const auto ty = taps(rows, image.rows(), sy);
  const auto tx = taps(cols, image.cols(), sx);

  for (int r = 0; r < rows; ++r) {
    const auto& y = ty[static_cast<std::size_t>(r)];
    for (int c = 0; c < cols; ++c) {
      const auto& x = tx[static_cast<std::size_t>(c)];
      const double top = image(y.lo, x.lo) * (1.0 - x.frac) + image(y.lo, x.hi) * x.frac;
      const double bottom = image(y.hi, x.lo) * (1.0 - x.frac) + image(y.hi, x.hi) * x.frac;
      const double v = top * (1.0 - y.frac) + bottom * y.frac;
      out(r, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
    }
  }
  return out;
}

GrayImage pad_to_square(const GrayImage& image, std::uint8_t pad_value) {
  const int side = std::max(image.rows(), image.cols());
  GrayImage out(side, side, pad_value);
  const int r0 = (side - image.rows()) / 2;
  const int c0 = (side - image.cols()) / 2;
  for (int r = 0; r < image.rows(); ++r) {
    for (int c = 0; c < image.cols(); ++c) out(r0 + r, c0 + c) = image(r, c);
  }
  return out;
}

GrayImage center_on_canvas(const GrayImage& image, int side, std::uint8_t pad_value) {
  if (image.rows() > side || image.cols() > side) {
    throw ValidationError("raster does not fit on a " + std::to_string(side) + " canvas");
  }
  GrayImage out(side, side, pad_value);
  const int r0 = (side - image.rows()) / 2;
  const int c0 = (side - image.cols()) / 2;
  for (int r = 0; r < image.rows(); ++r) {
    for (int c = 0; c < image.cols(); ++c) out(r0 + r, c0 + c) = image(r, c);
  }
  return out;
}

GrayImage apply_preproc(const mask_io::ParticleCrop& crop, const PreprocSpec& spec) {
  validate(spec);
  if (crop.pixels.empty()) throw ValidationError("crop '" + crop.mask_id + "' is empty");
  const int side = spec.target_side;
  auto pad_resize = [&](const GrayImage& img) {
    return resize_bilinear(pad_to_square(img, spec.pad_value), side, side);
  };
  switch (spec.pipeline) {
    case Pipeline::stretch_resize: return resize_bilinear(crop.pixels, side, side);
    case Pipeline::pad_square_resize: return pad_resize(crop.pixels);
    case Pipeline::center_canvas:
      if (crop.pixels.rows() <= side && crop.pixels.cols() <= side) {
        return center_on_canvas(crop.pixels, side, spec.pad_value);
      }
      return pad_resize(crop.pixels);
    case Pipeline::masked_pad_resize:
      return pad_resize(
          mask_io::with_variant(crop, mask_io::CropVariant::background_removed).pixels);
    case Pipeline::binary_mask_pad_resize:
      return pad_resize(mask_io::with_variant(crop, mask_io::CropVariant::binary_mask).pixels);
  }
  throw ValidationError("unhandled pipeline");
}

Centroids class_centroids(const embed::EmbeddingMatrix& x, std::span<const std::string> labels) {
  if (labels.size() != x.rows()) {
    throw ValidationError("class_centroids: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(x.rows()) + " rows");
  }
  if (x.rows() == 0) throw ValidationError("class_centroids: no rows");
  Centroids sums;
  std::map<std::string, std::size_t> counts;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto& acc = sums[labels[i]];
    acc.resize(static_cast<std::size_t>(x.dim), 0.0);
    const auto row = x.row(i);
    for (std::size_t d = 0; d < row.size(); ++d) acc[d] += row[d];
    ++counts[labels[i]];
  }
  for (auto& [label, acc] : sums) {
    const double n = static_cast<double>(counts[label]);
    for (auto& v : acc) v /= n;
  }
  return sums;
}

double avg_centroid_distance(const Centroids& centroids) {
  if (centroids.size() < 2) {
    throw ValidationError("avg_centroid_distance needs at least 2 classes");
  }
  std::vector<const std::vector<double>*> rows;
  for (const auto& [_, c] : centroids) rows.push_back(&c);
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      if (rows[i]->size() != rows[j]->size()) {
        throw ValidationError("centroids differ in dimension");
      }
      double ss = 0.0;
      for (std::size_t d = 0; d < rows[i]->size(); ++d) {
        const double diff = (*rows[i])[d] - (*rows[j])[d];
        ss += diff * diff;
      }
      total += std::sqrt(ss);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

namespace {

double candidate_distance(std::span<const mask_io::ParticleCrop> crops,
                          std::span<const std::string> labels, const PreprocSpec& spec,
                          const embed::Provider& provider, bool l2) {
  std::vector<GrayImage> rasters;
  std::vector<std::string> ids;
  rasters.reserve(crops.size());
  ids.reserve(crops.size());
  for (const auto& crop : crops) {
    rasters.push_back(apply_preproc(crop, spec));
    ids.push_back(crop.mask_id);
  }
  auto matrix = provider.embed_batch(ids, rasters);
  if (l2) matrix = embed::l2_normalize_rows(std::move(matrix));
  return avg_centroid_distance(class_centroids(matrix, labels));
}

}  // namespace

SelectionReport select_preproc(std::span<const mask_io::ParticleCrop> crops,
                               std::span<const std::string> labels,
                               std::span<const PreprocSpec> candidates,
                               const embed::Provider& provider, const SelectionOptions& options) {
  if (candidates.empty()) throw ValidationError("select_preproc: no candidates");
  if (crops.size() != labels.size()) {
    throw ValidationError("select_preproc: crops and labels differ in length");
  }
  if (std::set<std::string>(labels.begin(), labels.end()).size() < 2) {
    throw ValidationError("select_preproc needs at least 2 classes in the training labels");
  }

  SelectionReport report;
  report.candidates.reserve(candidates.size());
  if (options.parallel && candidates.size() > 1) {
    std::vector<std::future<double>> jobs;
    for (const auto& spec : candidates) {
      jobs.push_back(std::async(std::launch::async, [&, spec] {
        return candidate_distance(crops, labels, spec, provider, options.l2_normalize);
      }));
    }
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      report.candidates.push_back({candidates[i], jobs[i].get()});
    }
  } else {
    for (const auto& spec : candidates) {
      report.candidates.push_back(
          {spec, candidate_distance(crops, labels, spec, provider, options.l2_normalize)});
    }
  }

  const CandidateScore* best = nullptr;
  long long best_key = 0;
  for (const auto& c : report.candidates) {
    const long long key = std::llround(c.distance * 1e9);
    if (best == nullptr || key > best_key ||
        (key == best_key && c.spec.pipeline < best->spec.pipeline)) {
      best = &c;
      best_key = key;
    }
  }
  report.chosen = best->spec;
  return report;
}

std::vector<PreprocSpec> all_candidates(int target_side, std::uint8_t pad_value) {
  std::vector<PreprocSpec> out;
  for (auto p : kAllPipelines) out.push_back({p, target_side, pad_value});
  return out;
}

}  // namespace npshape::preprocess
