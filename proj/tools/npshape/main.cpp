#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <regex>
#include <set>

#include "npshape/analyze.hpp"
#include "npshape/classify.hpp"
#include "npshape/dataset.hpp"
#include "npshape/digest.hpp"
#include "npshape/embed.hpp"
#include "npshape/error.hpp"
#include "npshape/eval.hpp"
#include "npshape/graph_runner.hpp"
#include "npshape/image_io.hpp"
#include "npshape/mask_io.hpp"
#include "npshape/pipeline.hpp"
#include "npshape/preprocess.hpp"
#include "npshape/synth.hpp"

#ifndef NPSHAPE_VERSION
#define NPSHAPE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace npshape;

namespace {

std::string version_text() {
  std::string s = std::string("npshape ") + NPSHAPE_VERSION + "\n";
  s += "model schema " + std::to_string(classify::kModelSchemaVersion) + "\n";
  s += "run manifest schema " + std::to_string(pipeline::kManifestSchemaVersion) + "\n";
  s += std::string("embedding format ") + embed::kEmbeddingMagic + "\n";
  s += "tensor format NPTEN1\n";
  s += "mask manifest: masks.json (png | rle)\n";
  return s;
}

// Labels keyed by dataset id; component ids (<id>_c<k>) fall back to their source.
class LabelLookup {
 public:
  explicit LabelLookup(const fs::path& labels) : index_(dataset::read_index(labels)) {}

  const std::string* find(const std::string& id) const {
    static const std::regex component("(.*)_c[0-9]+");
    auto it = index_.labels.find(id);
    if (it != index_.labels.end()) return &it->second;
    std::smatch m;
    if (std::regex_match(id, m, component)) {
      it = index_.labels.find(m[1].str());
      if (it != index_.labels.end()) return &it->second;
    }
    return nullptr;
  }
  const std::string& at(const std::string& id) const {
    if (const auto* l = find(id)) return *l;
    throw ValidationError("no label for '" + id + "'");
  }
  bool in_split(const std::string& id, const std::string& split) const {
    const auto& ids = index_.split(split);
    static const std::regex component("(.*)_c[0-9]+");
    if (std::find(ids.begin(), ids.end(), id) != ids.end()) return true;
    std::smatch m;
    return std::regex_match(id, m, component) &&
           std::find(ids.begin(), ids.end(), m[1].str()) != ids.end();
  }
  const dataset::DatasetIndex& index() const { return index_; }

 private:
  dataset::DatasetIndex index_;
};

std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find(',', start);
    const auto item = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) out.push_back(item);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

struct CropOpts {
  std::string variant = "raw";
  int margin = 0;
};

void add_crop_opts(CLI::App* cmd, CropOpts& o) {
  cmd->add_option("--variant", o.variant, "raw | nobg | mask")->capture_default_str();
  cmd->add_option("--margin", o.margin, "Pixels added around the bounding box")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
}

// Crops of the masks of `splits` in a dataset index, in scene order.
std::vector<mask_io::ParticleCrop> dataset_crops(const LabelLookup& labels,
                                                 const std::vector<std::string>& splits,
                                                 const CropOpts& o, bool split_components) {
  const auto variant = mask_io::parse_crop_variant(o.variant);
  std::vector<mask_io::ParticleCrop> crops;
  const auto& index = labels.index();
  for (const auto& scene : index.scenes) {
    auto set = mask_io::read_mask_set(index.root / scene.masks);
    std::vector<mask_io::MaskRecord> records;
    for (auto& r : set.masks) {
      auto parts = split_components ? mask_io::split_components(r)
                                    : std::vector<mask_io::MaskRecord>{std::move(r)};
      for (auto& p : parts) {
        const bool wanted = std::any_of(splits.begin(), splits.end(), [&](const std::string& s) {
          return labels.in_split(p.id, s);
        });
        if (wanted) records.push_back(std::move(p));
      }
    }
    if (records.empty()) continue;
    const auto image = read_gray_png(index.root / scene.image);
    for (const auto& r : records) crops.push_back(mask_io::crop_particle(image, r, variant, o.margin));
  }
  return crops;
}

std::vector<mask_io::ParticleCrop> directory_crops(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<mask_io::ParticleCrop> crops;
  for (const auto& f : files) {
    mask_io::ParticleCrop c;
    c.mask_id = f.stem().string();
    c.pixels = read_gray_png(f);
    c.bbox = {0, 0, c.pixels.rows() - 1, c.pixels.cols() - 1};
    c.footprint = BinaryMask(c.pixels.rows(), c.pixels.cols(), 1);
    crops.push_back(std::move(c));
  }
  if (crops.empty()) throw ValidationError("no PNG crops in " + dir.string());
  return crops;
}

std::vector<std::string> labels_for(const LabelLookup& labels, const std::vector<std::string>& ids) {
  std::vector<std::string> out;
  for (const auto& id : ids) out.push_back(labels.at(id));
  return out;
}

void print_or_write(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_text_file(out, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-to-class pipeline for particle micrographs"};
  app.set_version_flag("--version", version_text());
  app.require_subcommand(1);

  // masks filter
  auto* masks = app.add_subcommand("masks", "Mask manifest utilities");
  masks->require_subcommand(1);
  auto* filter = masks->add_subcommand("filter", "Drop masks below the confidence/area thresholds");
  std::string filter_in, filter_out, filter_encoding = "png";
  mask_io::FilterThresholds th;
  bool split_components = false;
  double overlap_iou = 0.8;
  filter->add_option("--in", filter_in, "masks.json or its directory")->required();
  filter->add_option("--out", filter_out, "Output directory")->required();
  filter->add_option("--min-iou", th.min_predicted_iou)->capture_default_str();
  filter->add_option("--min-stability", th.min_stability)->capture_default_str();
  filter->add_option("--min-area", th.min_area_px)->capture_default_str();
  filter->add_flag("--split-components", split_components,
                   "Emit one record per 8-connected component");
  filter->add_option("--overlap-iou", overlap_iou, "Report pairs above this IoU")
      ->capture_default_str();
  filter->add_option("--encoding", filter_encoding, "png | rle")->capture_default_str();

  // crop
  auto* crop = app.add_subcommand("crop", "Write one PNG per mask crop");
  std::string crop_image, crop_masks, crop_out;
  CropOpts crop_opts;
  crop->add_option("--image", crop_image)->required();
  crop->add_option("--masks", crop_masks, "masks.json or its directory")->required();
  crop->add_option("--out", crop_out, "Output directory")->required();
  add_crop_opts(crop, crop_opts);

  // preproc select
  auto* preproc = app.add_subcommand("preproc", "Standardization pipelines");
  preproc->require_subcommand(1);
  auto* select = preproc->add_subcommand("select", "Pick the pipeline with the widest class spread");
  std::string sel_labels, sel_split = "train", sel_candidates = "all", sel_provider = "toy",
                          sel_out;
  int sel_side = 224, sel_pad = 0;
  bool sel_l2 = false;
  CropOpts sel_crop;
  select->add_option("--labels", sel_labels, "Dataset labels.json")->required();
  select->add_option("--split", sel_split)->capture_default_str();
  select->add_option("--candidates", sel_candidates, "all, or comma-separated pipeline names")
      ->capture_default_str();
  select->add_option("--provider", sel_provider, "toy | graph:<path> | file:<path>")
      ->capture_default_str();
  select->add_option("--side", sel_side)->capture_default_str();
  select->add_option("--pad", sel_pad)->capture_default_str()->check(CLI::Range(0, 255));
  select->add_flag("--l2", sel_l2, "L2-normalize embeddings before measuring");
  select->add_option("--out", sel_out, "selection.json (stdout if omitted)");
  add_crop_opts(select, sel_crop);

  // embed
  auto* emb = app.add_subcommand("embed", "Embed standardized crops");
  std::string emb_provider = "toy", emb_out, emb_labels, emb_splits = "train,validation,test",
              emb_crops, emb_preproc = "pad_square_resize/224/0";
  CropOpts emb_crop;
  emb->add_option("--provider", emb_provider, "toy | graph:<path> | file:<path>")
      ->capture_default_str();
  emb->add_option("--out", emb_out, "Embedding file")->required();
  emb->add_option("--labels", emb_labels, "Dataset labels.json");
  emb->add_option("--splits", emb_splits, "Comma-separated splits to embed")->capture_default_str();
  emb->add_option("--crops", emb_crops, "Directory of crop PNGs (ids are file stems)");
  emb->add_option("--preproc", emb_preproc, "Pipeline tag or selection.json")->capture_default_str();
  add_crop_opts(emb, emb_crop);

  // train
  auto* train = app.add_subcommand("train", "Fit a classifier on embeddings");
  std::string train_mode = "lr", train_emb, train_labels, train_out, train_trace, train_preproc;
  bool train_balanced = false, train_l2 = false;
  std::uint64_t train_seed = classify::kDefaultSeed;
  train->add_option("--mode", train_mode, "grid | lr")->capture_default_str();
  train->add_option("--emb", train_emb)->required();
  train->add_option("--labels", train_labels)->required();
  train->add_option("--out", train_out, "model.json")->required();
  train->add_option("--trace", train_trace, "Grid-search trace JSON");
  train->add_option("--preproc-tag", train_preproc, "Recorded in the model file");
  train->add_flag("--balanced", train_balanced);
  train->add_flag("--l2", train_l2);
  train->add_option("--seed", train_seed)->capture_default_str();

  // predict
  auto* predict = app.add_subcommand("predict", "Classify embedding rows");
  std::string pred_model, pred_emb, pred_out, pred_labels, pred_split;
  predict->add_option("--model", pred_model)->required();
  predict->add_option("--emb", pred_emb)->required();
  predict->add_option("--out", pred_out, "preds.json")->required();
  predict->add_option("--labels", pred_labels, "Fills the 'true' field");
  predict->add_option("--split", pred_split, "Only rows of this split (needs --labels)");

  // eval
  auto* ev = app.add_subcommand("eval", "Precision/recall/F1 report");
  std::string ev_preds, ev_baseline, ev_dataset = "dataset", ev_method = "npshape", ev_md, ev_json;
  ev->add_option("--preds", ev_preds, "preds.json");
  ev->add_option("--baseline", ev_baseline, "Static comparison rows");
  ev->add_option("--dataset", ev_dataset)->capture_default_str();
  ev->add_option("--method", ev_method)->capture_default_str();
  ev->add_option("--out-md", ev_md, "report.md (stdout if omitted)");
  ev->add_option("--out-json", ev_json, "report.json");

  // overlay
  auto* overlay = app.add_subcommand("overlay", "Draw class-coloured boxes");
  std::string ov_image, ov_masks, ov_preds, ov_out;
  overlay->add_option("--image", ov_image)->required();
  overlay->add_option("--masks", ov_masks)->required();
  overlay->add_option("--preds", ov_preds)->required();
  overlay->add_option("--out", ov_out)->required();

  // analyze
  auto* an = app.add_subcommand("analyze", "Embedding-space diagnostics");
  an->require_subcommand(1);
  std::string an_emb, an_labels, an_out, an_space = "full";
  std::vector<std::string> an_stages;
  auto* pca = an->add_subcommand("pca", "Two-component projection CSV");
  auto* met = an->add_subcommand("metrics", "Variance split and silhouette JSON");
  auto* tl = an->add_subcommand("timeline", "Metrics per stage CSV");
  for (auto* cmd : {pca, met}) cmd->add_option("--emb", an_emb)->required();
  for (auto* cmd : {pca, met, tl}) {
    cmd->add_option("--labels", an_labels)->required();
    cmd->add_option("--out", an_out, "Output file (stdout if omitted)");
  }
  for (auto* cmd : {met, tl}) {
    cmd->add_option("--space", an_space, "Silhouette space: full | pca2")->capture_default_str();
  }
  tl->add_option("--stage", an_stages, "<id>=<embedding file>, repeatable, in order")->required();

  // synth
  auto* syn = app.add_subcommand("synth", "Generate synthetic scenes");
  std::string syn_spec, syn_out, syn_preset, syn_encoding = "rle";
  std::uint64_t syn_seed = 1;
  syn->add_option("--spec", syn_spec, "Scene or dataset spec JSON");
  syn->add_option("--preset", syn_preset, "cubes | triangles | dots");
  syn->add_option("--seed", syn_seed, "Seed for --preset")->capture_default_str();
  syn->add_option("--out", syn_out)->required();
  syn->add_option("--encoding", syn_encoding, "png | rle")->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "Run every stage from a TOML config");
  std::string run_config;
  bool run_force = false;
  run->add_option("--config", run_config)->required();
  run->add_flag("--force", run_force, "Ignore the previous manifest");
  // Overrides mirror config keys; flags win over the file.
  std::optional<std::uint64_t> o_seed;
  std::optional<std::string> o_out, o_labels, o_variant, o_candidates, o_provider, o_mode,
      o_baseline, o_method, o_name;
  std::optional<double> o_min_iou, o_min_stab;
  std::optional<std::int64_t> o_min_area;
  std::optional<int> o_margin, o_side;
  bool o_l2 = false, o_balanced = false, o_split = false, o_overlay = false;
  run->add_option("--seed", o_seed, "run.seed");
  run->add_option("--out-dir", o_out, "run.out_dir");
  run->add_option("--labels", o_labels, "data.labels");
  run->add_option("--name", o_name, "data.name");
  run->add_option("--min-iou", o_min_iou, "masks.min_iou");
  run->add_option("--min-stability", o_min_stab, "masks.min_stability");
  run->add_option("--min-area", o_min_area, "masks.min_area");
  run->add_flag("--split-components", o_split, "masks.split_components");
  run->add_option("--variant", o_variant, "crop.variant");
  run->add_option("--margin", o_margin, "crop.margin");
  run->add_option("--candidates", o_candidates, "preproc.candidates");
  run->add_option("--side", o_side, "preproc.side");
  run->add_flag("--l2", o_l2, "preproc.l2");
  run->add_option("--provider", o_provider, "embed.provider");
  run->add_option("--mode", o_mode, "train.mode");
  run->add_flag("--balanced", o_balanced, "train.balanced");
  run->add_option("--method", o_method, "eval.method");
  run->add_option("--baseline", o_baseline, "eval.baseline");
  run->add_flag("--overlay", o_overlay, "eval.overlay");

  CLI11_PARSE(app, argc, argv);

  try {
    if (filter->parsed()) {
      const auto set = mask_io::read_mask_set(filter_in);
      std::vector<mask_io::MaskRecord> records;
      for (const auto& r : set.masks) {
        auto parts = split_components ? mask_io::split_components(r)
                                      : std::vector<mask_io::MaskRecord>{r};
        records.insert(records.end(), parts.begin(), parts.end());
      }
      const auto kept = mask_io::filter_masks(records, th);
      for (const auto& o : mask_io::find_overlaps(kept, overlap_iou)) {
        std::fprintf(stderr, "overlap: %s %s iou=%.3f\n", o.first.c_str(), o.second.c_str(), o.iou);
      }
      const auto encoding =
          filter_encoding == "rle" ? mask_io::MaskEncoding::rle : mask_io::MaskEncoding::png;
      mask_io::write_mask_set({set.source_image, kept}, filter_out, encoding);
      std::printf("kept %zu of %zu masks\n", kept.size(), records.size());
    } else if (crop->parsed()) {
      const auto image = read_gray_png(crop_image);
      const auto set = mask_io::read_mask_set(crop_masks);
      const auto variant = mask_io::parse_crop_variant(crop_opts.variant);
      fs::create_directories(crop_out);
      for (const auto& r : set.masks) {
        const auto c = mask_io::crop_particle(image, r, variant, crop_opts.margin);
        write_gray_png(c.pixels, fs::path(crop_out) / (r.id + ".png"));
      }
      std::printf("wrote %zu crops\n", set.masks.size());
    } else if (select->parsed()) {
      const LabelLookup labels(sel_labels);
      const auto crops = dataset_crops(labels, {sel_split}, sel_crop, false);
      std::vector<std::string> ids;
      for (const auto& c : crops) ids.push_back(c.mask_id);
      std::vector<preprocess::PreprocSpec> specs;
      for (const auto& name : parse_list(sel_candidates)) {
        if (name == "all") {
          const auto all = preprocess::all_candidates(sel_side, static_cast<std::uint8_t>(sel_pad));
          specs.insert(specs.end(), all.begin(), all.end());
        } else {
          specs.push_back({preprocess::parse_pipeline(name), sel_side,
                           static_cast<std::uint8_t>(sel_pad)});
        }
      }
      const auto provider = embed::make_provider(embed::ProviderConfig::parse(sel_provider));
      const auto report = preprocess::select_preproc(crops, labels_for(labels, ids), specs,
                                                     *provider, {sel_l2, true});
      json cands = json::array();
      for (const auto& c : report.candidates) {
        cands.push_back({{"tag", c.spec.tag()}, {"distance", c.distance}});
      }
      json doc = {{"candidates", cands}, {"chosen", report.chosen.tag()}, {"l2", sel_l2}};
      print_or_write(doc.dump(2) + "\n", sel_out);
    } else if (emb->parsed()) {
      std::string tag = emb_preproc;
      if (fs::path(tag).extension() == ".json") {
        tag = json::parse(read_text_file(tag)).at("chosen").get<std::string>();
      }
      const auto spec = preprocess::PreprocSpec::from_tag(tag);
      std::vector<mask_io::ParticleCrop> crops;
      if (!emb_crops.empty()) {
        crops = directory_crops(emb_crops);
      } else if (!emb_labels.empty()) {
        crops = dataset_crops(LabelLookup(emb_labels), parse_list(emb_splits), emb_crop, false);
      } else {
        throw ValidationError("embed needs --labels or --crops");
      }
      std::vector<std::string> ids;
      std::vector<GrayImage> rasters;
      for (const auto& c : crops) {
        ids.push_back(c.mask_id);
        rasters.push_back(preprocess::apply_preproc(c, spec));
      }
      const auto provider = embed::make_provider(embed::ProviderConfig::parse(emb_provider));
      const auto m = provider->embed_batch(ids, rasters);
      embed::save_embeddings(m, emb_out);
      std::printf("embedded %zu crops (d=%d) under %s\n", m.rows(), m.dim, tag.c_str());
    } else if (train->parsed()) {
      const LabelLookup labels(train_labels);
      const auto all = embed::load_embeddings(train_emb);
      auto subset = [&](const char* split, classify::Split tag) {
        std::vector<std::string> ids;
        for (const auto& id : all.ids) {
          if (labels.in_split(id, split)) ids.push_back(id);
        }
        return classify::LabeledDataset{embed::select_rows(all, ids), labels_for(labels, ids), tag};
      };
      const auto train_set = subset("train", classify::Split::train);
      classify::TrainedClassifier model;
      const auto mode = pipeline::parse_train_mode(train_mode);
      if (mode == pipeline::TrainMode::lr) {
        classify::TrainOptions opts;
        opts.balanced = train_balanced;
        opts.l2_normalize = train_l2;
        model = classify::train_logreg(train_set, 1.0, opts);
      } else {
        classify::GridSearchSpec gs;
        gs.balanced = train_balanced;
        gs.seed = train_seed;
        const auto result =
            classify::grid_search(train_set, subset("validation", classify::Split::validation), gs);
        model = result.best;
        if (!train_trace.empty()) write_text_file(train_trace, classify::trace_to_json(result));
      }
      model.preproc_tag = train_preproc;
      classify::save_model(model, train_out);
      std::printf("trained %s on %zu rows\n", classify::to_string(model.kind), train_set.y.size());
    } else if (predict->parsed()) {
      const auto model = classify::load_model(pred_model);
      auto x = embed::load_embeddings(pred_emb);
      std::optional<LabelLookup> labels;
      if (!pred_labels.empty()) labels.emplace(pred_labels);
      if (!pred_split.empty()) {
        if (!labels) throw ValidationError("--split needs --labels");
        std::vector<std::string> ids;
        for (const auto& id : x.ids) {
          if (labels->in_split(id, pred_split)) ids.push_back(id);
        }
        x = embed::select_rows(x, ids);
      }
      const auto proba = classify::predict_proba(model, x);
      const auto pred = classify::predict(model, x);
      json out = json::array();
      for (std::size_t i = 0; i < x.rows(); ++i) {
        json p = json::object();
        for (std::size_t k = 0; k < model.class_map.size(); ++k) {
          p[model.class_map[k]] = proba(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        }
        const std::string* truth = labels ? labels->find(x.ids[i]) : nullptr;
        out.push_back({{"id", x.ids[i]},
                       {"true", truth ? json(*truth) : json(nullptr)},
                       {"pred", pred[i]},
                       {"proba", p}});
      }
      write_text_file(pred_out, out.dump(2) + "\n");
    } else if (ev->parsed()) {
      eval::EvalReport report;
      if (!ev_preds.empty()) {
        const auto preds = json::parse(read_text_file(ev_preds));
        std::vector<std::string> y_true, y_pred;
        std::set<std::string> classes;
        for (const auto& p : preds) {
          if (p.at("true").is_null()) continue;
          y_true.push_back(p.at("true").get<std::string>());
          y_pred.push_back(p.at("pred").get<std::string>());
          classes.insert(y_true.back());
          classes.insert(y_pred.back());
        }
        if (!y_true.empty()) {
          const std::vector<std::string> class_map(classes.begin(), classes.end());
          const auto metrics =
              eval::precision_recall_f1(eval::confusion(y_true, y_pred, class_map));
          report.rows = eval::rows_from_metrics(ev_dataset, ev_method, metrics);
        }
      }
      if (!ev_baseline.empty()) {
        const auto base = eval::load_baseline_rows(ev_baseline);
        report.rows.insert(report.rows.end(), base.begin(), base.end());
      }
      if (!ev_json.empty()) write_text_file(ev_json, eval::render_json(report));
      print_or_write(eval::render_markdown(report), ev_md);
    } else if (overlay->parsed()) {
      const auto image = read_gray_png(ov_image);
      const auto set = mask_io::read_mask_set(ov_masks);
      std::map<std::string, std::string> pred;
      for (const auto& p : json::parse(read_text_file(ov_preds))) {
        pred[p.at("id").get<std::string>()] = p.at("pred").get<std::string>();
      }
      std::vector<eval::OverlayBox> boxes;
      for (const auto& r : set.masks) {
        auto it = pred.find(r.id);
        if (it != pred.end()) boxes.push_back({mask_io::bbox_from_mask(r.mask), it->second});
      }
      write_rgb_png(eval::render_overlay(image, boxes), ov_out);
      std::printf("drew %zu boxes\n", boxes.size());
    } else if (an->parsed()) {
      const LabelLookup labels(an_labels);
      const auto space = an_space == "pca2" ? analyze::MetricSpace::pca2 : analyze::MetricSpace::full;
      if (an_space != "full" && an_space != "pca2") throw ValidationError("--space is full or pca2");
      if (pca->parsed() || met->parsed()) {
        const auto m = embed::load_embeddings(an_emb);
        const auto x = analyze::to_matrix(m);
        const auto y = labels_for(labels, m.ids);
        if (pca->parsed()) {
          print_or_write(analyze::projection_csv(m.ids, analyze::pca_fit_transform(x), y), an_out);
        } else {
          print_or_write(analyze::metrics_json(analyze::cluster_metrics(x, y, space)), an_out);
        }
      } else {
        std::vector<analyze::Stage> stages;
        for (const auto& item : an_stages) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) throw ValidationError("--stage expects <id>=<file>");
          const auto m = embed::load_embeddings(item.substr(eq + 1));
          stages.push_back({item.substr(0, eq), analyze::to_matrix(m), labels_for(labels, m.ids)});
        }
        print_or_write(analyze::timeline_csv(analyze::stage_timeline(stages, space)), an_out);
      }
    } else if (syn->parsed()) {
      const auto encoding =
          syn_encoding == "png" ? mask_io::MaskEncoding::png : mask_io::MaskEncoding::rle;
      dataset::DatasetIndex index;
      if (!syn_preset.empty()) {
        index = synth::generate_dataset(synth::preset_dataset(syn_preset, syn_seed), syn_out, encoding);
      } else if (!syn_spec.empty()) {
        const auto text = read_text_file(syn_spec);
        if (synth::is_dataset_spec(text)) {
          index = synth::generate_dataset(synth::dataset_spec_from_json(text), syn_out, encoding);
        } else {
          const auto scene = synth::generate_scene(synth::synth_spec_from_json(text));
          index = synth::export_dataset(std::span(&scene, 1), {}, 0, syn_out, encoding);
        }
      } else {
        throw ValidationError("synth needs --spec or --preset");
      }
      std::printf("wrote %zu scenes, %zu masks to %s\n", index.scenes.size(), index.labels.size(),
                  syn_out.c_str());
    } else if (run->parsed()) {
      auto cfg = pipeline::load_config(run_config);
      if (o_seed) cfg.seed = *o_seed;
      if (o_out) cfg.out_dir = *o_out;
      if (o_labels) cfg.labels = *o_labels;
      if (o_name) cfg.dataset_name = *o_name;
      if (o_min_iou) cfg.thresholds.min_predicted_iou = *o_min_iou;
      if (o_min_stab) cfg.thresholds.min_stability = *o_min_stab;
      if (o_min_area) cfg.thresholds.min_area_px = *o_min_area;
      if (o_split) cfg.split_components = true;
      if (o_variant) cfg.variant = mask_io::parse_crop_variant(*o_variant);
      if (o_margin) cfg.margin = *o_margin;
      if (o_candidates) {
        cfg.candidates.clear();
        for (const auto& name : parse_list(*o_candidates)) {
          if (name == "all") {
            cfg.candidates.assign(preprocess::kAllPipelines.begin(), preprocess::kAllPipelines.end());
          } else {
            cfg.candidates.push_back(preprocess::parse_pipeline(name));
          }
        }
      }
      if (o_side) cfg.side = *o_side;
      if (o_l2) cfg.l2 = true;
      if (o_provider) cfg.provider = *o_provider;
      if (o_mode) cfg.mode = pipeline::parse_train_mode(*o_mode);
      if (o_balanced) cfg.balanced = true;
      if (o_method) cfg.method = *o_method;
      if (o_baseline) cfg.baseline = *o_baseline;
      if (o_overlay) cfg.overlay = true;
      pipeline::RunOptions opts;
      opts.force = run_force;
      opts.log = &std::cerr;
      const auto manifest = pipeline::run_pipeline(cfg, opts);
      std::printf("config %s, preproc %s, %zu stages ran\n", manifest.config_hash.substr(0, 12).c_str(),
                  manifest.chosen_preproc.c_str(), manifest.ran().size());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
