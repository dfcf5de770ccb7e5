#include "npshape/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <functional>
#include <future>
#include <set>
#include <thread>

#include "json.hpp"
#include "toml.hpp"
#include "npshape/classify.hpp"
#include "npshape/dataset.hpp"
#include "npshape/digest.hpp"
#include "npshape/embed.hpp"
#include "npshape/error.hpp"
#include "npshape/eval.hpp"
#include "npshape/image_io.hpp"

namespace npshape::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(TrainMode mode) { return mode == TrainMode::grid ? "grid" : "lr"; }

TrainMode parse_train_mode(const std::string& text) {
  if (text == "grid") return TrainMode::grid;
  if (text == "lr") return TrainMode::lr;
  throw ConfigError("train.mode must be 'grid' or 'lr', got '" + text + "'");
}

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"run", {"seed", "out_dir"}},
      {"data", {"labels", "name"}},
      {"masks", {"min_iou", "min_stability", "min_area", "split_components", "overlap_iou"}},
      {"crop", {"variant", "margin"}},
      {"preproc", {"candidates", "side", "pad", "l2"}},
      {"embed", {"provider"}},
      {"train", {"mode", "balanced"}},
      {"eval", {"method", "baseline", "overlay"}},
      {"analyze", {"enabled", "silhouette_space"}},
  };
  return keys;
}

class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <typename T>
  void read(const char* key, T& out) const {
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    auto v = node->value<T>();
    if (!v) throw ConfigError("'" + name_ + "." + key + "' has the wrong type");
    out = *v;
  }

  const toml::node* node(const char* key) const { return table_ ? table_->get(key) : nullptr; }
  std::string key(const char* k) const { return name_ + "." + k; }

 private:
  const toml::table* table_;
  std::string name_;
};

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

std::string resolve_provider(const std::string& spec, const fs::path& base) {
  for (const char* prefix : {"graph:", "file:"}) {
    const std::string pre(prefix);
    if (spec.rfind(pre, 0) == 0) {
      return pre + resolve(spec.substr(pre.size()), base).string();
    }
  }
  return spec;
}

const char* space_name(analyze::MetricSpace s) { return s == analyze::MetricSpace::full ? "full" : "pca2"; }

}  // namespace

RunConfig parse_config(const std::string& toml_text, const fs::path& base_dir) {
  toml::table doc;
  try {
    doc = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("config is not valid TOML: ") + std::string(e.description()));
  }
  for (const auto& [name, node] : doc) {
    const std::string section(name.str());
    auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ConfigError("unknown config section [" + section + "]");
    const auto* table = node.as_table();
    if (!table) throw ConfigError("'" + section + "' must be a table");
    for (const auto& [key, value] : *table) {
      if (!it->second.count(std::string(key.str()))) {
        throw ConfigError("unknown config key '" + section + "." + std::string(key.str()) + "'");
      }
    }
  }
  auto section = [&](const char* name) { return Section(doc[name].as_table(), name); };

  RunConfig cfg;
  const auto run = section("run");
  std::int64_t seed = static_cast<std::int64_t>(cfg.seed);
  run.read("seed", seed);
  if (seed < 0) throw ConfigError("'run.seed' must be >= 0");
  cfg.seed = static_cast<std::uint64_t>(seed);
  std::string out_dir = cfg.out_dir.string();
  run.read("out_dir", out_dir);
  cfg.out_dir = resolve(out_dir, base_dir);

  const auto data = section("data");
  std::string labels;
  data.read("labels", labels);
  cfg.labels = resolve(labels, base_dir);
  data.read("name", cfg.dataset_name);

  const auto masks = section("masks");
  masks.read("min_iou", cfg.thresholds.min_predicted_iou);
  masks.read("min_stability", cfg.thresholds.min_stability);
  masks.read("min_area", cfg.thresholds.min_area_px);
  masks.read("split_components", cfg.split_components);
  masks.read("overlap_iou", cfg.overlap_iou);

  const auto crop = section("crop");
  std::string variant = "raw";
  crop.read("variant", variant);
  try {
    cfg.variant = mask_io::parse_crop_variant(variant);
  } catch (const Error& e) {
    throw ConfigError(std::string("crop.variant: ") + e.what());
  }
  crop.read("margin", cfg.margin);

  const auto pre = section("preproc");
  if (const auto* node = pre.node("candidates")) {
    cfg.candidates.clear();
    auto add = [&](const std::string& name) {
      if (name == "all") {
        cfg.candidates.assign(preprocess::kAllPipelines.begin(), preprocess::kAllPipelines.end());
        return;
      }
      try {
        cfg.candidates.push_back(preprocess::parse_pipeline(name));
      } catch (const Error& e) {
        throw ConfigError(std::string("preproc.candidates: ") + e.what());
      }
    };
    if (auto s = node->value<std::string>()) {
      add(*s);
    } else if (const auto* arr = node->as_array()) {
      for (const auto& item : *arr) {
        auto s2 = item.value<std::string>();
        if (!s2) throw ConfigError("'preproc.candidates' entries must be strings");
        add(*s2);
      }
    } else {
      throw ConfigError("'preproc.candidates' must be \"all\" or a list of pipeline names");
    }
  }
  pre.read("side", cfg.side);
  std::int64_t pad = cfg.pad;
  pre.read("pad", pad);
  if (pad < 0 || pad > 255) throw ConfigError("'preproc.pad' must be in [0, 255]");
  cfg.pad = static_cast<std::uint8_t>(pad);
  pre.read("l2", cfg.l2);

  std::string provider = cfg.provider;
  section("embed").read("provider", provider);
  cfg.provider = resolve_provider(provider, base_dir);

  const auto train = section("train");
  std::string mode = to_string(cfg.mode);
  train.read("mode", mode);
  cfg.mode = parse_train_mode(mode);
  train.read("balanced", cfg.balanced);

  const auto ev = section("eval");
  ev.read("method", cfg.method);
  std::string baseline;
  ev.read("baseline", baseline);
  cfg.baseline = resolve(baseline, base_dir);
  ev.read("overlay", cfg.overlay);

  const auto an = section("analyze");
  an.read("enabled", cfg.analyze);
  std::string space = space_name(cfg.silhouette_space);
  an.read("silhouette_space", space);
  if (space == "full") {
    cfg.silhouette_space = analyze::MetricSpace::full;
  } else if (space == "pca2") {
    cfg.silhouette_space = analyze::MetricSpace::pca2;
  } else {
    throw ConfigError("'analyze.silhouette_space' must be 'full' or 'pca2'");
  }
  validate(cfg);
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, fs::absolute(path).parent_path());
}

void validate(const RunConfig& cfg) {
  if (cfg.labels.empty()) throw ConfigError("'data.labels' is required");
  if (cfg.out_dir.empty()) throw ConfigError("'run.out_dir' must not be empty");
  try {
    mask_io::validate(cfg.thresholds);
    preprocess::validate(preprocess::PreprocSpec{preprocess::Pipeline::stretch_resize, cfg.side,
                                                 cfg.pad});
    embed::ProviderConfig::parse(cfg.provider);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (cfg.margin < 0) throw ConfigError("'crop.margin' must be >= 0");
  if (cfg.candidates.empty()) throw ConfigError("'preproc.candidates' must not be empty");
  if (cfg.overlap_iou <= 0 || cfg.overlap_iou > 1) {
    throw ConfigError("'masks.overlap_iou' must be in (0, 1]");
  }
}

namespace {

json config_sections(const RunConfig& cfg) {
  json candidates = json::array();
  for (auto p : cfg.candidates) candidates.push_back(preprocess::to_string(p));
  return {
      {"run", {{"seed", cfg.seed}, {"out_dir", cfg.out_dir.generic_string()}}},
      {"data", {{"labels", cfg.labels.generic_string()}, {"name", cfg.dataset_name}}},
      {"masks",
       {{"min_iou", cfg.thresholds.min_predicted_iou},
        {"min_stability", cfg.thresholds.min_stability},
        {"min_area", cfg.thresholds.min_area_px},
        {"split_components", cfg.split_components},
        {"overlap_iou", cfg.overlap_iou}}},
      {"crop", {{"variant", mask_io::to_string(cfg.variant)}, {"margin", cfg.margin}}},
      {"preproc",
       {{"candidates", candidates}, {"side", cfg.side}, {"pad", cfg.pad}, {"l2", cfg.l2}}},
      {"embed", {{"provider", cfg.provider}}},
      {"train", {{"mode", to_string(cfg.mode)}, {"balanced", cfg.balanced}}},
      {"eval",
       {{"method", cfg.method},
        {"baseline", cfg.baseline.generic_string()},
        {"overlay", cfg.overlay}}},
      {"analyze",
       {{"enabled", cfg.analyze}, {"silhouette_space", space_name(cfg.silhouette_space)}}},
  };
}

}  // namespace

std::string config_to_json(const RunConfig& config) { return config_sections(config).dump(2); }

std::string config_hash(const RunConfig& config) {
  return sha256_hex(config_sections(config).dump());
}

std::map<std::string, std::string> RunManifest::artifacts() const {
  std::map<std::string, std::string> out;
  for (const auto& s : stages) out.insert(s.outputs.begin(), s.outputs.end());
  return out;
}

std::vector<std::string> RunManifest::ran() const {
  std::vector<std::string> out;
  for (const auto& s : stages) {
    if (!s.skipped) out.push_back(s.name);
  }
  return out;
}

std::string manifest_to_json(const RunManifest& m) {
  json stages = json::array();
  for (const auto& s : m.stages) {
    stages.push_back({{"name", s.name},
                      {"key", s.key},
                      {"status", s.skipped ? "skipped" : "ran"},
                      {"outputs", s.outputs}});
  }
  json doc = {{"schema_version", m.schema_version},
              {"config_hash", m.config_hash},
              {"seeds", m.seeds},
              {"provider_fingerprint", m.provider_fingerprint},
              {"chosen_preproc", m.chosen_preproc},
              {"model_file", m.model_file},
              {"inputs", m.inputs},
              {"artifacts", m.artifacts()},
              {"stages", stages},
              {"started_at", m.started_at},
              {"finished_at", m.finished_at}};
  return doc.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  try {
    const auto doc = json::parse(text);
    RunManifest m;
    m.schema_version = doc.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion) {
      throw FormatError("unsupported manifest schema " + std::to_string(m.schema_version));
    }
    m.config_hash = doc.at("config_hash").get<std::string>();
    m.seeds = doc.at("seeds").get<std::map<std::string, std::uint64_t>>();
    m.provider_fingerprint = doc.at("provider_fingerprint").get<std::string>();
    m.chosen_preproc = doc.at("chosen_preproc").get<std::string>();
    m.model_file = doc.at("model_file").get<std::string>();
    m.inputs = doc.at("inputs").get<std::map<std::string, std::string>>();
    for (const auto& s : doc.at("stages")) {
      StageRecord r;
      r.name = s.at("name").get<std::string>();
      r.key = s.at("key").get<std::string>();
      r.skipped = s.at("status").get<std::string>() == "skipped";
      r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
      m.stages.push_back(std::move(r));
    }
    m.started_at = doc.value("started_at", "");
    m.finished_at = doc.value("finished_at", "");
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

constexpr char kFiltered[] = "filtered.json";
constexpr char kSelection[] = "selection.json";
constexpr char kEmbeddings[] = "embeddings.npe";
constexpr char kModel[] = "model.json";
constexpr char kTrace[] = "grid_trace.json";
constexpr char kPreds[] = "preds.json";
constexpr char kReportMd[] = "report.md";
constexpr char kReportJson[] = "report.json";
constexpr char kProjection[] = "projection.csv";
constexpr char kMetrics[] = "metrics.json";

// Mask ids of the run plus their dataset labels and splits. Component ids
// inherit label and split from the record they were split from.
struct Universe {
  dataset::DatasetIndex index;
  std::vector<std::string> kept;             // filter output, dataset order
  std::map<std::string, std::string> parent;  // component id -> source id

  const std::string& source(const std::string& id) const {
    auto it = parent.find(id);
    return it == parent.end() ? id : it->second;
  }
  const std::string& label(const std::string& id) const {
    return index.labels.at(source(id));
  }
  /// Kept ids of one split, in kept order.
  std::vector<std::string> split(const std::string& name) const {
    const auto& members = index.split(name);
    const std::set<std::string> wanted(members.begin(), members.end());
    std::vector<std::string> out;
    for (const auto& id : kept) {
      if (wanted.count(source(id))) out.push_back(id);
    }
    return out;
  }
};

std::vector<mask_io::MaskRecord> scene_records(const Universe& u, const dataset::SceneEntry& scene,
                                               bool split_components) {
  auto set = mask_io::read_mask_set(u.index.root / scene.masks);
  if (!split_components) return std::move(set.masks);
  std::vector<mask_io::MaskRecord> out;
  for (const auto& r : set.masks) {
    auto parts = mask_io::split_components(r);
    out.insert(out.end(), std::make_move_iterator(parts.begin()),
               std::make_move_iterator(parts.end()));
  }
  return out;
}

/// Crops for `ids`, returned in the same order. Scenes without a wanted mask
/// are not opened.
std::vector<mask_io::ParticleCrop> load_crops(const Universe& u, const RunConfig& cfg,
                                              const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::map<std::string, mask_io::ParticleCrop> found;
  for (const auto& scene : u.index.scenes) {
    std::vector<mask_io::MaskRecord> records;
    for (auto& r : scene_records(u, scene, cfg.split_components)) {
      if (wanted.count(r.id)) records.push_back(std::move(r));
    }
    if (records.empty()) continue;
    const GrayImage image = read_gray_png(u.index.root / scene.image);
    for (const auto& r : records) {
      found.emplace(r.id, mask_io::crop_particle(image, r, cfg.variant, cfg.margin));
    }
  }
  std::vector<mask_io::ParticleCrop> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = found.find(id);
    if (it == found.end()) throw ValidationError("mask '" + id + "' not found in any scene");
    out.push_back(std::move(it->second));
  }
  return out;
}

embed::EmbeddingMatrix embed_parallel(const embed::Provider& provider,
                                      const std::vector<std::string>& ids,
                                      const std::vector<GrayImage>& rasters) {
  const std::size_t n = ids.size();
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 16);
  const std::size_t chunk = std::max<std::size_t>(16, (n + workers - 1) / workers);
  std::vector<std::future<embed::EmbeddingMatrix>> parts;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t len = std::min(chunk, n - begin);
    parts.push_back(std::async(std::launch::async, [&, begin, len] {
      return provider.embed_batch(std::span(ids).subspan(begin, len),
                                  std::span(rasters).subspan(begin, len));
    }));
  }
  embed::EmbeddingMatrix out;
  out.dim = provider.dim();
  out.provider_fingerprint = provider.fingerprint();
  for (auto& f : parts) {
    auto part = f.get();
    out.ids.insert(out.ids.end(), part.ids.begin(), part.ids.end());
    out.values.insert(out.values.end(), part.values.begin(), part.values.end());
  }
  return out;
}

std::string join_digests(const std::vector<std::string>& digests) {
  std::string s;
  for (const auto& d : digests) s += d + "\n";
  return s;
}

class Runner {
 public:
  Runner(const RunConfig& cfg, const RunOptions& opts) : cfg_(cfg), opts_(opts), out_(cfg.out_dir) {
    sections_ = config_sections(cfg);
    const fs::path prev = out_ / kManifestFile;
    if (!opts.force && fs::exists(prev)) {
      try {
        prev_ = manifest_from_json(read_text_file(prev));
        have_prev_ = true;
      } catch (const Error&) {
        have_prev_ = false;  // unreadable manifest: run everything
      }
    }
  }

  RunManifest run() {
    manifest_.started_at = utc_now();
    manifest_.config_hash = config_hash(cfg_);
    manifest_.seeds = {{"run", cfg_.seed}, {"svm", cfg_.seed}};
    manifest_.model_file = kModel;

    stage_guard("filter", [&] {
      fs::create_directories(out_);
      universe_.index = dataset::read_index(cfg_.labels);
      record_inputs();
    });

    run_stage("filter", {"masks"}, {input_digest_}, [&] { filter_stage(); });
    load_universe();
    const bool precomputed =
        embed::ProviderConfig::parse(cfg_.provider).kind == embed::ProviderKind::precomputed_file;
    std::vector<std::string> select_inputs{digest(kFiltered), input_digest_};
    if (precomputed) select_inputs.push_back(provider_file_digest());
    run_stage("select", {"crop", "preproc", "embed"}, select_inputs,
              [&] { select_stage(precomputed); });
    std::vector<std::string> embed_inputs{digest(kFiltered), digest(kSelection), input_digest_};
    if (precomputed) embed_inputs.push_back(provider_file_digest());
    run_stage("embed", {"crop", "embed", "train"}, embed_inputs, [&] { embed_stage(); });
    run_stage("train", {"train", "preproc", "run"}, {digest(kEmbeddings), input_digest_},
              [&] { train_stage(); });
    run_stage("predict", {}, {digest(kModel), digest(kEmbeddings)}, [&] { predict_stage(); });
    std::vector<std::string> eval_inputs{digest(kPreds), digest(kModel), digest(kFiltered),
                                         digest(kEmbeddings)};
    if (!cfg_.baseline.empty()) eval_inputs.push_back(safe_file_digest(cfg_.baseline));
    if (cfg_.overlay) eval_inputs.push_back(input_digest_);
    run_stage("eval", {"eval", "data"}, eval_inputs, [&] { eval_stage(); });
    if (cfg_.analyze) {
      run_stage("analyze", {"analyze"}, {digest(kEmbeddings)}, [&] { analyze_stage(); });
    }

    stage_guard("embed", [&] {
      const auto header = embed::load_embeddings(out_ / kEmbeddings);
      manifest_.provider_fingerprint = header.provider_fingerprint;
      manifest_.chosen_preproc =
          json::parse(read_text_file(out_ / kSelection)).at("chosen").get<std::string>();
    });
    manifest_.finished_at = utc_now();
    write_text_file(out_ / kManifestFile, manifest_to_json(manifest_));
    return manifest_;
  }

 private:
  template <typename Fn>
  void stage_guard(const std::string& name, Fn&& fn) {
    try {
      fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  }

  std::string digest(const char* file) const { return sha256_file(out_ / file); }

  std::string safe_file_digest(const fs::path& p) {
    std::string d;
    stage_guard("eval", [&] { d = sha256_file(p); });
    return d;
  }

  std::string provider_file_digest() {
    const auto pc = embed::ProviderConfig::parse(cfg_.provider);
    std::string d;
    stage_guard("embed", [&] {
      if (!fs::exists(pc.path)) {
        throw ProviderError("embedding file '" + pc.path.string() + "' does not exist");
      }
      d = sha256_file(pc.path);
    });
    manifest_.inputs[pc.path.generic_string()] = d;
    return d;
  }

  void record_inputs() {
    auto add = [&](const fs::path& p) { manifest_.inputs[p.generic_string()] = sha256_file(p); };
    add(cfg_.labels);
    const fs::path& root = universe_.index.root;
    for (const auto& scene : universe_.index.scenes) {
      add(root / scene.image);
      const fs::path manifest = root / scene.masks;
      const fs::path file = fs::is_directory(manifest) ? manifest / "masks.json" : manifest;
      add(file);
      const auto doc = json::parse(read_text_file(file));
      for (const auto& entry : doc.at("masks")) {
        if (entry.contains("file")) add(file.parent_path() / entry.at("file").get<std::string>());
      }
    }
    std::vector<std::string> all;
    for (const auto& [path, d] : manifest_.inputs) all.push_back(d);
    input_digest_ = sha256_hex(join_digests(all));
  }

  void run_stage(const std::string& name, const std::vector<const char*>& sections,
                 const std::vector<std::string>& inputs, const std::function<void()>& body) {
    json cfg_part = json::object();
    for (const char* s : sections) cfg_part[s] = sections_.at(s);
    if (cfg_part.contains("run")) cfg_part["run"].erase("out_dir");
    const std::string key = sha256_hex(name + "\n" + cfg_part.dump() + "\n" + join_digests(inputs));

    if (have_prev_) {
      auto it = std::find_if(prev_.stages.begin(), prev_.stages.end(),
                             [&](const StageRecord& s) { return s.name == name; });
      if (it != prev_.stages.end() && it->key == key && outputs_intact(it->outputs)) {
        StageRecord rec = *it;
        rec.skipped = true;
        manifest_.stages.push_back(std::move(rec));
        log(name, "skipped");
        return;
      }
    }
    written_.clear();
    stage_guard(name, body);
    StageRecord rec{name, key, false, {}};
    for (const auto& file : written_) rec.outputs[file] = sha256_file(out_ / file);
    manifest_.stages.push_back(std::move(rec));
    log(name, "ran");
  }

  bool outputs_intact(const std::map<std::string, std::string>& outputs) const {
    for (const auto& [file, d] : outputs) {
      const fs::path p = out_ / file;
      if (!fs::exists(p) || sha256_file(p) != d) return false;
    }
    return true;
  }

  void log(const std::string& name, const char* status) {
    if (opts_.log) *opts_.log << name << ": " << status << "\n";
  }

  void write(const std::string& file, const std::string& text) {
    write_text_file(out_ / file, text);
    written_.push_back(file);
  }

  void filter_stage() {
    std::vector<mask_io::MaskRecord> all;
    std::map<std::string, std::string> parent;
    json overlaps = json::array();
    std::size_t dropped = 0, unlabeled = 0;
    for (const auto& scene : universe_.index.scenes) {
      auto set = mask_io::read_mask_set(universe_.index.root / scene.masks);
      std::vector<mask_io::MaskRecord> records;
      for (auto& r : set.masks) {
        if (!cfg_.split_components) {
          records.push_back(std::move(r));
          continue;
        }
        for (auto& part : mask_io::split_components(r)) {
          if (part.id != r.id) parent[part.id] = r.id;
          records.push_back(std::move(part));
        }
      }
      const auto kept = mask_io::filter_masks(records, cfg_.thresholds);
      dropped += records.size() - kept.size();
      for (const auto& o : mask_io::find_overlaps(kept, cfg_.overlap_iou)) {
        overlaps.push_back({{"first", o.first}, {"second", o.second}, {"iou", o.iou}});
      }
      for (const auto& r : kept) {
        auto it = parent.find(r.id);
        const std::string& src = it == parent.end() ? r.id : it->second;
        if (universe_.index.labels.count(src)) {
          all.push_back(r);
        } else {
          ++unlabeled;
        }
      }
    }
    json kept = json::array();
    for (const auto& r : all) kept.push_back(r.id);
    json doc = {{"kept", kept},
                {"dropped", dropped},
                {"unlabeled", unlabeled},
                {"overlaps", overlaps},
                {"parent", parent}};
    write(kFiltered, doc.dump(2) + "\n");
  }

  void load_universe() {
    stage_guard("filter", [&] {
      const auto doc = json::parse(read_text_file(out_ / kFiltered));
      universe_.kept = doc.at("kept").get<std::vector<std::string>>();
      universe_.parent = doc.at("parent").get<std::map<std::string, std::string>>();
      filter_doc_ = doc;
    });
  }

  std::vector<preprocess::PreprocSpec> candidate_specs() const {
    std::vector<preprocess::PreprocSpec> specs;
    for (auto p : cfg_.candidates) specs.push_back({p, cfg_.side, cfg_.pad});
    return specs;
  }

  std::unique_ptr<embed::Provider> provider() const {
    return embed::make_provider(embed::ProviderConfig::parse(cfg_.provider));
  }

  void select_stage(bool precomputed) {
    const auto specs = candidate_specs();
    json doc;
    if (precomputed) {
      // Stored vectors do not depend on how crops are standardized.
      doc = {{"candidates", json::array()},
             {"chosen", specs.front().tag()},
             {"note", "precomputed embeddings; selection not applicable"}};
    } else {
      const auto ids = universe_.split("train");
      if (ids.empty()) throw ValidationError("no training masks survive the filter");
      const auto crops = load_crops(universe_, cfg_, ids);
      std::vector<std::string> labels;
      for (const auto& id : ids) labels.push_back(universe_.label(id));
      const auto p = provider();
      const auto report =
          preprocess::select_preproc(crops, labels, specs, *p, {cfg_.l2, true});
      json cands = json::array();
      for (const auto& c : report.candidates) {
        cands.push_back({{"tag", c.spec.tag()}, {"distance", c.distance}});
      }
      doc = {{"candidates", cands}, {"chosen", report.chosen.tag()}, {"l2", cfg_.l2}};
    }
    write(kSelection, doc.dump(2) + "\n");
  }

  std::vector<std::string> embedded_ids() const {
    std::vector<std::string> ids = universe_.split("train");
    if (cfg_.mode == TrainMode::grid) {
      const auto val = universe_.split("validation");
      ids.insert(ids.end(), val.begin(), val.end());
    }
    const auto test = universe_.split("test");
    ids.insert(ids.end(), test.begin(), test.end());
    return ids;
  }

  void embed_stage() {
    const auto chosen = preprocess::PreprocSpec::from_tag(
        json::parse(read_text_file(out_ / kSelection)).at("chosen").get<std::string>());
    const auto ids = embedded_ids();
    const auto p = provider();
    const auto crops = load_crops(universe_, cfg_, ids);
    std::vector<GrayImage> rasters;
    rasters.reserve(crops.size());
    for (const auto& c : crops) rasters.push_back(preprocess::apply_preproc(c, chosen));
    const auto m = embed_parallel(*p, ids, rasters);
    embed::save_embeddings(m, out_ / kEmbeddings);
    written_.push_back(kEmbeddings);
  }

  classify::LabeledDataset labeled(const embed::EmbeddingMatrix& all, const std::string& split,
                                   classify::Split tag) const {
    const auto ids = universe_.split(split);
    classify::LabeledDataset d;
    d.x = embed::select_rows(all, ids);
    for (const auto& id : ids) d.y.push_back(universe_.label(id));
    d.split = tag;
    return d;
  }

  void train_stage() {
    const auto all = embed::load_embeddings(out_ / kEmbeddings);
    const auto preproc =
        json::parse(read_text_file(out_ / kSelection)).at("chosen").get<std::string>();
    const auto train = labeled(all, "train", classify::Split::train);
    classify::TrainedClassifier model;
    if (cfg_.mode == TrainMode::lr) {
      if (cfg_.l2 || cfg_.balanced) {
        classify::TrainOptions opts;
        opts.l2_normalize = cfg_.l2;
        opts.balanced = cfg_.balanced;
        model = classify::train_logreg(train, 1.0, opts);
      } else {
        model = classify::train_lr_only(train);
      }
    } else {
      const auto val = labeled(all, "validation", classify::Split::validation);
      classify::GridSearchSpec spec;
      spec.balanced = cfg_.balanced;
      spec.seed = cfg_.seed;
      const auto result = classify::grid_search(train, val, spec);
      model = result.best;
      write(kTrace, classify::trace_to_json(result));
    }
    model.preproc_tag = preproc;
    classify::save_model(model, out_ / kModel);
    written_.push_back(kModel);
  }

  void predict_stage() {
    const auto model = classify::load_model(out_ / kModel);
    const auto all = embed::load_embeddings(out_ / kEmbeddings);
    if (all.provider_fingerprint != model.provider_fingerprint) {
      throw ValidationError("model was trained on embeddings from '" + model.provider_fingerprint +
                            "', got '" + all.provider_fingerprint + "'");
    }
    const auto ids = universe_.split("test");
    const auto x = embed::select_rows(all, ids);
    const auto proba = classify::predict_proba(model, x);
    const auto pred = classify::predict(model, x);
    json out = json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      json p = json::object();
      for (std::size_t k = 0; k < model.class_map.size(); ++k) {
        p[model.class_map[k]] = proba(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      }
      out.push_back({{"id", ids[i]}, {"true", universe_.label(ids[i])}, {"pred", pred[i]}, {"proba", p}});
    }
    write(kPreds, out.dump(2) + "\n");
  }

  void eval_stage() {
    const auto preds = json::parse(read_text_file(out_ / kPreds));
    const auto model = classify::load_model(out_ / kModel);
    std::vector<std::string> y_true, y_pred;
    std::set<std::string> classes(model.class_map.begin(), model.class_map.end());
    for (const auto& p : preds) {
      if (p.at("true").is_null()) continue;
      y_true.push_back(p.at("true").get<std::string>());
      y_pred.push_back(p.at("pred").get<std::string>());
      classes.insert(y_true.back());
    }
    const std::vector<std::string> class_map(classes.begin(), classes.end());
    eval::EvalReport report;
    if (!y_true.empty()) {
      const auto cm = eval::confusion(y_true, y_pred, class_map);
      const auto metrics = eval::precision_recall_f1(cm);
      report.rows = eval::rows_from_metrics(cfg_.dataset_name, cfg_.method, metrics);
      char buf[128];
      std::snprintf(buf, sizeof buf, "%s: %zu test masks, accuracy %.4f, macro-F1 %.4f",
                    cfg_.method.c_str(), y_true.size(), eval::accuracy(cm),
                    eval::macro_average(metrics).f1);
      report.notes.push_back(buf);
    } else {
      report.notes.push_back("no labeled test masks");
    }
    if (!cfg_.baseline.empty()) {
      const auto base = eval::load_baseline_rows(cfg_.baseline);
      report.rows.insert(report.rows.end(), base.begin(), base.end());
    }
    const auto dropped = filter_doc_.at("dropped").get<std::size_t>();
    if (dropped > 0) report.notes.push_back(std::to_string(dropped) + " masks removed by the filter");
    const auto& overlaps = filter_doc_.at("overlaps");
    if (!overlaps.empty()) {
      report.notes.push_back(std::to_string(overlaps.size()) +
                             " overlapping mask pairs kept (not deduplicated)");
    }
    write(kReportMd, eval::render_markdown(report));
    write(kReportJson, eval::render_json(report));
    if (cfg_.overlay) write_overlays(preds);
  }

  void write_overlays(const json& preds) {
    std::map<std::string, std::string> predicted;
    for (const auto& p : preds) predicted[p.at("id").get<std::string>()] = p.at("pred").get<std::string>();
    for (const auto& scene : universe_.index.scenes) {
      std::vector<eval::OverlayBox> boxes;
      for (const auto& r : scene_records(universe_, scene, cfg_.split_components)) {
        auto it = predicted.find(r.id);
        if (it != predicted.end()) boxes.push_back({mask_io::bbox_from_mask(r.mask), it->second});
      }
      if (boxes.empty()) continue;
      const auto image = read_gray_png(universe_.index.root / scene.image);
      const std::string file = "overlay_" + scene.id + ".png";
      write_rgb_png(eval::render_overlay(image, boxes), out_ / file);
      written_.push_back(file);
    }
  }

  void analyze_stage() {
    auto all = embed::load_embeddings(out_ / kEmbeddings);
    if (cfg_.l2) all = embed::l2_normalize_rows(std::move(all));
    std::vector<std::string> labels;
    for (const auto& id : all.ids) labels.push_back(universe_.label(id));
    const auto x = analyze::to_matrix(all);
    const auto projection = analyze::pca_fit_transform(x);
    write(kProjection, analyze::projection_csv(all.ids, projection, labels));
    write(kMetrics, analyze::metrics_json(analyze::cluster_metrics(x, labels, cfg_.silhouette_space)));
  }

  const RunConfig& cfg_;
  const RunOptions& opts_;
  fs::path out_;
  json sections_;
  RunManifest prev_;
  bool have_prev_ = false;
  RunManifest manifest_;
  Universe universe_;
  json filter_doc_;
  std::string input_digest_;
  std::vector<std::string> written_;
};

}  // namespace

RunManifest run_pipeline(const RunConfig& config, const RunOptions& options) {
  try {
    validate(config);
  } catch (const ConfigError& e) {
    throw StageError("config", e.what());
  }
  Runner runner(config, options);
  return runner.run();
}

}  // namespace npshape::pipeline
