#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "npshape/analyze.hpp"
#include "npshape/mask_io.hpp"
#include "npshape/preprocess.hpp"

namespace npshape::pipeline {

enum class TrainMode { grid, lr };

const char* to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

/// Parsed run.toml. Relative paths are resolved against the config file's
/// directory by load_config().
struct RunConfig {
  // [run]
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "run";
  // [data]
  std::filesystem::path labels;  // dataset index (labels.json)
  std::string dataset_name = "dataset";
  // [masks]
  mask_io::FilterThresholds thresholds;
  bool split_components = false;
  double overlap_iou = 0.8;
  // [crop]
  mask_io::CropVariant variant = mask_io::CropVariant::raw_crop;
  int margin = 0;
  // [preproc]
  std::vector<preprocess::Pipeline> candidates{preprocess::kAllPipelines.begin(),
                                               preprocess::kAllPipelines.end()};
  int side = 224;
  std::uint8_t pad = 0;
  bool l2 = false;
  // [embed]
  std::string provider = "toy";
  // [train]
  TrainMode mode = TrainMode::lr;
  bool balanced = false;
  // [eval]
  std::string method = "npshape";
  std::filesystem::path baseline;  // optional static rows
  bool overlay = false;
  // [analyze]
  bool analyze = true;
  analyze::MetricSpace silhouette_space = analyze::MetricSpace::full;
};

/// Throws ConfigError naming the offending key.
RunConfig parse_config(const std::string& toml_text,
                       const std::filesystem::path& base_dir = std::filesystem::path());
RunConfig load_config(const std::filesystem::path& path);
void validate(const RunConfig& config);

/// Canonical JSON of every field, grouped by config section.
std::string config_to_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);

inline constexpr std::array<const char*, 7> kStages = {"filter", "select",  "embed",  "train",
                                                       "predict", "eval", "analyze"};

struct StageRecord {
  std::string name;
  /// Digest of the stage's config section and input digests.
  std::string key;
  bool skipped = false;
  std::map<std::string, std::string> outputs;  // file name in out_dir -> sha256
};

inline constexpr int kManifestSchemaVersion = 1;

struct RunManifest {
  int schema_version = kManifestSchemaVersion;
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::string provider_fingerprint;
  std::string chosen_preproc;
  std::string model_file;
  std::map<std::string, std::string> inputs;  // path -> sha256
  std::vector<StageRecord> stages;
  std::string started_at;
  std::string finished_at;

  /// Every output of every stage, file name -> sha256.
  std::map<std::string, std::string> artifacts() const;
  std::vector<std::string> ran() const;
};

std::string manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const std::string& text);

inline constexpr char kManifestFile[] = "manifest.json";

struct RunOptions {
  /// Ignore the previous manifest and run every stage.
  bool force = false;
  /// Progress lines, one per stage; null for silence.
  std::ostream* log = nullptr;
};

/// Runs every stage in order, writing artifacts and manifest.json to
/// out_dir. A stage is skipped when the previous manifest holds the same key
/// and its outputs are present with matching digests. Failures are raised as
/// StageError carrying the stage name. In lr mode validation masks are never
/// cropped, embedded or read.
RunManifest run_pipeline(const RunConfig& config, const RunOptions& options = {});

}  // namespace npshape::pipeline
