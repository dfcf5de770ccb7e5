#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace npshape::dataset {

struct SplitCounts {
  int train = 0;
  int validation = 0;
  int test = 0;
  int total() const noexcept { return train + validation + test; }
  bool operator==(const SplitCounts&) const = default;
};

struct SceneEntry {
  std::string id;
  std::filesystem::path image;  // relative to the index file
  std::filesystem::path masks;  // relative to the index file
};

/// Contents of labels.json:
/// {"labels": {id: class}, "splits": {"train": [...], "validation": [...], "test": [...]},
///  "scenes": [{"id", "image", "masks"}]}
struct DatasetIndex {
  std::map<std::string, std::string> labels;
  std::map<std::string, std::vector<std::string>> splits;
  std::vector<SceneEntry> scenes;
  std::filesystem::path root;  // directory holding labels.json

  const std::vector<std::string>& split(const std::string& name) const;
  /// Labels for `ids`; throws ValidationError for unlabeled ids.
  std::vector<std::string> labels_for(const std::vector<std::string>& ids) const;
  /// Per-class counts of one split.
  std::map<std::string, int> class_counts(const std::string& split_name) const;
};

DatasetIndex read_index(const std::filesystem::path& path);
void write_index(const DatasetIndex& index, const std::filesystem::path& path);

}  // namespace npshape::dataset
