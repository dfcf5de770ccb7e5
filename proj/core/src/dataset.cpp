#include "npshape/dataset.hpp"

#include <set>

#include "json.hpp"
#include "npshape/digest.hpp"
#include "npshape/error.hpp"

namespace npshape::dataset {

using nlohmann::json;

const std::vector<std::string>& DatasetIndex::split(const std::string& name) const {
  static const std::vector<std::string> kEmpty;
  auto it = splits.find(name);
  return it == splits.end() ? kEmpty : it->second;
}

std::vector<std::string> DatasetIndex::labels_for(const std::vector<std::string>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = labels.find(id);
    if (it == labels.end()) throw ValidationError("no label for id '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

std::map<std::string, int> DatasetIndex::class_counts(const std::string& split_name) const {
  std::map<std::string, int> counts;
  for (const auto& label : labels_for(split(split_name))) ++counts[label];
  return counts;
}

DatasetIndex read_index(const std::filesystem::path& path) {
  DatasetIndex index;
  index.root = path.parent_path();
  try {
    const auto doc = json::parse(read_text_file(path));
    index.labels = doc.at("labels").get<std::map<std::string, std::string>>();
    if (doc.contains("splits")) {
      index.splits = doc.at("splits").get<std::map<std::string, std::vector<std::string>>>();
    }
    if (doc.contains("scenes")) {
      for (const auto& s : doc.at("scenes")) {
        index.scenes.push_back({s.at("id").get<std::string>(), s.at("image").get<std::string>(),
                                s.at("masks").get<std::string>()});
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("dataset index '" + path.string() + "': " + e.what());
  }
  std::set<std::string> seen;
  for (const auto& [name, ids] : index.splits) {
    for (const auto& id : ids) {
      if (!seen.insert(id).second) {
        throw ValidationError("id '" + id + "' appears in more than one split");
      }
      if (!index.labels.contains(id)) {
        throw ValidationError("split '" + name + "' lists unlabeled id '" + id + "'");
      }
    }
  }
  return index;
}

void write_index(const DatasetIndex& index, const std::filesystem::path& path) {
  json scenes = json::array();
  for (const auto& s : index.scenes) {
    scenes.push_back({{"id", s.id}, {"image", s.image.generic_string()},
                      {"masks", s.masks.generic_string()}});
  }
  const json doc = {{"labels", index.labels}, {"splits", index.splits}, {"scenes", scenes}};
  write_text_file(path, doc.dump(1));
}

}  // namespace npshape::dataset
