#include <bit>
#include <cmath>

#include "json.hpp"
#include "npshape/classify.hpp"
#include "npshape/digest.hpp"
#include "npshape/error.hpp"

namespace npshape::classify {

using nlohmann::json;

namespace {

json encode_matrix(const Eigen::MatrixXd& m) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(m.size()) * 8);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto bits = std::bit_cast<std::uint64_t>(m(r, c));
      for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", base64_encode(bytes)}};
}

Eigen::MatrixXd decode_matrix(const json& j, const char* name) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  if (rows < 0 || cols < 0) throw FormatError(std::string("model: negative shape for ") + name);
  const auto bytes = base64_decode(j.at("data").get<std::string>());
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * 8) {
    throw FormatError(std::string("model: blob '") + name + "' does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t pos = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
      m(r, c) = std::bit_cast<double>(bits);
    }
  }
  return m;
}

Eigen::VectorXd decode_vector(const json& j, const char* name) {
  Eigen::MatrixXd m = decode_matrix(j, name);
  if (m.cols() != 1) throw FormatError(std::string("model: '") + name + "' must be a column");
  return m.col(0);
}

}  // namespace

std::string model_to_json(const TrainedClassifier& model) {
  validate(model);
  json params = std::visit(
      [](const auto& p) -> json {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GnbParams>) {
          return {{"means", encode_matrix(p.means)},
                  {"variances", encode_matrix(p.variances)},
                  {"log_priors", encode_matrix(p.log_priors)}};
        } else {
          return {{"weights", encode_matrix(p.weights)}, {"bias", encode_matrix(p.bias)}};
        }
      },
      model.params);
  json doc = {{"schema_version", kModelSchemaVersion},
              {"kind", to_string(model.kind)},
              {"class_map", model.class_map},
              {"dim", model.dim()},
              {"hyperparams", model.hyperparams},
              {"l2_normalize", model.l2_normalize},
              {"preproc_tag", model.preproc_tag},
              {"provider_fingerprint", model.provider_fingerprint},
              {"params", std::move(params)},
              {"training",
               {{"iterations", model.info.iterations},
                {"converged", model.info.converged},
                {"final_gradient_norm", model.info.final_gradient_norm},
                {"final_objective", model.info.final_objective},
                {"non_separable", model.info.non_separable},
                {"seed", model.info.seed}}}};
  return doc.dump(1);
}

TrainedClassifier model_from_json(const std::string& text) {
  TrainedClassifier model;
  try {
    const auto doc = json::parse(text);
    const int version = doc.at("schema_version").get<int>();
    if (version != kModelSchemaVersion) {
      throw FormatError("model: unsupported schema_version " + std::to_string(version));
    }
    model.kind = parse_classifier_kind(doc.at("kind").get<std::string>());
    model.class_map = doc.at("class_map").get<std::vector<std::string>>();
    model.hyperparams = doc.at("hyperparams").get<std::map<std::string, double>>();
    model.l2_normalize = doc.at("l2_normalize").get<bool>();
    model.preproc_tag = doc.at("preproc_tag").get<std::string>();
    model.provider_fingerprint = doc.at("provider_fingerprint").get<std::string>();
    const auto& p = doc.at("params");
    switch (model.kind) {
      case ClassifierKind::logreg:
        model.params = LogRegParams{decode_matrix(p.at("weights"), "weights"),
                                    decode_vector(p.at("bias"), "bias")};
        break;
      case ClassifierKind::linear_svm:
        model.params = SvmParams{decode_matrix(p.at("weights"), "weights"),
                                 decode_vector(p.at("bias"), "bias")};
        break;
      case ClassifierKind::gaussian_nb:
        model.params = GnbParams{decode_matrix(p.at("means"), "means"),
                                 decode_matrix(p.at("variances"), "variances"),
                                 decode_vector(p.at("log_priors"), "log_priors")};
        break;
    }
    if (doc.at("dim").get<int>() != model.dim()) throw FormatError("model: dim field disagrees");
    const auto& t = doc.at("training");
    model.info.iterations = t.at("iterations").get<int>();
    model.info.converged = t.at("converged").get<bool>();
    model.info.final_gradient_norm = t.at("final_gradient_norm").get<double>();
    model.info.final_objective = t.at("final_objective").get<double>();
    model.info.non_separable = t.at("non_separable").get<bool>();
    model.info.seed = t.at("seed").get<std::uint64_t>();
    validate(model);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model schema error: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("model schema error: ") + e.what());
  }
  return model;
}

void save_model(const TrainedClassifier& model, const std::filesystem::path& path) {
  write_text_file(path, model_to_json(model));
}

TrainedClassifier load_model(const std::filesystem::path& path) {
  return model_from_json(read_text_file(path));
}

std::string trace_to_json(const GridSearchResult& result) {
  json entries = json::array();
  for (const auto& e : result.trace) {
    entries.push_back({{"kind", to_string(e.kind)},
                       {"param", e.param_name},
                       {"value", e.param_value},
                       {"l2_normalize", e.l2_normalize},
                       {"val_macro_f1", e.val_macro_f1},
                       {"seed", e.seed}});
  }
  return json{{"best_index", result.best_index}, {"entries", entries}}.dump(1);
}

}  // namespace npshape::classify
