#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "npshape/embed.hpp"

namespace npshape::classify {

enum class Split { train, validation, test };

const char* to_string(Split split);

struct LabeledDataset {
  embed::EmbeddingMatrix x;
  std::vector<std::string> y;
  Split split = Split::train;

  /// Sorted unique labels.
  std::vector<std::string> class_map() const;
};

void validate(const LabeledDataset& data);

enum class ClassifierKind { logreg, gaussian_nb, linear_svm };

const char* to_string(ClassifierKind kind);
ClassifierKind parse_classifier_kind(const std::string& text);

struct LogRegParams {
  Eigen::MatrixXd weights;  // K x D
  Eigen::VectorXd bias;     // K
};

struct GnbParams {
  Eigen::MatrixXd means;      // K x D
  Eigen::MatrixXd variances;  // K x D, smoothing included
  Eigen::VectorXd log_priors;  // K
};

struct SvmParams {
  Eigen::MatrixXd weights;  // K one-vs-rest rows
  Eigen::VectorXd bias;     // K
};

using ModelParams = std::variant<LogRegParams, GnbParams, SvmParams>;

struct TrainingInfo {
  int iterations = 0;
  bool converged = false;
  double final_gradient_norm = 0.0;
  double final_objective = 0.0;
  /// Identical rows carry different labels, so no model separates the data.
  bool non_separable = false;
  std::uint64_t seed = 0;
  /// Objective after every accepted step (logreg only, when requested).
  std::vector<double> objective_trace;
};

struct TrainedClassifier {
  ClassifierKind kind = ClassifierKind::logreg;
  std::vector<std::string> class_map;
  ModelParams params;
  std::map<std::string, double> hyperparams;
  /// Rows are L2-normalized before scoring, both in training and prediction.
  bool l2_normalize = false;
  std::string preproc_tag;
  std::string provider_fingerprint;
  TrainingInfo info;

  int dim() const;
};

void validate(const TrainedClassifier& model);

struct TrainOptions {
  /// Inverse-frequency sample weights (mean weight 1).
  bool balanced = false;
  bool l2_normalize = false;
  int max_iterations = 1000;
  double gradient_tolerance = 1e-6;
  bool record_objective = false;
};

/// Mean (weighted) softmax cross-entropy + lambda/2 ||W||^2, bias unregularized.
/// Exposed so tests can check the analytic gradient.
class LogRegObjective {
 public:
  LogRegObjective(Eigen::MatrixXd x, std::vector<int> y, int classes, double lambda,
                  Eigen::VectorXd sample_weights);

  double value(const LogRegParams& p) const;
  LogRegParams gradient(const LogRegParams& p) const;
  /// Value and gradient in one pass.
  double evaluate(const LogRegParams& p, LogRegParams* grad) const;

  int classes() const noexcept { return classes_; }
  Eigen::Index dim() const noexcept { return x_.cols(); }

 private:
  Eigen::MatrixXd x_;
  std::vector<int> y_;
  int classes_;
  double lambda_;
  Eigen::VectorXd w_;
};

/// Multinomial logistic regression by full-batch gradient descent with
/// Armijo backtracking from zero initialization. Stops when the gradient
/// max-norm drops below the tolerance or after max_iterations.
TrainedClassifier train_logreg(const LabeledDataset& train, double lambda,
                               const TrainOptions& options = {});

/// Per-class Gaussian naive Bayes. Variances get var_smoothing times the
/// largest feature variance of the whole training set added.
TrainedClassifier train_gnb(const LabeledDataset& train, double var_smoothing,
                            const TrainOptions& options = {});

inline constexpr std::uint64_t kDefaultSeed = 20240607;
inline constexpr int kSvmEpochs = 200;

/// One-vs-rest linear SVM: hinge loss + lambda/2 ||w||^2 with lambda = 1/(C N),
/// minimized by projected subgradient steps eta_t = 1/(lambda t) over seeded
/// per-epoch shuffles. The bias is a constant augmented feature.
TrainedClassifier train_linear_svm(const LabeledDataset& train, double c,
                                   std::uint64_t seed = kDefaultSeed, int epochs = kSvmEpochs,
                                   const TrainOptions& options = {});

/// Logistic regression with lambda = 1 on raw rows; never sees validation data.
TrainedClassifier train_lr_only(const LabeledDataset& train);

/// N x K; rows sum to 1. For linear_svm this is a softmax over margins and is
/// not calibrated.
Eigen::MatrixXd predict_proba(const TrainedClassifier& model, const embed::EmbeddingMatrix& x);

/// Raw per-class scores (logits, joint log-likelihoods, or margins).
Eigen::MatrixXd decision_scores(const TrainedClassifier& model, const embed::EmbeddingMatrix& x);

/// Argmax of the scores; ties go to the earlier class_map entry.
std::vector<std::string> predict(const TrainedClassifier& model, const embed::EmbeddingMatrix& x);

struct GridSearchSpec {
  std::vector<ClassifierKind> kinds{ClassifierKind::logreg, ClassifierKind::gaussian_nb,
                                    ClassifierKind::linear_svm};
  std::vector<double> logreg_lambdas{100, 10, 1, 0.1, 0.01};
  std::vector<double> svm_cs{0.01, 0.1, 1, 10};
  std::vector<double> gnb_smoothing{1e-9, 1e-7, 1e-5};
  /// Try every combination with and without L2-normalized rows.
  bool try_l2_normalization = true;
  bool balanced = false;
  std::uint64_t seed = kDefaultSeed;
  bool parallel = true;
};

struct TraceEntry {
  ClassifierKind kind = ClassifierKind::logreg;
  std::string param_name;
  double param_value = 0.0;
  bool l2_normalize = false;
  double val_macro_f1 = 0.0;
  std::uint64_t seed = 0;
};

struct GridSearchResult {
  TrainedClassifier best;
  std::size_t best_index = 0;
  std::vector<TraceEntry> trace;
};

/// Trains every combination (kinds in enum order, then grid order, then raw
/// before normalized) and keeps the first one with the highest validation
/// macro-F1.
GridSearchResult grid_search(const LabeledDataset& train, const LabeledDataset& validation,
                             const GridSearchSpec& spec = {});

std::string trace_to_json(const GridSearchResult& result);

inline constexpr int kModelSchemaVersion = 1;

/// JSON with base64 little-endian float64 parameter blobs.
std::string model_to_json(const TrainedClassifier& model);
/// Throws FormatError on schema violations.
TrainedClassifier model_from_json(const std::string& text);
void save_model(const TrainedClassifier& model, const std::filesystem::path& path);
TrainedClassifier load_model(const std::filesystem::path& path);

}  // namespace npshape::classify
