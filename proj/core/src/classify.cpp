#include "npshape/classify.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <random>
#include <set>

#include "npshape/error.hpp"
#include "npshape/eval.hpp"

namespace npshape::classify {

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

const char* to_string(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::logreg: return "logreg";
    case ClassifierKind::gaussian_nb: return "gaussian_nb";
    case ClassifierKind::linear_svm: return "linear_svm";
  }
  return "?";
}

ClassifierKind parse_classifier_kind(const std::string& text) {
  for (auto k : {ClassifierKind::logreg, ClassifierKind::gaussian_nb, ClassifierKind::linear_svm}) {
    if (text == to_string(k)) return k;
  }
  throw ValidationError("unknown classifier kind '" + text + "'");
}

std::vector<std::string> LabeledDataset::class_map() const {
  std::set<std::string> unique(y.begin(), y.end());
  return {unique.begin(), unique.end()};
}

void validate(const LabeledDataset& data) {
  embed::validate(data.x);
  if (data.y.size() != data.x.rows()) {
    throw ValidationError(std::string(to_string(data.split)) + " set has " +
                          std::to_string(data.y.size()) + " labels for " +
                          std::to_string(data.x.rows()) + " rows");
  }
  if (data.y.empty()) throw ValidationError(std::string(to_string(data.split)) + " set is empty");
}

int TrainedClassifier::dim() const {
  return std::visit(
      [](const auto& p) -> int {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, GnbParams>) {
          return static_cast<int>(p.means.cols());
        } else {
          return static_cast<int>(p.weights.cols());
        }
      },
      params);
}

void validate(const TrainedClassifier& model) {
  const auto k = static_cast<Eigen::Index>(model.class_map.size());
  if (k < 2) throw ValidationError("model needs at least 2 classes");
  auto check = [&](const auto& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols) {
      throw ValidationError(std::string("model parameter '") + what + "' has wrong shape");
    }
    if (!m.allFinite()) throw ValidationError(std::string("model parameter '") + what +
                                              "' is not finite");
  };
  const Eigen::Index d = model.dim();
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GnbParams>) {
          check(p.means, k, d, "means");
          check(p.variances, k, d, "variances");
          check(p.log_priors, k, 1, "log_priors");
          if ((p.variances.array() <= 0).any()) throw ValidationError("GNB variances must be > 0");
        } else {
          check(p.weights, k, d, "weights");
          check(p.bias, k, 1, "bias");
        }
      },
      model.params);
  const bool kind_matches =
      (model.kind == ClassifierKind::logreg && std::holds_alternative<LogRegParams>(model.params)) ||
      (model.kind == ClassifierKind::gaussian_nb && std::holds_alternative<GnbParams>(model.params)) ||
      (model.kind == ClassifierKind::linear_svm && std::holds_alternative<SvmParams>(model.params));
  if (!kind_matches) throw ValidationError("model kind does not match its parameters");
}

namespace {

struct Prepared {
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::vector<std::string> class_map;
  std::vector<int> counts;
};

Eigen::MatrixXd to_matrix(const embed::EmbeddingMatrix& m, bool l2) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(m.rows()), m.dim);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    for (int d = 0; d < m.dim; ++d) x(static_cast<Eigen::Index>(i), d) = row[static_cast<std::size_t>(d)];
  }
  if (l2) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double n = x.row(i).norm();
      if (n > 0) x.row(i) /= n;
    }
  }
  return x;
}

Prepared prepare(const LabeledDataset& data, bool l2) {
  validate(data);
  Prepared p;
  p.class_map = data.class_map();
  if (p.class_map.size() < 2) {
    throw ValidationError("training needs at least 2 classes, got " +
                          std::to_string(p.class_map.size()));
  }
  p.x = to_matrix(data.x, l2);
  p.counts.assign(p.class_map.size(), 0);
  for (const auto& label : data.y) {
    const int k = static_cast<int>(
        std::lower_bound(p.class_map.begin(), p.class_map.end(), label) - p.class_map.begin());
    p.y.push_back(k);
    ++p.counts[static_cast<std::size_t>(k)];
  }
  return p;
}

Eigen::VectorXd sample_weights(const Prepared& p, bool balanced) {
  const auto n = static_cast<Eigen::Index>(p.y.size());
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (!balanced) return w;
  const double k = static_cast<double>(p.class_map.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i) = static_cast<double>(n) / (k * p.counts[static_cast<std::size_t>(p.y[static_cast<std::size_t>(i)])]);
  }
  return w;
}

bool has_conflicting_duplicates(const Prepared& p) {
  for (Eigen::Index i = 0; i < p.x.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < p.x.rows(); ++j) {
      if (p.y[static_cast<std::size_t>(i)] != p.y[static_cast<std::size_t>(j)] &&
          p.x.row(i) == p.x.row(j)) {
        return true;
      }
    }
  }
  return false;
}

double max_abs(const LogRegParams& g) {
  return std::max(g.weights.cwiseAbs().maxCoeff(), g.bias.cwiseAbs().maxCoeff());
}

double squared_norm(const LogRegParams& g) {
  return g.weights.squaredNorm() + g.bias.squaredNorm();
}

TrainedClassifier make_model(ClassifierKind kind, const Prepared& p, ModelParams params,
                             const LabeledDataset& data, bool l2) {
  TrainedClassifier model;
  model.kind = kind;
  model.class_map = p.class_map;
  model.params = std::move(params);
  model.l2_normalize = l2;
  model.provider_fingerprint = data.x.provider_fingerprint;
  return model;
}

}  // namespace

LogRegObjective::LogRegObjective(Eigen::MatrixXd x, std::vector<int> y, int classes,
                                 double lambda, Eigen::VectorXd sample_weights)
    : x_(std::move(x)), y_(std::move(y)), classes_(classes), lambda_(lambda),
      w_(std::move(sample_weights)) {
  if (static_cast<std::size_t>(x_.rows()) != y_.size() || w_.size() != x_.rows()) {
    throw ValidationError("LogRegObjective: inconsistent sizes");
  }
}

double LogRegObjective::evaluate(const LogRegParams& p, LogRegParams* grad) const {
  const auto n = x_.rows();
  Eigen::MatrixXd logits = x_ * p.weights.transpose();
  logits.rowwise() += p.bias.transpose();
  double loss = 0.0;
  Eigen::MatrixXd residual(n, classes_);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double top = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - top).exp().matrix();
    const double z = e.sum();
    const int yi = y_[static_cast<std::size_t>(i)];
    loss += w_(i) * (std::log(z) + top - logits(i, yi));
    if (grad) {
      residual.row(i) = e / z;
      residual(i, yi) -= 1.0;
      residual.row(i) *= w_(i);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) {
    grad->weights = inv_n * residual.transpose() * x_ + lambda_ * p.weights;
    grad->bias = inv_n * residual.colwise().sum().transpose();
  }
  return loss * inv_n + 0.5 * lambda_ * p.weights.squaredNorm();
}

double LogRegObjective::value(const LogRegParams& p) const { return evaluate(p, nullptr); }

LogRegParams LogRegObjective::gradient(const LogRegParams& p) const {
  LogRegParams g;
  evaluate(p, &g);
  return g;
}

TrainedClassifier train_logreg(const LabeledDataset& train, double lambda,
                               const TrainOptions& options) {
  if (!std::isfinite(lambda) || lambda < 0) throw ValidationError("lambda must be >= 0");
  const Prepared p = prepare(train, options.l2_normalize);
  const int k = static_cast<int>(p.class_map.size());
  if (p.x.rows() < k) throw ValidationError("logreg needs at least as many rows as classes");

  const LogRegObjective objective(p.x, p.y, k, lambda, sample_weights(p, options.balanced));
  LogRegParams params{Eigen::MatrixXd::Zero(k, p.x.cols()), Eigen::VectorXd::Zero(k)};
  LogRegParams grad;
  double f = objective.evaluate(params, &grad);

  TrainingInfo info;
  info.non_separable = has_conflicting_duplicates(p);
  if (options.record_objective) info.objective_trace.push_back(f);
  double step = 1.0;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (max_abs(grad) < options.gradient_tolerance) {
      info.converged = true;
      break;
    }
    const double g2 = squared_norm(grad);
    double t = std::min(step * 2.0, 1e6);
    LogRegParams trial;
    LogRegParams trial_grad;
    double ft = 0.0;
    bool accepted = false;
    while (t > 1e-20) {
      trial.weights = params.weights - t * grad.weights;
      trial.bias = params.bias - t * grad.bias;
      ft = objective.evaluate(trial, &trial_grad);
      if (ft <= f - 0.5 * t * g2) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;  // no descent possible at floating-point resolution
    params = std::move(trial);
    grad = std::move(trial_grad);
    f = ft;
    step = t;
    if (options.record_objective) info.objective_trace.push_back(f);
  }
  if (!info.converged && max_abs(grad) < options.gradient_tolerance) info.converged = true;
  info.iterations = it;
  info.final_gradient_norm = max_abs(grad);
  info.final_objective = f;

  auto model = make_model(ClassifierKind::logreg, p, std::move(params), train,
                          options.l2_normalize);
  model.hyperparams = {{"lambda", lambda}};
  if (options.balanced) model.hyperparams["balanced"] = 1.0;
  model.info = std::move(info);
  return model;
}

TrainedClassifier train_gnb(const LabeledDataset& train, double var_smoothing,
                            const TrainOptions& options) {
  if (!std::isfinite(var_smoothing) || var_smoothing < 0) {
    throw ValidationError("var_smoothing must be >= 0");
  }
  const Prepared p = prepare(train, options.l2_normalize);
  const auto k = static_cast<Eigen::Index>(p.class_map.size());
  const auto d = p.x.cols();
  const auto n = p.x.rows();

  const Eigen::RowVectorXd global_mean = p.x.colwise().mean();
  const double max_var =
      (p.x.rowwise() - global_mean).array().square().colwise().mean().maxCoeff();
  const double epsilon = max_var > 0 ? var_smoothing * max_var : var_smoothing;

  GnbParams params{Eigen::MatrixXd::Zero(k, d), Eigen::MatrixXd::Zero(k, d),
                   Eigen::VectorXd::Zero(k)};
  for (Eigen::Index i = 0; i < n; ++i) params.means.row(p.y[static_cast<std::size_t>(i)]) += p.x.row(i);
  for (Eigen::Index c = 0; c < k; ++c) params.means.row(c) /= p.counts[static_cast<std::size_t>(c)];
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = p.y[static_cast<std::size_t>(i)];
    params.variances.row(c) += (p.x.row(i) - params.means.row(c)).array().square().matrix();
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    params.variances.row(c) /= p.counts[static_cast<std::size_t>(c)];
    params.variances.row(c).array() += epsilon;
    params.log_priors(c) =
        options.balanced ? -std::log(static_cast<double>(k))
                         : std::log(static_cast<double>(p.counts[static_cast<std::size_t>(c)]) /
                                    static_cast<double>(n));
  }
  if ((params.variances.array() <= 0).any()) {
    throw ValidationError("GNB variance is zero; use var_smoothing > 0");
  }
  auto model = make_model(ClassifierKind::gaussian_nb, p, std::move(params), train,
                          options.l2_normalize);
  model.hyperparams = {{"var_smoothing", var_smoothing}};
  if (options.balanced) model.hyperparams["balanced"] = 1.0;
  model.info.non_separable = has_conflicting_duplicates(p);
  model.info.converged = true;
  return model;
}

TrainedClassifier train_linear_svm(const LabeledDataset& train, double c, std::uint64_t seed,
                                   int epochs, const TrainOptions& options) {
  if (!std::isfinite(c) || c <= 0) throw ValidationError("C must be > 0");
  if (epochs <= 0) throw ValidationError("epochs must be > 0");
  const Prepared p = prepare(train, options.l2_normalize);
  const auto k = static_cast<Eigen::Index>(p.class_map.size());
  const auto d = p.x.cols();
  const auto n = p.x.rows();
  const double lambda = 1.0 / (c * static_cast<double>(n));
  const Eigen::VectorXd weights = sample_weights(p, options.balanced);

  // Portable Fisher-Yates over mt19937_64 so the order is identical everywhere.
  std::mt19937_64 rng(seed);
  std::vector<std::vector<Eigen::Index>> orders(static_cast<std::size_t>(epochs));
  for (auto& order : orders) {
    order.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng() % i]);
    }
  }

  SvmParams params{Eigen::MatrixXd::Zero(k, d), Eigen::VectorXd::Zero(k)};
  const double radius = 1.0 / std::sqrt(lambda);
  for (Eigen::Index cls = 0; cls < k; ++cls) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);  // last entry is the bias
    std::int64_t t = 0;
    for (const auto& order : orders) {
      for (Eigen::Index i : order) {
        ++t;
        const double eta = 1.0 / (lambda * static_cast<double>(t));
        const double label = p.y[static_cast<std::size_t>(i)] == cls ? 1.0 : -1.0;
        const double margin = label * (w.head(d).dot(p.x.row(i)) + w(d));
        w *= 1.0 - eta * lambda;
        if (margin < 1.0) {
          w.head(d) += eta * label * weights(i) * p.x.row(i).transpose();
          w(d) += eta * label * weights(i);
        }
        const double norm = w.norm();
        if (norm > radius) w *= radius / norm;
      }
    }
    params.weights.row(cls) = w.head(d).transpose();
    params.bias(cls) = w(d);
  }
  auto model = make_model(ClassifierKind::linear_svm, p, std::move(params), train,
                          options.l2_normalize);
  model.hyperparams = {{"C", c}, {"epochs", static_cast<double>(epochs)}};
  if (options.balanced) model.hyperparams["balanced"] = 1.0;
  model.info.seed = seed;
  model.info.iterations = epochs;
  model.info.non_separable = has_conflicting_duplicates(p);
  return model;
}

TrainedClassifier train_lr_only(const LabeledDataset& train) {
  return train_logreg(train, 1.0, TrainOptions{});
}

Eigen::MatrixXd decision_scores(const TrainedClassifier& model, const embed::EmbeddingMatrix& m) {
  if (m.dim != model.dim()) {
    throw ValidationError("embedding dimension " + std::to_string(m.dim) +
                          " does not match model dimension " + std::to_string(model.dim()));
  }
  const Eigen::MatrixXd x = to_matrix(m, model.l2_normalize);
  return std::visit(
      [&](const auto& p) -> Eigen::MatrixXd {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GnbParams>) {
          const auto k = p.means.rows();
          Eigen::MatrixXd jll(x.rows(), k);
          constexpr double kLog2Pi = 1.8378770664093453;
          for (Eigen::Index c = 0; c < k; ++c) {
            const double norm = -0.5 * (p.variances.row(c).array().log() + kLog2Pi).sum();
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
              const double quad =
                  ((x.row(i) - p.means.row(c)).array().square() / p.variances.row(c).array())
                      .sum();
              jll(i, c) = p.log_priors(c) + norm - 0.5 * quad;
            }
          }
          return jll;
        } else {
          Eigen::MatrixXd scores = x * p.weights.transpose();
          scores.rowwise() += p.bias.transpose();
          return scores;
        }
      },
      model.params);
}

Eigen::MatrixXd predict_proba(const TrainedClassifier& model, const embed::EmbeddingMatrix& m) {
  Eigen::MatrixXd s = decision_scores(model, m);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double top = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - top).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
  return s;
}

std::vector<std::string> predict(const TrainedClassifier& model, const embed::EmbeddingMatrix& m) {
  const Eigen::MatrixXd s = decision_scores(model, m);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < s.cols(); ++c) {
      if (s(i, c) > s(i, best)) best = c;
    }
    out.push_back(model.class_map[static_cast<std::size_t>(best)]);
  }
  return out;
}

GridSearchResult grid_search(const LabeledDataset& train, const LabeledDataset& validation,
                             const GridSearchSpec& spec) {
  validate(train);
  validate(validation);
  const auto class_map = train.class_map();
  for (const auto& label : validation.class_map()) {
    if (!std::binary_search(class_map.begin(), class_map.end(), label)) {
      throw ValidationError("validation label '" + label + "' does not occur in training");
    }
  }

  struct Combo {
    ClassifierKind kind;
    const char* name;
    double value;
    bool l2;
  };
  std::vector<ClassifierKind> kinds = spec.kinds;
  std::sort(kinds.begin(), kinds.end());
  kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
  std::vector<Combo> combos;
  for (auto kind : kinds) {
    const auto& grid = kind == ClassifierKind::logreg        ? spec.logreg_lambdas
                       : kind == ClassifierKind::gaussian_nb ? spec.gnb_smoothing
                                                              : spec.svm_cs;
    const char* name = kind == ClassifierKind::logreg        ? "lambda"
                       : kind == ClassifierKind::gaussian_nb ? "var_smoothing"
                                                              : "C";
    for (double v : grid) {
      combos.push_back({kind, name, v, false});
      if (spec.try_l2_normalization) combos.push_back({kind, name, v, true});
    }
  }
  if (combos.empty()) throw ValidationError("grid search has an empty grid");

  auto run = [&](const Combo& combo) {
    TrainOptions opts;
    opts.balanced = spec.balanced;
    opts.l2_normalize = combo.l2;
    TrainedClassifier model;
    switch (combo.kind) {
      case ClassifierKind::logreg: model = train_logreg(train, combo.value, opts); break;
      case ClassifierKind::gaussian_nb: model = train_gnb(train, combo.value, opts); break;
      case ClassifierKind::linear_svm:
        model = train_linear_svm(train, combo.value, spec.seed, kSvmEpochs, opts);
        break;
    }
    const auto pred = predict(model, validation.x);
    const double score = eval::macro_f1(validation.y, pred, model.class_map);
    return std::pair(std::move(model), score);
  };

  std::vector<std::pair<TrainedClassifier, double>> results;
  results.reserve(combos.size());
  if (spec.parallel) {
    std::vector<std::future<std::pair<TrainedClassifier, double>>> jobs;
    for (const auto& combo : combos) jobs.push_back(std::async(std::launch::async, run, combo));
    for (auto& job : jobs) results.push_back(job.get());
  } else {
    for (const auto& combo : combos) results.push_back(run(combo));
  }

  GridSearchResult out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < combos.size(); ++i) {
    const auto& combo = combos[i];
    const double score = results[i].second;
    out.trace.push_back({combo.kind, combo.name, combo.value, combo.l2, score,
                         combo.kind == ClassifierKind::linear_svm ? spec.seed : 0});
    if (score > best) {
      best = score;
      out.best_index = i;
    }
  }
  out.best = std::move(results[out.best_index].first);
  return out;
}

}  // namespace npshape::classify
