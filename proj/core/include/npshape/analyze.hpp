#pragma once

#include <Eigen/Dense>

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "npshape/embed.hpp"

namespace npshape::analyze {

Eigen::MatrixXd to_matrix(const embed::EmbeddingMatrix& m);

/// Top-2 principal axes of mean-centred data.
///
/// Covariance divides by N-1. Each component's largest-|entry| coordinate is
/// positive (first such coordinate on ties). With zero total variance the
/// components are an arbitrary orthonormal pair and both variances are 0.
struct PcaProjection {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // 2 x D, orthonormal rows
  Eigen::MatrixXd projected;   // N x 2
  std::array<double, 2> explained_variance{};
};

/// Needs N >= 2 and D >= 2.
PcaProjection pca_fit_transform(const Eigen::MatrixXd& x);

struct VarianceSplit {
  double between = 0.0;
  double within = 0.0;
};

/// Divide-by-N scatter: between = sum_k (n_k/N)||mu_k - mu||^2,
/// within = sum_k (n_k/N) mean_{i in k}||x_i - mu_k||^2. They sum to total_variance().
VarianceSplit between_within_variance(const Eigen::MatrixXd& x, std::span<const std::string> y);

/// Mean squared distance to the global mean (trace of the biased covariance).
double total_variance(const Eigen::MatrixXd& x);

/// Mean silhouette with Euclidean distances. Points in singleton classes
/// score 0, as do points with a(i) = b(i) = 0. Needs >= 2 classes and N >= 3.
double silhouette(const Eigen::MatrixXd& x, std::span<const std::string> y);

enum class MetricSpace { full, pca2 };

struct ClusterMetrics {
  double between_class_variance = 0.0;
  double within_class_variance = 0.0;
  double silhouette = 0.0;
  std::map<std::string, std::size_t> n_per_class;
};

ClusterMetrics cluster_metrics(const Eigen::MatrixXd& x, std::span<const std::string> y,
                               MetricSpace silhouette_space = MetricSpace::full);

struct Stage {
  std::string id;
  Eigen::MatrixXd x;
  std::vector<std::string> y;
};

struct StageMetrics {
  std::string id;
  ClusterMetrics metrics;
};

using StageTimeline = std::vector<StageMetrics>;

/// Metrics per stage in input order; stage ids must be unique.
StageTimeline stage_timeline(std::span<const Stage> stages,
                             MetricSpace silhouette_space = MetricSpace::full);

/// stage,between,within,silhouette
std::string timeline_csv(const StageTimeline& timeline);
/// id,pc1,pc2,label
std::string projection_csv(std::span<const std::string> ids, const PcaProjection& projection,
                           std::span<const std::string> labels);
std::string metrics_json(const ClusterMetrics& metrics);

}  // namespace npshape::analyze
