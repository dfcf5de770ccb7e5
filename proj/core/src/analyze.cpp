#include "npshape/analyze.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"
#include "npshape/error.hpp"

namespace npshape::analyze {

Eigen::MatrixXd to_matrix(const embed::EmbeddingMatrix& m) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(m.rows()), m.dim);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    for (int d = 0; d < m.dim; ++d) {
      x(static_cast<Eigen::Index>(i), d) = row[static_cast<std::size_t>(d)];
    }
  }
  return x;
}

PcaProjection pca_fit_transform(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw ValidationError("PCA needs at least 2 rows");
  if (x.cols() < 2) throw ValidationError("PCA to 2 components needs at least 2 columns");
  PcaProjection out;
  out.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - out.mean.transpose();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("PCA eigendecomposition failed");

  // Eigenvalues are ascending.
  const auto d = cov.rows();
  out.components.resize(2, d);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < d; ++i) {
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    }
    if (v(arg) < 0) v = -v;
    out.components.row(k) = v.transpose();
    out.explained_variance[static_cast<std::size_t>(k)] =
        std::max(0.0, solver.eigenvalues()(d - 1 - k));
  }
  out.projected = centered * out.components.transpose();
  return out;
}

double total_variance(const Eigen::MatrixXd& x) {
  if (x.rows() == 0) throw ValidationError("total_variance of an empty matrix");
  const Eigen::RowVectorXd mu = x.colwise().mean();
  return (x.rowwise() - mu).rowwise().squaredNorm().mean();
}

namespace {

std::map<std::string, std::vector<Eigen::Index>> group(std::span<const std::string> y) {
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < y.size(); ++i) groups[y[i]].push_back(static_cast<Eigen::Index>(i));
  return groups;
}

void check_labels(const Eigen::MatrixXd& x, std::span<const std::string> y) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ValidationError("got " + std::to_string(y.size()) + " labels for " +
                          std::to_string(x.rows()) + " rows");
  }
  if (x.rows() == 0) throw ValidationError("empty input");
}

}  // namespace

VarianceSplit between_within_variance(const Eigen::MatrixXd& x, std::span<const std::string> y) {
  check_labels(x, y);
  const double n = static_cast<double>(x.rows());
  const Eigen::RowVectorXd mu = x.colwise().mean();
  VarianceSplit out;
  for (const auto& [label, rows] : group(y)) {
    Eigen::RowVectorXd centroid = Eigen::RowVectorXd::Zero(x.cols());
    for (auto i : rows) centroid += x.row(i);
    centroid /= static_cast<double>(rows.size());
    double spread = 0.0;
    for (auto i : rows) spread += (x.row(i) - centroid).squaredNorm();
    const double weight = static_cast<double>(rows.size()) / n;
    out.between += weight * (centroid - mu).squaredNorm();
    out.within += spread / n;
  }
  return out;
}

double silhouette(const Eigen::MatrixXd& x, std::span<const std::string> y) {
  check_labels(x, y);
  const auto groups = group(y);
  if (groups.size() < 2) throw ValidationError("silhouette needs at least 2 classes");
  if (x.rows() < 3) throw ValidationError("silhouette needs at least 3 points");

  const auto n = x.rows();
  std::vector<int> label_index(static_cast<std::size_t>(n));
  std::vector<double> class_size;
  {
    int k = 0;
    for (const auto& [label, rows] : groups) {
      for (auto i : rows) label_index[static_cast<std::size_t>(i)] = k;
      class_size.push_back(static_cast<double>(rows.size()));
      ++k;
    }
  }
  Eigen::MatrixXd dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double ss = 0.0;
      for (Eigen::Index d = 0; d < x.cols(); ++d) {
        const double diff = x(i, d) - x(j, d);
        ss += diff * diff;
      }
      dist(i, j) = dist(j, i) = std::sqrt(ss);
    }
  }

  double total = 0.0;
  std::vector<double> sums(class_size.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = label_index[static_cast<std::size_t>(i)];
    if (class_size[static_cast<std::size_t>(own)] < 2) continue;  // singleton: s = 0
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) sums[static_cast<std::size_t>(label_index[static_cast<std::size_t>(j)])] += dist(i, j);
    }
    const double a = sums[static_cast<std::size_t>(own)] / (class_size[static_cast<std::size_t>(own)] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < sums.size(); ++k) {
      if (static_cast<int>(k) != own) b = std::min(b, sums[k] / class_size[k]);
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

ClusterMetrics cluster_metrics(const Eigen::MatrixXd& x, std::span<const std::string> y,
                               MetricSpace space) {
  const auto split = between_within_variance(x, y);
  ClusterMetrics m;
  m.between_class_variance = split.between;
  m.within_class_variance = split.within;
  m.silhouette =
      space == MetricSpace::pca2 ? silhouette(pca_fit_transform(x).projected, y) : silhouette(x, y);
  for (const auto& label : y) ++m.n_per_class[label];
  return m;
}

StageTimeline stage_timeline(std::span<const Stage> stages, MetricSpace space) {
  std::set<std::string> seen;
  StageTimeline out;
  for (const auto& stage : stages) {
    if (!seen.insert(stage.id).second) {
      throw ValidationError("duplicate stage id '" + stage.id + "'");
    }
    try {
      out.push_back({stage.id, cluster_metrics(stage.x, stage.y, space)});
    } catch (const ValidationError& e) {
      throw ValidationError("stage '" + stage.id + "': " + e.what());
    }
  }
  return out;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string timeline_csv(const StageTimeline& timeline) {
  std::string csv = "stage,between,within,silhouette\n";
  for (const auto& s : timeline) {
    csv += s.id + "," + num(s.metrics.between_class_variance) + "," +
           num(s.metrics.within_class_variance) + "," + num(s.metrics.silhouette) + "\n";
  }
  return csv;
}

std::string projection_csv(std::span<const std::string> ids, const PcaProjection& projection,
                           std::span<const std::string> labels) {
  if (ids.size() != static_cast<std::size_t>(projection.projected.rows()) ||
      (!labels.empty() && labels.size() != ids.size())) {
    throw ValidationError("projection_csv: ids, labels and rows differ in length");
  }
  std::string csv = "id,pc1,pc2,label\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    csv += ids[i] + "," + num(projection.projected(r, 0)) + "," + num(projection.projected(r, 1)) +
           "," + (labels.empty() ? std::string() : labels[i]) + "\n";
  }
  return csv;
}

std::string metrics_json(const ClusterMetrics& m) {
  const nlohmann::json doc = {{"between_class_variance", m.between_class_variance},
                              {"within_class_variance", m.within_class_variance},
                              {"silhouette", m.silhouette},
                              {"n_per_class", m.n_per_class}};
  return doc.dump(1);
}

}  // namespace npshape::analyze
