#pragma once

// Prediction metrics and the RMSE -> PCA -> k-means anomaly analysis.

#include "nekf/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nekf {

/// Per-channel sqrt(mean((predicted - actual)^2)).
Vector rmse(const Matrix& predicted, const Matrix& actual);

struct PcaResult {
  Vector mean;                // d
  Matrix basis;               // d x k, orthonormal columns
  Vector explained_variance;  // k, sample variances along each column of `basis`
  Matrix projection;          // n x k

  /// mean + basis * coords for each row of `coords`.
  Matrix reconstruct(const Matrix& coords) const;
};

/// Projection onto the leading eigenvectors of the sample covariance. Each
/// basis vector is signed so that its largest-magnitude entry is positive.
PcaResult pca_project(const Matrix& vectors, Index components = 2);

struct KMeansResult {
  std::vector<Index> assignments;
  Matrix centroids;  // k x d
  double inertia = 0.0;
  /// Inertia after every assignment step of the winning run.
  std::vector<double> inertia_trace;
  int iterations = 0;
};

/// Lloyd iterations from fixed initial centroids until every centroid moves
/// less than `tolerance` or `max_iterations` is reached.
KMeansResult lloyd(const Matrix& points, Matrix centroids, int max_iterations = 300,
                   double tolerance = 1e-9);

/// k-means++ seeding followed by Lloyd iterations; the best of `restarts`
/// seeded runs (lowest inertia) is returned.
KMeansResult kmeans(const Matrix& points, Index k, std::uint64_t seed, int restarts = 10,
                    int max_iterations = 300, double tolerance = 1e-9);

struct CaseRmse {
  std::string label;
  Vector values;
};

/// Labelled per-case RMSE rows as written by the evaluate command:
/// header "label,<channel>...", one row per case.
struct RmseTable {
  std::vector<std::string> channels;
  std::vector<CaseRmse> rows;
};

void write_rmse_table(const std::filesystem::path& path, const RmseTable& table);
RmseTable read_rmse_table(const std::filesystem::path& path);

struct ClusterReport {
  std::vector<std::string> labels;  // input order
  Matrix rmse;                      // n x d, as clustered (after optional z-scoring)
  Matrix components;                // d x 2 PCA basis
  Vector explained_variance;        // 2
  Matrix projection;                // n x 2
  std::vector<Index> assignments;   // input order
  Matrix centroids;                 // k x 2
  double inertia = 0.0;
  std::string baseline;
  /// Case indices ordered by the distance of their centroid from the centroid
  /// of the cluster that holds `baseline` (stable within ties).
  std::vector<std::size_t> order;

  Index cluster_of(const std::string& label) const;
};

struct ReportOptions {
  Index k = 3;
  std::uint64_t seed = 0;
  std::string baseline;  // defaults to the first case
  bool zscore = false;   // standardize each RMSE channel before PCA
};

ClusterReport anomaly_report(const std::vector<CaseRmse>& cases, const ReportOptions& opts);

/// Writes summary.csv, components.csv, cases.csv and centroids.csv into `dir`.
void save_report(const ClusterReport& report, const std::filesystem::path& dir);
ClusterReport load_report(const std::filesystem::path& dir);

}  // namespace nekf
