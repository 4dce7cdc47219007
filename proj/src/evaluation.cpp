#include "nekf/evaluation.hpp"

#include "nekf/dataset.hpp"
#include "nekf/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace nekf {

namespace fs = std::filesystem;

Vector rmse(const Matrix& predicted, const Matrix& actual) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols()) {
    throw ContractError("rmse: predicted is " + std::to_string(predicted.rows()) + "x" +
                        std::to_string(predicted.cols()) + ", actual is " +
                        std::to_string(actual.rows()) + "x" + std::to_string(actual.cols()));
  }
  if (predicted.rows() == 0) throw ContractError("rmse: empty signals");
  return ((predicted - actual).array().square().colwise().mean().sqrt()).transpose().matrix();
}

Matrix PcaResult::reconstruct(const Matrix& coords) const {
  return (coords * basis.transpose()).rowwise() + mean.transpose();
}

PcaResult pca_project(const Matrix& vectors, Index components) {
  const Index n = vectors.rows(), d = vectors.cols();
  if (n < 2) throw ContractError("pca_project: need at least 2 vectors, got " + std::to_string(n));
  if (components < 1 || components > d) {
    throw ContractError("pca_project: cannot take " + std::to_string(components) +
                        " components of " + std::to_string(d) + "-dimensional data");
  }
  PcaResult r;
  r.mean = vectors.colwise().mean().transpose();
  const Matrix centered = vectors.rowwise() - r.mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
  r.basis.resize(d, components);
  r.explained_variance.resize(components);
  for (Index j = 0; j < components; ++j) {
    const Index src = d - 1 - j;  // eigenvalues ascend
    Vector v = es.eigenvectors().col(src);
    Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v(big) < 0.0) v = -v;
    r.basis.col(j) = v;
    r.explained_variance(j) = std::max(0.0, es.eigenvalues()(src));
  }
  r.projection = centered * r.basis;
  return r;
}

namespace {

double assign(const Matrix& points, const Matrix& centroids, std::vector<Index>& labels) {
  double inertia = 0.0;
  labels.resize(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < centroids.rows(); ++c) {
      const double dist = (points.row(i) - centroids.row(c)).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    inertia += best_d;
  }
  return inertia;
}

Matrix plus_plus(const Matrix& points, Index k, std::mt19937_64& rng) {
  const Index n = points.rows();
  Matrix c(k, points.cols());
  std::uniform_int_distribution<Index> pick(0, n - 1);
  c.row(0) = points.row(pick(rng));
  Vector d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = (points.row(i) - c.row(0)).squaredNorm();
  for (Index j = 1; j < k; ++j) {
    const double total = d2.sum();
    Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      chosen = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (d2(i) > 0.0 && acc >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    c.row(j) = points.row(chosen);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - c.row(j)).squaredNorm());
  }
  return c;
}

}  // namespace

KMeansResult lloyd(const Matrix& points, Matrix centroids, int max_iterations, double tolerance) {
  KMeansResult r;
  const Index k = centroids.rows();
  for (int it = 0; it < max_iterations; ++it) {
    r.inertia_trace.push_back(assign(points, centroids, r.assignments));
    ++r.iterations;
    Matrix next = Matrix::Zero(k, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < points.rows(); ++i) {
      const Index c = r.assignments[static_cast<std::size_t>(i)];
      next.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    double moved = 0.0;
    for (Index c = 0; c < k; ++c) {
      const auto cnt = counts[static_cast<std::size_t>(c)];
      if (cnt == 0) {
        next.row(c) = centroids.row(c);  // an empty cluster keeps its centroid
      } else {
        next.row(c) /= static_cast<double>(cnt);
      }
      moved = std::max(moved, (next.row(c) - centroids.row(c)).norm());
    }
    centroids = next;
    if (moved < tolerance) break;
  }
  r.centroids = centroids;
  r.inertia = assign(points, centroids, r.assignments);
  return r;
}

KMeansResult kmeans(const Matrix& points, Index k, std::uint64_t seed, int restarts,
                    int max_iterations, double tolerance) {
  if (k < 1 || k > points.rows()) {
    throw ContractError("kmeans: k = " + std::to_string(k) + " must lie in [1, " +
                        std::to_string(points.rows()) + "]");
  }
  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    KMeansResult run = lloyd(points, plus_plus(points, k, rng), max_iterations, tolerance);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

Index ClusterReport::cluster_of(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return assignments[i];
  }
  throw ContractError("cluster report has no case labelled '" + label + "'");
}

ClusterReport anomaly_report(const std::vector<CaseRmse>& cases, const ReportOptions& opts) {
  if (cases.empty()) throw ContractError("anomaly_report: no cases");
  if (static_cast<Index>(cases.size()) < opts.k) {
    throw ContractError("anomaly_report: " + std::to_string(cases.size()) + " cases for k = " +
                        std::to_string(opts.k));
  }
  const Index d = cases.front().values.size();
  ClusterReport rep;
  rep.rmse.resize(static_cast<Index>(cases.size()), d);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (cases[i].values.size() != d) {
      throw DimensionError("anomaly_report: case '" + cases[i].label + "' has " +
                           std::to_string(cases[i].values.size()) + " channels, expected " +
                           std::to_string(d));
    }
    if (cases[i].label.find_first_of(",\n\"") != std::string::npos) {
      throw ContractError("anomaly_report: labels may not contain commas, quotes or newlines");
    }
    rep.labels.push_back(cases[i].label);
    rep.rmse.row(static_cast<Index>(i)) = cases[i].values.transpose();
  }
  if (opts.zscore) {
    for (Index c = 0; c < d; ++c) {
      const double mean = rep.rmse.col(c).mean();
      const double sd = std::sqrt((rep.rmse.col(c).array() - mean).square().mean());
      if (sd > 0.0) rep.rmse.col(c) = ((rep.rmse.col(c).array() - mean) / sd).matrix();
    }
  }
  PcaResult pca = pca_project(rep.rmse, std::min<Index>(2, d));
  rep.components = pca.basis;
  rep.explained_variance = pca.explained_variance;
  rep.projection = pca.projection;
  KMeansResult km = kmeans(rep.projection, opts.k, opts.seed);
  rep.assignments = km.assignments;
  rep.centroids = km.centroids;
  rep.inertia = km.inertia;
  rep.baseline = opts.baseline.empty() ? cases.front().label : opts.baseline;
  const Index base = rep.cluster_of(rep.baseline);
  rep.order.resize(cases.size());
  std::iota(rep.order.begin(), rep.order.end(), std::size_t{0});
  auto dist = [&](std::size_t i) {
    return (rep.centroids.row(rep.assignments[i]) - rep.centroids.row(base)).norm();
  };
  std::stable_sort(rep.order.begin(), rep.order.end(),
                   [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });
  return rep;
}

void save_report(const ClusterReport& rep, const fs::path& dir) {
  fs::create_directories(dir);
  const Index d = rep.rmse.cols(), pcs = rep.projection.cols();
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    out << "key,value\n";
    out << "cases," << rep.labels.size() << '\n';
    out << "channels," << d << '\n';
    out << "clusters," << rep.centroids.rows() << '\n';
    out << "inertia," << format_double(rep.inertia) << '\n';
    out << "baseline," << rep.baseline << '\n';
    for (Index j = 0; j < pcs; ++j) {
      out << "explained_variance_" << j + 1 << ',' << format_double(rep.explained_variance(j))
          << '\n';
    }
  }
  std::vector<std::string> pc_names;
  for (Index j = 0; j < pcs; ++j) pc_names.push_back("pc" + std::to_string(j + 1));
  {
    std::vector<std::string> h{"channel"};
    h.insert(h.end(), pc_names.begin(), pc_names.end());
    Matrix m(d, pcs + 1);
    for (Index c = 0; c < d; ++c) {
      m(c, 0) = static_cast<double>(c);
      m.row(c).tail(pcs) = rep.components.row(c);
    }
    write_csv(dir / "components.csv", h, m);
  }
  {
    std::vector<std::string> h{"cluster"};
    h.insert(h.end(), pc_names.begin(), pc_names.end());
    Matrix m(rep.centroids.rows(), pcs + 1);
    for (Index c = 0; c < rep.centroids.rows(); ++c) {
      m(c, 0) = static_cast<double>(c);
      m.row(c).tail(pcs) = rep.centroids.row(c);
    }
    write_csv(dir / "centroids.csv", h, m);
  }
  {
    std::ofstream out(dir / "cases.csv", std::ios::binary);
    out << "label,index,cluster";
    for (const std::string& p : pc_names) out << ',' << p;
    for (Index c = 0; c < d; ++c) out << ",rmse_" << c + 1;
    out << '\n';
    for (std::size_t i : rep.order) {
      const auto r = static_cast<Index>(i);
      out << rep.labels[i] << ',' << i << ',' << rep.assignments[i];
      for (Index j = 0; j < pcs; ++j) out << ',' << format_double(rep.projection(r, j));
      for (Index c = 0; c < d; ++c) out << ',' << format_double(rep.rmse(r, c));
      out << '\n';
    }
    if (!out) throw std::runtime_error("cannot write " + (dir / "cases.csv").string());
  }
}

ClusterReport load_report(const fs::path& dir) {
  auto lines_of = [](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ParseError("cannot open " + p.string(), 0);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      rows.push_back(std::move(cells));
    }
    return rows;
  };
  ClusterReport rep;
  std::map<std::string, std::string> summary;
  for (auto& row : lines_of(dir / "summary.csv")) {
    if (row.size() >= 2) summary[row[0]] = row[1];
  }
  try {
    const auto n = std::stoul(summary.at("cases"));
    const Index d = std::stol(summary.at("channels"));
    rep.inertia = std::stod(summary.at("inertia"));
    rep.baseline = summary.at("baseline");
    CsvTable comps = read_csv(dir / "components.csv");
    CsvTable cents = read_csv(dir / "centroids.csv");
    const Index pcs = comps.values.cols() - 1;
    rep.components = comps.values.rightCols(pcs);
    rep.centroids = cents.values.rightCols(pcs);
    rep.explained_variance.resize(pcs);
    for (Index j = 0; j < pcs; ++j) {
      rep.explained_variance(j) = std::stod(summary.at("explained_variance_" + std::to_string(j + 1)));
    }
    rep.labels.resize(n);
    rep.assignments.resize(n);
    rep.projection.resize(static_cast<Index>(n), pcs);
    rep.rmse.resize(static_cast<Index>(n), d);
    for (auto& row : lines_of(dir / "cases.csv")) {
      if (static_cast<Index>(row.size()) != 3 + pcs + d) {
        throw ParseError((dir / "cases.csv").string() + ": malformed row", 0);
      }
      const std::size_t i = std::stoul(row[1]);
      rep.labels.at(i) = row[0];
      rep.assignments[i] = std::stol(row[2]);
      for (Index j = 0; j < pcs; ++j) rep.projection(static_cast<Index>(i), j) = std::stod(row[static_cast<std::size_t>(3 + j)]);
      for (Index c = 0; c < d; ++c) rep.rmse(static_cast<Index>(i), c) = std::stod(row[static_cast<std::size_t>(3 + pcs + c)]);
      rep.order.push_back(i);
    }
  } catch (const std::out_of_range& e) {
    throw ParseError(dir.string() + ": incomplete cluster report (" + e.what() + ")", 0);
  } catch (const std::invalid_argument& e) {
    throw ParseError(dir.string() + ": malformed number in cluster report", 0);
  }
  return rep;
}

void write_rmse_table(const fs::path& path, const RmseTable& table) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "label";
  for (const std::string& c : table.channels) out << ',' << c;
  out << '\n';
  for (const CaseRmse& row : table.rows) {
    if (row.values.size() != static_cast<Index>(table.channels.size())) {
      throw DimensionError("RMSE row '" + row.label + "' has " + std::to_string(row.values.size()) +
                           " values for " + std::to_string(table.channels.size()) + " channels");
    }
    out << row.label;
    for (Index c = 0; c < row.values.size(); ++c) out << ',' << format_double(row.values(c));
    out << '\n';
  }
}

RmseTable read_rmse_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) return cells;
      start = comma + 1;
    }
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty RMSE table", 0);
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "label") {
    throw ParseError(path.string() + ": expected a header starting with \"label\"", 0);
  }
  RmseTable t;
  t.channels.assign(header.begin() + 1, header.end());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " has " +
                           std::to_string(cells.size()) + " cells, header has " +
                           std::to_string(header.size()),
                       row);
    }
    Vector v(static_cast<Index>(cells.size()) - 1);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double value = 0.0;
      const char* first = cells[c].data();
      const char* last = first + cells[c].size();
      const auto [ptr, ec] = std::from_chars(first, last, value);
      if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
        throw ParseError(path.string() + ": row " + std::to_string(row) + ", column \"" +
                             header[c] + "\": not a finite number '" + cells[c] + "'",
                         row);
      }
      v(static_cast<Index>(c) - 1) = value;
    }
    t.rows.push_back({cells[0], v});
  }
  return t;
}

}  // namespace nekf
