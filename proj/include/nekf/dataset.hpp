#pragma once

// Trajectory containers, CSV/manifest persistence and the simple
// preprocessing steps (standardization, windowing, resampling).

#include "nekf/autodiff.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nekf {

/// One sequence. Row k of `u` drives the transition into the state observed
/// in row k of `x`.
struct Trajectory {
  Matrix u;  // T x d_u
  Matrix x;  // T x d_x
  std::string source;  // file or generator the samples came from
  Index offset = 0;    // first row within `source` (non-zero after windowing)

  Index length() const { return x.rows(); }
};

struct ChannelStats {
  double mean = 0.0;
  double std = 1.0;
  bool scaled = true;  // false for constant channels, which pass through
};

struct Normalization {
  std::vector<ChannelStats> inputs;
  std::vector<ChannelStats> outputs;
};

/// A preprocessing or generation step recorded in the manifest.
struct Operation {
  std::string name;
  std::vector<std::pair<std::string, std::string>> args;
};

struct TimeSeriesDataset {
  std::vector<Trajectory> trajectories;
  double sample_rate = 1.0;  // Hz
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;
  std::optional<Normalization> normalization;
  std::vector<Operation> provenance;

  Index input_dim() const { return static_cast<Index>(input_names.size()); }
  Index output_dim() const { return static_cast<Index>(output_names.size()); }
  std::size_t size() const { return trajectories.size(); }
  /// Throws ContractError on inconsistent shapes, empty or non-finite data.
  void validate() const;
  /// Copy of the metadata with the given trajectories.
  TimeSeriesDataset with(std::vector<Trajectory> trajs) const;
};

struct CsvSchema {
  std::vector<std::string> input_columns;
  std::vector<std::string> output_columns;
  double sample_rate = 1.0;
  char delimiter = ',';
};

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;  // rows x header.size()
};

/// Reads a headed numeric CSV. Malformed cells raise ParseError whose offset
/// is the 1-based data row; the message names the row and the column.
CsvTable read_csv(const std::filesystem::path& path, char delimiter = ',');
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& values, char delimiter = ',');

/// One trajectory per file with columns selected by name.
TimeSeriesDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes one CSV per trajectory plus `manifest.json` into `dir`; returns the
/// manifest path.
std::filesystem::path save_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& dir);
/// Accepts either a manifest path or the directory that holds it.
TimeSeriesDataset load_dataset(const std::filesystem::path& manifest_or_dir);

/// Compact JSON form {"inputs": [...], "outputs": [...]} used in manifests
/// and checkpoints.
std::string normalization_to_json(const Normalization& norm);
Normalization normalization_from_json(const std::string& text);

/// Per-channel mean and population standard deviation over all samples.
Normalization fit_normalization(const TimeSeriesDataset& ds);
TimeSeriesDataset apply_normalization(const TimeSeriesDataset& ds, const Normalization& norm);
/// fit + apply; the record is stored on the result.
TimeSeriesDataset standardize(const TimeSeriesDataset& ds);
/// Maps standardized output means back to physical units.
Matrix destandardize_outputs(const Matrix& values, const Normalization& norm);
/// Maps standardized output variances back to physical units.
Matrix destandardize_output_variances(const Matrix& variances, const Normalization& norm);
TimeSeriesDataset destandardize(const TimeSeriesDataset& ds);

/// Fixed-length windows starting at 0, stride, 2*stride, ...
TimeSeriesDataset window(const TimeSeriesDataset& ds, Index length, Index stride);

/// Linear interpolation onto a uniform grid at `target_rate` covering the
/// original time span.
TimeSeriesDataset resample(const TimeSeriesDataset& ds, double target_rate);

std::string format_double(double v);

}  // namespace nekf
