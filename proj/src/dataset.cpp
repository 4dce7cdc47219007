#include "nekf/dataset.hpp"

#include "nekf/errors.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace nekf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr int kManifestVersion = 1;

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

Index column_of(const CsvTable& t, const std::string& name, const fs::path& path) {
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (t.header[i] == name) return static_cast<Index>(i);
  }
  throw ParseError(path.string() + ": missing column \"" + name + "\"", 0);
}

Matrix select_columns(const CsvTable& t, const std::vector<std::string>& names,
                      const fs::path& path) {
  Matrix out(t.values.rows(), static_cast<Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    out.col(static_cast<Index>(j)) = t.values.col(column_of(t, names[j], path));
  }
  return out;
}

json stats_to_json(const std::vector<ChannelStats>& s) {
  json a = json::array();
  for (const ChannelStats& c : s) a.push_back({{"mean", c.mean}, {"std", c.std}, {"scaled", c.scaled}});
  return a;
}

std::vector<ChannelStats> stats_from_json(const json& a) {
  std::vector<ChannelStats> out;
  for (const json& c : a) {
    out.push_back({c.at("mean").get<double>(), c.at("std").get<double>(), c.at("scaled").get<bool>()});
  }
  return out;
}

ChannelStats channel_stats(const std::vector<Trajectory>& trajs, bool inputs, Index c) {
  double sum = 0.0;
  double n = 0.0;
  for (const Trajectory& t : trajs) {
    const Matrix& m = inputs ? t.u : t.x;
    sum += m.col(c).sum();
    n += static_cast<double>(m.rows());
  }
  const double mean = sum / n;
  double sq = 0.0;
  for (const Trajectory& t : trajs) {
    const Matrix& m = inputs ? t.u : t.x;
    sq += (m.col(c).array() - mean).square().sum();
  }
  const double std = std::sqrt(sq / n);
  // A channel whose spread is at rounding level carries no usable scale.
  if (!(std > 1e-12 * std::max(1.0, std::abs(mean)))) return {0.0, 1.0, false};
  return {mean, std, true};
}

void scale_columns(Matrix& m, const std::vector<ChannelStats>& s, bool forward) {
  for (Index c = 0; c < m.cols(); ++c) {
    const ChannelStats& cs = s[static_cast<std::size_t>(c)];
    if (!cs.scaled) continue;
    if (forward) {
      m.col(c) = ((m.col(c).array() - cs.mean) / cs.std).matrix();
    } else {
      m.col(c) = (m.col(c).array() * cs.std + cs.mean).matrix();
    }
  }
}

Operation op(std::string name, std::vector<std::pair<std::string, std::string>> args) {
  return {std::move(name), std::move(args)};
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void TimeSeriesDataset::validate() const {
  if (!(sample_rate > 0.0)) throw ContractError("dataset: sample rate must be positive");
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& t = trajectories[i];
    const std::string who = "dataset trajectory " + std::to_string(i);
    if (t.x.rows() < 1) throw ContractError(who + " is empty");
    if (t.u.rows() != t.x.rows()) {
      throw ContractError(who + ": " + std::to_string(t.u.rows()) + " input rows vs " +
                          std::to_string(t.x.rows()) + " output rows");
    }
    if (t.u.cols() != input_dim() || t.x.cols() != output_dim()) {
      throw ContractError(who + " has " + std::to_string(t.u.cols()) + " inputs and " +
                          std::to_string(t.x.cols()) + " outputs, expected " +
                          std::to_string(input_dim()) + " and " + std::to_string(output_dim()));
    }
    if (!t.u.allFinite() || !t.x.allFinite()) throw ContractError(who + " contains NaN or Inf");
  }
  if (normalization && (normalization->inputs.size() != input_names.size() ||
                        normalization->outputs.size() != output_names.size())) {
    throw ContractError("dataset: normalization record does not match the channel count");
  }
}

TimeSeriesDataset TimeSeriesDataset::with(std::vector<Trajectory> trajs) const {
  TimeSeriesDataset out = *this;
  out.trajectories = std::move(trajs);
  return out;
}

CsvTable read_csv(const fs::path& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file, no header", 0);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  t.header = split(line, delimiter);
  const auto cols = static_cast<Index>(t.header.size());
  std::vector<double> data;
  Index row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    std::vector<std::string> cells = split(line, delimiter);
    if (static_cast<Index>(cells.size()) != cols) {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " has " +
                           std::to_string(cells.size()) + " cells, header has " +
                           std::to_string(cols),
                       static_cast<std::size_t>(row));
    }
    for (Index c = 0; c < cols; ++c) {
      const std::string& cell = cells[static_cast<std::size_t>(c)];
      double v = 0.0;
      const char* first = cell.data();
      const char* last = first + cell.size();
      if (first != last && *first == '+') ++first;
      auto res = std::from_chars(first, last, v);
      const std::string where = path.string() + ": row " + std::to_string(row) + ", column \"" +
                                t.header[static_cast<std::size_t>(c)] + "\"";
      if (res.ec != std::errc() || res.ptr != last || cell.empty()) {
        throw ParseError(where + ": not a number: '" + cell + "'", static_cast<std::size_t>(row));
      }
      if (!std::isfinite(v)) {
        throw ParseError(where + ": non-finite value '" + cell + "'",
                         static_cast<std::size_t>(row));
      }
      data.push_back(v);
    }
  }
  t.values.resize(row, cols);
  for (Index r = 0; r < row; ++r)
    for (Index c = 0; c < cols; ++c) t.values(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return t;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header, const Matrix& values,
               char delimiter) {
  if (static_cast<Index>(header.size()) != values.cols()) {
    throw DimensionError("write_csv: " + std::to_string(header.size()) + " header names for " +
                         std::to_string(values.cols()) + " columns");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? std::string(1, delimiter) : "") << header[i];
  out << '\n';
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      if (c) out << delimiter;
      out << format_double(values(r, c));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TimeSeriesDataset load_csv(const fs::path& path, const CsvSchema& schema) {
  CsvTable t = read_csv(path, schema.delimiter);
  TimeSeriesDataset ds;
  ds.sample_rate = schema.sample_rate;
  ds.input_names = schema.input_columns;
  ds.output_names = schema.output_columns;
  Trajectory tr;
  tr.u = select_columns(t, schema.input_columns, path);
  tr.x = select_columns(t, schema.output_columns, path);
  tr.source = path.string();
  ds.trajectories.push_back(std::move(tr));
  ds.provenance.push_back(op("load_csv", {{"path", path.string()}}));
  ds.validate();
  return ds;
}

fs::path save_dataset(const TimeSeriesDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  std::vector<std::string> header = ds.input_names;
  header.insert(header.end(), ds.output_names.begin(), ds.output_names.end());
  json files = json::array();
  const int width = ds.size() < 10000 ? 4 : 6;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.trajectories[i];
    std::string idx = std::to_string(i);
    idx.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(idx.size()))), '0');
    const std::string name = "traj_" + idx + ".csv";
    Matrix both(t.length(), t.u.cols() + t.x.cols());
    both << t.u, t.x;
    write_csv(dir / name, header, both);
    files.push_back({{"path", name}, {"source", t.source}, {"offset", t.offset}});
  }
  json m;
  m["format"] = "nekf-dataset";
  m["version"] = kManifestVersion;
  m["sample_rate"] = ds.sample_rate;
  m["delimiter"] = ",";
  m["inputs"] = ds.input_names;
  m["outputs"] = ds.output_names;
  m["files"] = files;
  if (ds.normalization) {
    m["normalization"] = {{"inputs", stats_to_json(ds.normalization->inputs)},
                          {"outputs", stats_to_json(ds.normalization->outputs)}};
  } else {
    m["normalization"] = nullptr;
  }
  json prov = json::array();
  for (const Operation& o : ds.provenance) {
    json args = json::object();
    for (const auto& [k, v] : o.args) args[k] = v;
    prov.push_back({{"op", o.name}, {"args", args}});
  }
  m["provenance"] = prov;
  const fs::path manifest = dir / kManifestName;
  std::ofstream out(manifest, std::ios::binary);
  out << m.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  return manifest;
}

TimeSeriesDataset load_dataset(const fs::path& manifest_or_dir) {
  const fs::path manifest =
      fs::is_directory(manifest_or_dir) ? manifest_or_dir / kManifestName : manifest_or_dir;
  std::ifstream in(manifest);
  if (!in) throw ParseError("cannot open dataset manifest " + manifest.string(), 0);
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(manifest.string() + ": " + e.what(), e.byte);
  }
  try {
    if (m.at("format") != "nekf-dataset") throw ParseError(manifest.string() + ": not a dataset manifest", 0);
    const int version = m.at("version").get<int>();
    if (version != kManifestVersion) {
      throw ParseError(manifest.string() + ": manifest version " + std::to_string(version) +
                           " is not supported (expected " + std::to_string(kManifestVersion) + ")",
                       0);
    }
    TimeSeriesDataset ds;
    ds.sample_rate = m.at("sample_rate").get<double>();
    ds.input_names = m.at("inputs").get<std::vector<std::string>>();
    ds.output_names = m.at("outputs").get<std::vector<std::string>>();
    const std::string delim = m.value("delimiter", std::string(","));
    CsvSchema schema{ds.input_names, ds.output_names, ds.sample_rate, delim.empty() ? ',' : delim[0]};
    for (const json& f : m.at("files")) {
      const fs::path p = manifest.parent_path() / f.at("path").get<std::string>();
      CsvTable t = read_csv(p, schema.delimiter);
      Trajectory tr;
      tr.u = select_columns(t, ds.input_names, p);
      tr.x = select_columns(t, ds.output_names, p);
      tr.source = f.value("source", p.string());
      tr.offset = f.value("offset", Index{0});
      ds.trajectories.push_back(std::move(tr));
    }
    if (m.contains("normalization") && !m["normalization"].is_null()) {
      ds.normalization = Normalization{stats_from_json(m["normalization"].at("inputs")),
                                       stats_from_json(m["normalization"].at("outputs"))};
    }
    for (const json& o : m.value("provenance", json::array())) {
      Operation rec{o.at("op").get<std::string>(), {}};
      const json args = o.value("args", json::object());
      for (const auto& [k, v] : args.items()) {
        rec.args.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
      }
      ds.provenance.push_back(std::move(rec));
    }
    ds.validate();
    return ds;
  } catch (const json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what(), 0);
  }
}

Normalization fit_normalization(const TimeSeriesDataset& ds) {
  if (ds.trajectories.empty()) throw ContractError("fit_normalization: empty dataset");
  Normalization n;
  for (Index c = 0; c < ds.input_dim(); ++c) n.inputs.push_back(channel_stats(ds.trajectories, true, c));
  for (Index c = 0; c < ds.output_dim(); ++c) n.outputs.push_back(channel_stats(ds.trajectories, false, c));
  return n;
}

TimeSeriesDataset apply_normalization(const TimeSeriesDataset& ds, const Normalization& norm) {
  if (norm.inputs.size() != ds.input_names.size() || norm.outputs.size() != ds.output_names.size()) {
    throw DimensionError("apply_normalization: record has " + std::to_string(norm.inputs.size()) +
                         "+" + std::to_string(norm.outputs.size()) + " channels, dataset has " +
                         std::to_string(ds.input_names.size()) + "+" +
                         std::to_string(ds.output_names.size()));
  }
  if (ds.normalization) throw ContractError("apply_normalization: dataset is already standardized");
  TimeSeriesDataset out = ds;
  for (Trajectory& t : out.trajectories) {
    scale_columns(t.u, norm.inputs, true);
    scale_columns(t.x, norm.outputs, true);
  }
  out.normalization = norm;
  out.provenance.push_back(op("standardize", {}));
  return out;
}

TimeSeriesDataset standardize(const TimeSeriesDataset& ds) {
  return apply_normalization(ds, fit_normalization(ds));
}

Matrix destandardize_outputs(const Matrix& values, const Normalization& norm) {
  if (values.cols() != static_cast<Index>(norm.outputs.size())) {
    throw DimensionError("destandardize: " + std::to_string(values.cols()) + " columns, record has " +
                         std::to_string(norm.outputs.size()));
  }
  Matrix out = values;
  scale_columns(out, norm.outputs, false);
  return out;
}

Matrix destandardize_output_variances(const Matrix& variances, const Normalization& norm) {
  if (variances.cols() != static_cast<Index>(norm.outputs.size())) {
    throw DimensionError("destandardize: " + std::to_string(variances.cols()) +
                         " columns, record has " + std::to_string(norm.outputs.size()));
  }
  Matrix out = variances;
  for (Index c = 0; c < out.cols(); ++c) {
    const ChannelStats& s = norm.outputs[static_cast<std::size_t>(c)];
    if (s.scaled) out.col(c) *= s.std * s.std;
  }
  return out;
}

TimeSeriesDataset destandardize(const TimeSeriesDataset& ds) {
  if (!ds.normalization) return ds;
  TimeSeriesDataset out = ds;
  for (Trajectory& t : out.trajectories) {
    scale_columns(t.u, ds.normalization->inputs, false);
    scale_columns(t.x, ds.normalization->outputs, false);
  }
  out.normalization.reset();
  out.provenance.push_back(op("destandardize", {}));
  return out;
}

TimeSeriesDataset window(const TimeSeriesDataset& ds, Index length, Index stride) {
  if (length < 1 || stride < 1) throw ContractError("window: length and stride must be >= 1");
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.trajectories[i];
    if (length > t.length()) {
      throw ContractError("window: length " + std::to_string(length) + " exceeds trajectory " +
                          std::to_string(i) + " (" + t.source + ") of length " +
                          std::to_string(t.length()));
    }
    for (Index s = 0; s + length <= t.length(); s += stride) {
      out.push_back({t.u.middleRows(s, length), t.x.middleRows(s, length), t.source, t.offset + s});
    }
  }
  TimeSeriesDataset res = ds.with(std::move(out));
  res.provenance.push_back(
      op("window", {{"length", std::to_string(length)}, {"stride", std::to_string(stride)}}));
  return res;
}

TimeSeriesDataset resample(const TimeSeriesDataset& ds, double target_rate) {
  if (!(target_rate > 0.0)) throw ContractError("resample: target rate must be positive");
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.trajectories[i];
    if (t.length() < 1) throw ContractError("resample: trajectory " + std::to_string(i) + " is empty");
    if (target_rate == ds.sample_rate) {
      out.push_back(t);
      continue;
    }
    const double span = static_cast<double>(t.length() - 1) / ds.sample_rate;
    const Index n = static_cast<Index>(std::floor(span * target_rate + 1e-9)) + 1;
    Matrix both(t.length(), t.u.cols() + t.x.cols());
    both << t.u, t.x;
    Matrix res(n, both.cols());
    for (Index k = 0; k < n; ++k) {
      const double pos = static_cast<double>(k) * ds.sample_rate / target_rate;
      Index lo = static_cast<Index>(std::floor(pos));
      if (lo >= t.length() - 1) {
        res.row(k) = both.row(t.length() - 1);
        continue;
      }
      const double w = pos - static_cast<double>(lo);
      res.row(k) = (1.0 - w) * both.row(lo) + w * both.row(lo + 1);
    }
    Trajectory r;
    r.u = res.leftCols(t.u.cols());
    r.x = res.rightCols(t.x.cols());
    r.source = t.source;
    r.offset = t.offset;
    out.push_back(std::move(r));
  }
  TimeSeriesDataset res = ds.with(std::move(out));
  res.sample_rate = target_rate;
  res.provenance.push_back(op("resample", {{"target_rate", format_double(target_rate)}}));
  return res;
}

std::string normalization_to_json(const Normalization& norm) {
  return json{{"inputs", stats_to_json(norm.inputs)}, {"outputs", stats_to_json(norm.outputs)}}
      .dump();
}

Normalization normalization_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    return {stats_from_json(j.at("inputs")), stats_from_json(j.at("outputs"))};
  } catch (const json::exception& e) {
    throw ParseError(std::string("normalization record: ") + e.what(), 0);
  }
}

}  // namespace nekf
