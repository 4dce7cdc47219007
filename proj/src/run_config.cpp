#include "nekf/run_config.hpp"

#include <fstream>

namespace nekf {

using nlohmann::json;

namespace {

const char* type_name(const json& v) {
  if (v.is_boolean()) return "a boolean";
  if (v.is_number_integer()) return "an integer";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  if (v.is_array()) return "an array";
  if (v.is_object()) return "an object";
  return "null";
}

bool compatible(const json& like, const json& v) {
  if (like.is_number_integer()) return v.is_number_integer();
  if (like.is_number()) return v.is_number();
  if (like.is_boolean()) return v.is_boolean();
  if (like.is_string()) return v.is_string();
  if (like.is_array()) return v.is_array();
  if (like.is_object()) return v.is_object();
  return true;
}

void merge(json& base, const json& overlay, const std::string& prefix) {
  for (const auto& [key, value] : overlay.items()) {
    const std::string field = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(field, "unknown configuration key");
    json& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      merge(slot, value, field);
    } else if (!compatible(slot, value)) {
      throw ConfigError(field, std::string("expected ") + type_name(slot) + ", got " +
                                   type_name(value));
    } else {
      slot = value;
    }
  }
}

json nest(const std::string& dotted, json value) {
  std::size_t end = dotted.size();
  while (true) {
    const auto dot = end == 0 ? std::string::npos : dotted.rfind('.', end - 1);
    const std::size_t begin = dot == std::string::npos ? 0 : dot + 1;
    value = json{{dotted.substr(begin, end - begin), std::move(value)}};
    if (dot == std::string::npos) return value;
    end = dot;
  }
}

const json* find(const json& doc, const std::string& dotted) {
  const json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot - start);
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &(*node)[part];
    if (dot == std::string::npos) return node;
    start = dot + 1;
  }
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Matrix matrix_from(const json& j, const std::string& field) {
  const auto rows = static_cast<Index>(j.size());
  if (rows == 0 || !j[0].is_array()) throw ConfigError(field, "expected a non-empty nested array");
  const auto cols = static_cast<Index>(j[0].size());
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw ConfigError(field, "rows must all have " + std::to_string(cols) + " entries");
    }
    for (Index c = 0; c < cols; ++c) {
      const json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ConfigError(field, "entries must be numbers");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

template <class T>
T get(const json& doc, const std::string& dotted) {
  const json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    node = &node->at(dotted.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return node->get<T>();
}

Index non_negative(const json& doc, const std::string& field) {
  const auto v = get<std::int64_t>(doc, field);
  if (v < 0) throw ConfigError(field, "must be >= 0");
  return static_cast<Index>(v);
}

}  // namespace

json RunConfig::defaults() {
  const DuffingConfig d;
  const ModelSpec m;
  const InitOptions init;
  const TrainConfig t;
  return {
      {"data",
       {{"trajectories", 5},
        {"duffing",
         {{"mass", matrix_json(d.mass)},
          {"stiffness", matrix_json(d.stiffness)},
          {"damping", matrix_json(d.damping)},
          {"cubic", d.cubic},
          {"dt", d.dt},
          {"steps", d.steps},
          {"forcing", to_string(d.forcing)},
          {"force_std", d.force_std},
          {"initial_range", d.initial_range},
          {"symmetric_stiffness", d.symmetric_stiffness},
          {"seed", d.seed}}},
        {"filter", {{"kind", "none"}, {"cutoff", 0.0}, {"order", 4}}},
        {"resample_rate", 0.0},
        {"window", {{"length", 0}, {"stride", 0}}},
        {"standardize", true}}},
      {"model",
       {{"latent_dim", m.latent_dim},
        {"hidden", m.hidden},
        {"activation", to_string(m.activation)},
        {"residual", m.residual},
        {"seed", 0},
        {"q_variance", init.q_variance},
        {"r_variance", init.r_variance},
        {"sigma0_variance", init.sigma0_variance},
        {"transition_output_gain", init.transition_output_gain}}},
      {"training",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"alpha", t.alpha},
        {"seed", t.seed},
        {"gradient_clip", t.gradient_clip},
        {"checkpoint_every", t.checkpoint_every},
        {"threads", t.threads},
        {"jitter", t.jitter}}},
      {"evaluation",
       {{"mode", "rollout"},
        {"init_steps", 0},
        {"k", 3},
        {"seed", 0},
        {"baseline", ""},
        {"zscore", false}}}};
}

RunConfig RunConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("(root)", "configuration must be a JSON object");
  RunConfig cfg;
  cfg.doc_ = defaults();
  merge(cfg.doc_, doc, "");
  return cfg;
}

RunConfig RunConfig::load(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides) {
  RunConfig cfg;
  cfg.doc_ = defaults();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("--config", "cannot open " + file->string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("--config", file->string() + ": " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("--config", file->string() + ": expected a JSON object");
    merge(cfg.doc_, doc, "");
  }
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(o, "override must have the form key=value");
    }
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    // Text that is not JSON, or that targets a string field, is taken literally.
    const json* slot = find(cfg.doc_, key);
    if (value.is_discarded() || (slot && slot->is_string())) value = raw;
    merge(cfg.doc_, nest(key, std::move(value)), "");
  }
  return cfg;
}

const json& RunConfig::at(const std::string& dotted) const {
  const json* node = &doc_;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    node = &node->at(dotted.substr(start, dot - start));
    if (dot == std::string::npos) return *node;
    start = dot + 1;
  }
}

void RunConfig::echo(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
  out << dump() << '\n';
}

DuffingConfig RunConfig::duffing() const {
  const json& j = doc_.at("data").at("duffing");
  DuffingConfig d;
  d.mass = matrix_from(j.at("mass"), "data.duffing.mass");
  d.stiffness = matrix_from(j.at("stiffness"), "data.duffing.stiffness");
  d.damping = matrix_from(j.at("damping"), "data.duffing.damping");
  d.cubic = j.at("cubic").get<double>();
  d.dt = j.at("dt").get<double>();
  d.steps = non_negative(doc_, "data.duffing.steps");
  try {
    d.forcing = parse_forcing(j.at("forcing").get<std::string>());
  } catch (const ContractError& e) {
    throw ConfigError("data.duffing.forcing", e.what());
  }
  d.force_std = j.at("force_std").get<double>();
  d.initial_range = j.at("initial_range").get<double>();
  d.symmetric_stiffness = j.at("symmetric_stiffness").get<bool>();
  d.seed = j.at("seed").get<std::uint64_t>();
  try {
    d.validate();
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    const auto space = msg.find(' ');
    throw ConfigError("data." + msg.substr(0, space), msg);
  }
  return d;
}

std::size_t RunConfig::trajectories() const {
  const Index n = non_negative(doc_, "data.trajectories");
  if (n < 1) throw ConfigError("data.trajectories", "must be >= 1");
  return static_cast<std::size_t>(n);
}

PreprocessConfig RunConfig::preprocess() const {
  PreprocessConfig p;
  const std::string kind = get<std::string>(doc_, "data.filter.kind");
  if (kind != "none") {
    try {
      p.filter = parse_filter_kind(kind);
    } catch (const ContractError& e) {
      throw ConfigError("data.filter.kind", e.what());
    }
    p.cutoff = get<double>(doc_, "data.filter.cutoff");
    if (!(p.cutoff > 0.0)) throw ConfigError("data.filter.cutoff", "must be positive");
  }
  p.order = static_cast<int>(non_negative(doc_, "data.filter.order"));
  if (p.filter && p.order < 1) throw ConfigError("data.filter.order", "must be >= 1");
  p.resample_rate = get<double>(doc_, "data.resample_rate");
  if (p.resample_rate < 0.0) throw ConfigError("data.resample_rate", "must be >= 0");
  p.window_length = non_negative(doc_, "data.window.length");
  p.window_stride = non_negative(doc_, "data.window.stride");
  if (p.window_stride == 0) p.window_stride = p.window_length;
  p.standardize = get<bool>(doc_, "data.standardize");
  return p;
}

ModelSpec RunConfig::model(Index input_dim, Index obs_dim) const {
  ModelSpec s;
  s.latent_dim = non_negative(doc_, "model.latent_dim");
  s.input_dim = input_dim;
  s.obs_dim = obs_dim;
  s.hidden.clear();
  for (const json& h : doc_.at("model").at("hidden")) {
    if (!h.is_number_integer() || h.get<std::int64_t>() < 1) {
      throw ConfigError("model.hidden", "layer widths must be positive integers");
    }
    s.hidden.push_back(h.get<Index>());
  }
  try {
    s.activation = parse_activation(get<std::string>(doc_, "model.activation"));
  } catch (const std::exception& e) {
    throw ConfigError("model.activation", e.what());
  }
  s.residual = get<bool>(doc_, "model.residual");
  try {
    s.validate();
  } catch (const ContractError& e) {
    throw ConfigError("model", e.what());
  }
  return s;
}

InitOptions RunConfig::init_options() const {
  InitOptions o;
  o.q_variance = get<double>(doc_, "model.q_variance");
  o.r_variance = get<double>(doc_, "model.r_variance");
  o.sigma0_variance = get<double>(doc_, "model.sigma0_variance");
  o.transition_output_gain = get<double>(doc_, "model.transition_output_gain");
  if (!(o.q_variance > 0.0)) throw ConfigError("model.q_variance", "must be positive");
  if (!(o.r_variance > 0.0)) throw ConfigError("model.r_variance", "must be positive");
  if (!(o.sigma0_variance > 0.0)) throw ConfigError("model.sigma0_variance", "must be positive");
  return o;
}

std::uint64_t RunConfig::model_seed() const { return get<std::uint64_t>(doc_, "model.seed"); }

TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.epochs = static_cast<std::size_t>(non_negative(doc_, "training.epochs"));
  t.batch_size = static_cast<std::size_t>(non_negative(doc_, "training.batch_size"));
  t.learning_rate = get<double>(doc_, "training.learning_rate");
  t.alpha = get<double>(doc_, "training.alpha");
  t.seed = get<std::uint64_t>(doc_, "training.seed");
  t.gradient_clip = get<double>(doc_, "training.gradient_clip");
  t.checkpoint_every = static_cast<std::size_t>(non_negative(doc_, "training.checkpoint_every"));
  t.threads = static_cast<unsigned>(non_negative(doc_, "training.threads"));
  t.jitter = get<double>(doc_, "training.jitter");
  try {
    t.validate();
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.substr(0, msg.find(' ')), msg);
  }
  return t;
}

EvaluationConfig RunConfig::evaluation() const {
  EvaluationConfig e;
  e.mode = get<std::string>(doc_, "evaluation.mode");
  if (e.mode != "rollout" && e.mode != "filtered" && e.mode != "smoothed") {
    throw ConfigError("evaluation.mode", "expected rollout, filtered or smoothed, got '" + e.mode + "'");
  }
  e.init_steps = non_negative(doc_, "evaluation.init_steps");
  e.report.k = non_negative(doc_, "evaluation.k");
  if (e.report.k < 1) throw ConfigError("evaluation.k", "must be >= 1");
  e.report.seed = get<std::uint64_t>(doc_, "evaluation.seed");
  e.report.baseline = get<std::string>(doc_, "evaluation.baseline");
  e.report.zscore = get<bool>(doc_, "evaluation.zscore");
  return e;
}

}  // namespace nekf
