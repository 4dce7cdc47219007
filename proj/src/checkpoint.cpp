#include "nekf/checkpoint.hpp"

#include "nekf/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace nekf {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'N', 'E', 'K', 'F', 'C', 'K', 'P', 'T'};
constexpr std::size_t kPrefix = 8 + 4 + 8;

template <class T>
void put_le(std::vector<char>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::vector<char>& in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

void put_double(std::vector<char>& out, double d) { put_le(out, std::bit_cast<std::uint64_t>(d)); }

double get_double(const std::vector<char>& in, std::size_t at) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in, at));
}

json spec_json(const ModelSpec& s) {
  return {{"latent_dim", s.latent_dim}, {"input_dim", s.input_dim},
          {"obs_dim", s.obs_dim},       {"hidden", s.hidden},
          {"activation", to_string(s.activation)}, {"residual", s.residual}};
}

ModelSpec spec_from(const json& j) {
  ModelSpec s;
  s.latent_dim = j.at("latent_dim").get<Index>();
  s.input_dim = j.at("input_dim").get<Index>();
  s.obs_dim = j.at("obs_dim").get<Index>();
  s.hidden = j.at("hidden").get<std::vector<Index>>();
  s.activation = parse_activation(j.at("activation").get<std::string>());
  s.residual = j.at("residual").get<bool>();
  return s;
}

struct Entry {
  std::string name;
  const Matrix* value;
};

}  // namespace

std::string spec_to_json(const ModelSpec& spec) { return spec_json(spec).dump(); }

ModelSpec spec_from_json(const std::string& text) {
  try {
    return spec_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError(std::string("model spec: ") + e.what(), 0);
  }
}

std::vector<char> encode_checkpoint(const TrainState& state) {
  const auto names = state.params.names();
  const auto tensors = state.params.tensors();
  if (state.adam.m.size() != tensors.size() || state.adam.v.size() != tensors.size()) {
    throw ContractError("checkpoint: optimizer moments do not match the parameter list");
  }
  Matrix history(static_cast<Index>(state.history.size()), 5);
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const EpochStats& h = state.history[i];
    history.row(static_cast<Index>(i)) << static_cast<double>(h.epoch), h.mean.loss,
        h.mean.reconstruction, h.mean.overshoot, h.mean.kl;
  }

  std::vector<Entry> entries;
  for (std::size_t i = 0; i < names.size(); ++i) entries.push_back({names[i], tensors[i]});
  for (std::size_t i = 0; i < names.size(); ++i) entries.push_back({"adam.m." + names[i], &state.adam.m[i]});
  for (std::size_t i = 0; i < names.size(); ++i) entries.push_back({"adam.v." + names[i], &state.adam.v[i]});
  entries.push_back({"history", &history});

  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const Entry& e : entries) {
    manifest.push_back({{"name", e.name}, {"rows", e.value->rows()}, {"cols", e.value->cols()},
                        {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.value->size()) * 8;
  }

  json config;
  try {
    config = json::parse(state.config_json);
  } catch (const json::exception& e) {
    throw ContractError(std::string("checkpoint: configuration echo is not JSON: ") + e.what());
  }
  json header = {{"format", "nekf-checkpoint"},
                 {"format_version", kCheckpointVersion},
                 {"spec", spec_json(state.spec)},
                 {"epoch", state.epoch},
                 {"adam_step", state.adam.step},
                 {"config", config},
                 {"normalization", state.normalization
                                       ? json::parse(normalization_to_json(*state.normalization))
                                       : json(nullptr)},
                 {"tensors", manifest},
                 {"payload_bytes", offset}};
  const std::string text = header.dump();

  std::vector<char> out;
  out.reserve(kPrefix + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 8);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const Entry& e : entries) {
    for (Index r = 0; r < e.value->rows(); ++r) {
      for (Index c = 0; c < e.value->cols(); ++c) put_double(out, (*e.value)(r, c));
    }
  }
  return out;
}

TrainState decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < kPrefix) {
    throw ParseError("checkpoint truncated: " + std::to_string(bytes.size()) +
                         " bytes is shorter than the fixed prefix",
                     bytes.size());
  }
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw ParseError("not a checkpoint: bad magic bytes", 0);
  }
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint format version " + std::to_string(version) +
                         " is not supported (expected " + std::to_string(kCheckpointVersion) + ")",
                     8);
  }
  const auto hlen = get_le<std::uint64_t>(bytes, 12);
  if (hlen > bytes.size() - kPrefix) {
    throw ParseError("checkpoint truncated inside the header (declares " + std::to_string(hlen) +
                         " bytes, " + std::to_string(bytes.size() - kPrefix) + " present)",
                     bytes.size());
  }
  const std::size_t payload_at = kPrefix + hlen;

  json header;
  try {
    header = json::parse(bytes.begin() + kPrefix, bytes.begin() + static_cast<std::ptrdiff_t>(payload_at));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what(),
                     kPrefix + (e.byte > 0 ? e.byte - 1 : 0));
  }

  try {
    if (header.at("format").get<std::string>() != "nekf-checkpoint") {
      throw ParseError("checkpoint header has an unknown format tag", kPrefix);
    }
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    if (bytes.size() - payload_at != payload_bytes) {
      const std::uint64_t have = bytes.size() - payload_at;
      throw ParseError(std::string(have < payload_bytes ? "checkpoint truncated: payload is "
                                                        : "checkpoint has trailing bytes: payload is ") +
                           std::to_string(have) + " bytes, header declares " +
                           std::to_string(payload_bytes),
                       bytes.size() < payload_at + payload_bytes ? bytes.size() : payload_at + payload_bytes);
    }

    TrainState s;
    s.spec = spec_from(header.at("spec"));
    s.spec.validate();
    s.params = ModelParams::initialize(s.spec, 0);
    s.epoch = header.at("epoch").get<std::size_t>();
    s.config_json = header.at("config").dump();
    if (!header.at("normalization").is_null()) {
      s.normalization = normalization_from_json(header.at("normalization").dump());
    }

    std::map<std::string, Matrix> found;
    for (const json& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto rows = t.at("rows").get<Index>();
      const auto cols = t.at("cols").get<Index>();
      const auto off = t.at("offset").get<std::uint64_t>();
      const auto count = static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols);
      if (rows < 0 || cols < 0 || off > payload_bytes || count * 8 > payload_bytes - off) {
        throw ParseError("tensor '" + name + "' lies outside the payload", payload_at + off);
      }
      Matrix m(rows, cols);
      std::size_t at = payload_at + off;
      for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c, at += 8) m(r, c) = get_double(bytes, at);
      }
      found.emplace(name, std::move(m));
    }

    auto take = [&](const std::string& name, const Matrix& like) {
      auto it = found.find(name);
      if (it == found.end()) throw ParseError("checkpoint is missing tensor '" + name + "'", kPrefix);
      if (it->second.rows() != like.rows() || it->second.cols() != like.cols()) {
        throw ParseError("tensor '" + name + "' has shape " + std::to_string(it->second.rows()) +
                             "x" + std::to_string(it->second.cols()) + ", model expects " +
                             std::to_string(like.rows()) + "x" + std::to_string(like.cols()),
                         kPrefix);
      }
      return it->second;
    };
    const auto names = s.params.names();
    const auto tensors = s.params.tensors();
    s.adam.step = header.at("adam_step").get<std::uint64_t>();
    for (std::size_t i = 0; i < names.size(); ++i) {
      Matrix value = take(names[i], *tensors[i]);
      s.adam.m.push_back(take("adam.m." + names[i], *tensors[i]));
      s.adam.v.push_back(take("adam.v." + names[i], *tensors[i]));
      *tensors[i] = std::move(value);
    }
    auto hist = found.find("history");
    if (hist == found.end() || hist->second.cols() != 5) {
      throw ParseError("checkpoint history table is missing or malformed", kPrefix);
    }
    for (Index r = 0; r < hist->second.rows(); ++r) {
      const auto row = hist->second.row(r);
      s.history.push_back({static_cast<std::size_t>(row(0)), {row(1), row(2), row(3), row(4)}});
    }
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint header is malformed: ") + e.what(), kPrefix);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("checkpoint describes an invalid model: ") + e.what(), kPrefix);
  }
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const std::vector<char> bytes = encode_checkpoint(state);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

}  // namespace nekf
