#pragma once

// Run configuration shared by every command-line verb: a JSON document with
// the sections data, model, training and evaluation, merged over built-in
// defaults and then over dotted-key overrides such as training.epochs=20.

#include "nekf/duffing.hpp"
#include "nekf/evaluation.hpp"
#include "nekf/signal.hpp"
#include "nekf/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nekf {

/// Invalid or unknown configuration field; `field()` is its dotted key.
class ConfigError : public ContractError {
 public:
  ConfigError(std::string field, const std::string& what)
      : ContractError(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct PreprocessConfig {
  std::optional<FilterKind> filter;  // none when absent
  double cutoff = 0.0;
  int order = 4;
  double resample_rate = 0.0;  // 0 keeps the original rate
  Index window_length = 0;     // 0 disables windowing
  Index window_stride = 0;     // 0 means window_length
  bool standardize = true;
};

struct EvaluationConfig {
  std::string mode = "rollout";  // rollout, filtered or smoothed
  Index init_steps = 0;          // observed prefix used to initialize a rollout
  ReportOptions report;
};

class RunConfig {
 public:
  /// Every known key with its default value.
  static nlohmann::json defaults();

  /// Defaults, then `file` (if given), then each "a.b.c=value" override in
  /// order. Values parse as JSON when possible and as strings otherwise.
  /// Unknown keys and type mismatches raise ConfigError.
  static RunConfig load(const std::optional<std::filesystem::path>& file,
                        const std::vector<std::string>& overrides = {});
  static RunConfig from_json(const nlohmann::json& doc);

  const nlohmann::json& document() const { return doc_; }
  const nlohmann::json& at(const std::string& dotted) const;
  std::string dump() const { return doc_.dump(2); }
  /// Writes the resolved configuration to dir/config.json.
  void echo(const std::filesystem::path& dir) const;

  DuffingConfig duffing() const;
  std::size_t trajectories() const;
  PreprocessConfig preprocess() const;
  ModelSpec model(Index input_dim, Index obs_dim) const;
  InitOptions init_options() const;
  std::uint64_t model_seed() const;
  TrainConfig training() const;
  EvaluationConfig evaluation() const;

 private:
  nlohmann::json doc_;
};

}  // namespace nekf
