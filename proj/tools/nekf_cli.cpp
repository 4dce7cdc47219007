// nekf: simulate, preprocess, train, predict, evaluate and cluster from the
// command line. Exit status 0 on success, 1 on runtime or numerical failure,
// 2 on usage or configuration errors (including missing input files).

#include "nekf/checkpoint.hpp"
#include "nekf/errors.hpp"
#include "nekf/predict.hpp"
#include "nekf/run_config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace nekf;

namespace {

/// Bad invocation or input that the user has to fix; exit status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Args {
  std::optional<fs::path> config;
  std::vector<std::string> overrides;
  fs::path data;
  fs::path out;
  fs::path checkpoint;
  fs::path predictions;
  fs::path resume;
  std::vector<fs::path> tables;
};

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

void require_distinct(const fs::path& out, const fs::path& input) {
  std::error_code ec;
  if (fs::exists(out) && fs::exists(input) && fs::equivalent(out, input, ec)) {
    throw UsageError("output directory " + out.string() + " would overwrite input " + input.string());
  }
}

RunConfig resolve(const Args& a) {
  if (a.config) require_exists(*a.config, "config file");
  return RunConfig::load(a.config, a.overrides);
}

std::string file_name(std::size_t i, const char* prefix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu.csv", prefix, i);
  return buf;
}

TimeSeriesDataset load_input(const fs::path& p) {
  require_exists(p, "dataset");
  return load_dataset(p);
}

int cmd_simulate(const Args& a) {
  const RunConfig cfg = resolve(a);
  const DuffingConfig duffing = cfg.duffing();
  const std::size_t n = cfg.trajectories();
  const TimeSeriesDataset ds = simulate_duffing(duffing, n);
  save_dataset(ds, a.out);
  cfg.echo(a.out);
  std::cout << "simulated " << ds.trajectories.size() << " trajectories: T=" << duffing.steps
            << ", d_u=" << ds.input_dim() << ", d_x=" << ds.output_dim()
            << ", rate=" << ds.sample_rate << " Hz -> " << a.out.string() << '\n';
  return 0;
}

int cmd_preprocess(const Args& a) {
  const RunConfig cfg = resolve(a);
  const PreprocessConfig p = cfg.preprocess();
  TimeSeriesDataset ds = load_input(a.data);
  require_distinct(a.out, a.data);
  if (p.filter) ds = butterworth_filter(ds, *p.filter, p.cutoff, p.order);
  if (p.resample_rate > 0.0) ds = resample(ds, p.resample_rate);
  if (p.window_length > 0) ds = window(ds, p.window_length, p.window_stride);
  if (p.standardize) ds = standardize(ds);
  save_dataset(ds, a.out);
  cfg.echo(a.out);
  std::cout << "preprocessed " << ds.trajectories.size() << " trajectories at "
            << ds.sample_rate << " Hz -> " << a.out.string() << '\n';
  return 0;
}

void write_log(const fs::path& path, const std::vector<EpochStats>& history) {
  Matrix rows(static_cast<Index>(history.size()), 5);
  for (std::size_t i = 0; i < history.size(); ++i) {
    const EpochStats& h = history[i];
    rows.row(static_cast<Index>(i)) << static_cast<double>(h.epoch), h.mean.loss,
        h.mean.reconstruction, h.mean.overshoot, h.mean.kl;
  }
  write_csv(path, {"epoch", "loss", "reconstruction", "overshoot", "kl"}, rows);
}

int cmd_train(const Args& a) {
  const RunConfig cfg = resolve(a);
  const TrainConfig tc = cfg.training();
  const TimeSeriesDataset ds = load_input(a.data);
  require_distinct(a.out, a.data);

  TrainState state;
  if (!a.resume.empty()) {
    require_exists(a.resume, "checkpoint");
    state = load_checkpoint(a.resume);
  } else {
    state = TrainState::initialize(cfg.model(ds.input_dim(), ds.output_dim()), cfg.model_seed(),
                                   cfg.init_options());
  }
  if (ds.input_dim() != state.spec.input_dim || ds.output_dim() != state.spec.obs_dim) {
    throw DimensionError("dataset has " + std::to_string(ds.input_dim()) + " inputs and " +
                         std::to_string(ds.output_dim()) + " outputs, model expects " +
                         std::to_string(state.spec.input_dim) + " and " +
                         std::to_string(state.spec.obs_dim));
  }
  state.normalization = ds.normalization;
  state.config_json = cfg.document().dump();
  cfg.echo(a.out);

  const fs::path log = a.out / "training_log.csv";
  train(state, ds.trajectories, tc, [&](const TrainState& s, const EpochStats& e) {
    write_log(log, s.history);
    if (tc.checkpoint_every > 0 && e.epoch % tc.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%04zu.bin", e.epoch);
      save_checkpoint(s, a.out / name);
    }
    std::cout << "epoch " << e.epoch << " loss " << e.mean.loss << " (reconstruction "
              << e.mean.reconstruction << ", overshoot " << e.mean.overshoot << ", kl "
              << e.mean.kl << ")\n"
              << std::flush;
  });
  save_checkpoint(state, a.out / "checkpoint.bin");
  std::cout << "trained to epoch " << state.epoch << " -> " << (a.out / "checkpoint.bin").string()
            << '\n';
  return 0;
}

int cmd_predict(const Args& a) {
  const RunConfig cfg = resolve(a);
  const EvaluationConfig ec = cfg.evaluation();
  require_exists(a.checkpoint, "checkpoint");
  const TrainState state = load_checkpoint(a.checkpoint);
  TimeSeriesDataset ds = load_input(a.data);
  require_distinct(a.out, a.data);
  if (ds.input_dim() != state.spec.input_dim || ds.output_dim() != state.spec.obs_dim) {
    throw DimensionError("dataset has " + std::to_string(ds.input_dim()) + " inputs and " +
                         std::to_string(ds.output_dim()) + " outputs, checkpoint expects " +
                         std::to_string(state.spec.input_dim) + " and " +
                         std::to_string(state.spec.obs_dim));
  }
  // Raw data is brought into the training units; already standardized data is used as is.
  if (state.normalization && !ds.normalization) ds = apply_normalization(ds, *state.normalization);
  const Normalization* norm = ds.normalization ? &*ds.normalization : nullptr;
  const PredictMode mode = parse_predict_mode(ec.mode);

  fs::create_directories(a.out);
  std::vector<std::string> header;
  for (const std::string& name : ds.output_names) {
    header.push_back(name + "_mean");
    header.push_back(name + "_var");
  }
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const Trajectory& t = ds.trajectories[i];
    const Prediction p = predict_physical(state.spec, state.params, t, mode, ec.init_steps, norm,
                                          cfg.training().jitter);
    Matrix table(p.mean.rows(), 2 * p.mean.cols());
    for (Index c = 0; c < p.mean.cols(); ++c) {
      table.col(2 * c) = p.mean.col(c);
      table.col(2 * c + 1) = p.variance.col(c);
    }
    const std::string name = file_name(i, "pred");
    write_csv(a.out / name, header, table);
    index.push_back({{"path", name}, {"source", t.source}, {"offset", t.offset}});
  }
  std::ofstream(a.out / "predictions.json")
      << nlohmann::json{{"mode", ec.mode}, {"init_steps", ec.init_steps}, {"outputs", ds.output_names},
                        {"files", index}}
             .dump(2)
      << '\n';
  cfg.echo(a.out);
  std::cout << "wrote " << ds.trajectories.size() << " " << ec.mode << " predictions -> "
            << a.out.string() << '\n';
  return 0;
}

int cmd_evaluate(const Args& a) {
  const RunConfig cfg = resolve(a);
  require_exists(a.predictions / "predictions.json", "prediction index");
  const TimeSeriesDataset actual = destandardize(load_input(a.data));
  std::ifstream in(a.predictions / "predictions.json");
  const nlohmann::json index = nlohmann::json::parse(in);
  const auto& files = index.at("files");
  if (files.size() != actual.trajectories.size()) {
    throw ContractError("prediction set has " + std::to_string(files.size()) +
                        " trajectories, dataset has " + std::to_string(actual.trajectories.size()));
  }
  const Index dx = actual.output_dim();
  Matrix table(static_cast<Index>(files.size()), dx);
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const fs::path p = a.predictions / files[i].at("path").get<std::string>();
    require_exists(p, "prediction file");
    const CsvTable pred = read_csv(p);
    const Matrix& x = actual.trajectories[i].x;
    if (pred.values.rows() != x.rows() || pred.values.cols() != 2 * dx) {
      throw ContractError(p.string() + " has " + std::to_string(pred.values.rows()) +
                          " rows, trajectory " + std::to_string(i) + " has " +
                          std::to_string(x.rows()));
    }
    Matrix mean(x.rows(), dx);
    for (Index c = 0; c < dx; ++c) mean.col(c) = pred.values.col(2 * c);
    table.row(static_cast<Index>(i)) = rmse(mean, x).transpose();
    labels.push_back(actual.trajectories[i].source);
  }
  RmseTable out{actual.output_names, {}};
  for (Index r = 0; r < table.rows(); ++r) {
    out.rows.push_back({labels[static_cast<std::size_t>(r)], table.row(r).transpose()});
  }
  write_rmse_table(a.out / "rmse.csv", out);
  cfg.echo(a.out);
  const Vector mean = table.colwise().mean();
  std::cout << "mean RMSE";
  for (Index c = 0; c < dx; ++c) std::cout << ' ' << actual.output_names[static_cast<std::size_t>(c)] << '=' << mean(c);
  std::cout << " -> " << (a.out / "rmse.csv").string() << '\n';
  return 0;
}

std::vector<CaseRmse> load_cases(const fs::path& p) {
  require_exists(p, "RMSE table");
  const std::string tag =
      p.filename() == "rmse.csv" ? p.parent_path().filename().string() : p.stem().string();
  std::vector<CaseRmse> out = read_rmse_table(p).rows;
  for (CaseRmse& c : out) c.label = tag + ":" + c.label;
  return out;
}

int cmd_cluster(const Args& a) {
  const RunConfig cfg = resolve(a);
  const EvaluationConfig ec = cfg.evaluation();
  if (a.tables.empty()) throw UsageError("cluster needs at least one --rmse table");
  std::vector<CaseRmse> cases;
  for (const fs::path& p : a.tables) {
    auto rows = load_cases(p);
    cases.insert(cases.end(), rows.begin(), rows.end());
  }
  const ClusterReport rep = anomaly_report(cases, ec.report);
  save_report(rep, a.out);
  cfg.echo(a.out);
  std::cout << "clustered " << cases.size() << " cases into " << rep.centroids.rows()
            << " groups (baseline " << rep.baseline << ") -> " << a.out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural extended Kalman filter toolkit"};
  app.require_subcommand(1);
  Args args;
  std::string config;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON run configuration");
    sub->add_option("--set", args.overrides, "dotted-key override, e.g. training.epochs=20")
        ->take_all()
        ->allow_extra_args(false);
  };
  auto* simulate = app.add_subcommand("simulate", "generate Duffing oscillator trajectories");
  common(simulate);
  simulate->add_option("--out", args.out, "output dataset directory")->required();

  auto* preprocess = app.add_subcommand("preprocess", "filter, resample, window and standardize");
  common(preprocess);
  preprocess->add_option("--data", args.data, "input dataset directory or manifest")->required();
  preprocess->add_option("--out", args.out, "output dataset directory")->required();

  auto* trainc = app.add_subcommand("train", "fit a model to a dataset");
  common(trainc);
  trainc->add_option("--data", args.data, "training dataset")->required();
  trainc->add_option("--out", args.out, "run directory")->required();
  trainc->add_option("--resume", args.resume, "continue from this checkpoint");

  auto* predictc = app.add_subcommand("predict", "rollout, filtered or smoothed predictions");
  common(predictc);
  predictc->add_option("--checkpoint", args.checkpoint, "trained checkpoint")->required();
  predictc->add_option("--data", args.data, "dataset to predict")->required();
  predictc->add_option("--out", args.out, "prediction directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "per-trajectory RMSE of predictions");
  common(evaluate);
  evaluate->add_option("--predictions", args.predictions, "prediction directory")->required();
  evaluate->add_option("--data", args.data, "dataset with the measured outputs")->required();
  evaluate->add_option("--out", args.out, "output directory")->required();

  auto* cluster = app.add_subcommand("cluster", "PCA and k-means over RMSE tables");
  common(cluster);
  cluster->add_option("--rmse", args.tables, "RMSE tables from evaluate")->required();
  cluster->add_option("--out", args.out, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (!config.empty()) args.config = fs::path(config);

  try {
    if (simulate->parsed()) return cmd_simulate(args);
    if (preprocess->parsed()) return cmd_preprocess(args);
    if (trainc->parsed()) return cmd_train(args);
    if (predictc->parsed()) return cmd_predict(args);
    if (evaluate->parsed()) return cmd_evaluate(args);
    if (cluster->parsed()) return cmd_cluster(args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    // ContractError, DimensionError and ConfigError.
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
