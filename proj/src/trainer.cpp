#include "nekf/trainer.hpp"

#include "nekf/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <random>
#include <sstream>
#include <thread>

namespace nekf {

namespace {

struct MemberResult {
  LossStats stats;
  std::vector<Matrix> gradients;
  std::exception_ptr error;
};

MemberResult evaluate_member(const ModelSpec& spec, const ModelParams& params,
                             const Trajectory& traj, double alpha, double jitter,
                             bool with_gradients) {
  MemberResult r;
  try {
    ad::Tape tape;
    BoundModel m = BoundModel::bind(tape, spec, params, with_gradients);
    LossBreakdown b = total_loss(traj.u, traj.x, m, alpha, jitter);
    r.stats = {-b.total.scalar(), b.reconstruction.scalar(), b.overshoot.scalar(), b.kl.scalar()};
    if (with_gradients) {
      tape.backward(ad::scale(b.total, -1.0));
      r.gradients = m.gradients();
    }
  } catch (...) {
    r.error = std::current_exception();
  }
  return r;
}

std::vector<std::pair<std::string, double>> parameter_norms(const ModelParams& p) {
  std::vector<std::pair<std::string, double>> out;
  const auto names = p.names();
  const auto tensors = p.tensors();
  for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], tensors[i]->norm());
  return out;
}

void check_data(const ModelSpec& spec, const std::vector<Trajectory>& data) {
  if (data.empty()) throw ContractError("train: empty dataset");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& t = data[i];
    if (t.u.cols() != spec.input_dim || t.x.cols() != spec.obs_dim) {
      throw DimensionError("train: trajectory " + std::to_string(i) + " has " +
                           std::to_string(t.u.cols()) + " inputs and " +
                           std::to_string(t.x.cols()) + " outputs, model expects " +
                           std::to_string(spec.input_dim) + " and " +
                           std::to_string(spec.obs_dim));
    }
    if (t.length() < 1 || t.u.rows() != t.x.rows()) {
      throw ContractError("train: trajectory " + std::to_string(i) + " is empty or ragged");
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("training.epochs must be >= 1");
  if (batch_size < 1) throw ContractError("training.batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ContractError("training.learning_rate must be a finite value >= 0");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("training.alpha must lie in [0, 1]");
  if (!(jitter >= 0.0)) throw ContractError("training.jitter must be >= 0");
}

TrainState TrainState::initialize(const ModelSpec& spec, std::uint64_t seed,
                                  const InitOptions& opts) {
  TrainState s;
  s.spec = spec;
  s.params = ModelParams::initialize(spec, seed, opts);
  const auto tensors = s.params.tensors();
  s.adam = AdamState::zeros_like(std::span<const Matrix* const>(tensors.data(), tensors.size()));
  return s;
}

TrainingAborted::TrainingAborted(const std::string& cause, std::size_t epoch, std::size_t batch,
                                 std::vector<std::pair<std::string, double>> parameter_norms)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "training aborted at epoch " << epoch << ", batch " << batch << ": " << cause
           << "; parameter norms:";
        for (const auto& [name, norm] : parameter_norms) os << ' ' << name << '=' << norm;
        return os.str();
      }()),
      epoch_(epoch),
      batch_(batch),
      norms_(std::move(parameter_norms)) {}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("NEURAL_EKF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

BatchEvaluation evaluate_batch(const ModelSpec& spec, const ModelParams& params,
                               const std::vector<const Trajectory*>& members, double alpha,
                               double jitter, bool with_gradients, unsigned threads) {
  if (members.empty()) throw ContractError("evaluate_batch: empty batch");
  std::vector<MemberResult> results(members.size());
  const unsigned workers =
      std::min<unsigned>(std::max(1u, threads), static_cast<unsigned>(members.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < members.size(); ++i) {
      results[i] = evaluate_member(spec, params, *members[i], alpha, jitter, with_gradients);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < members.size(); i = next++) {
          results[i] = evaluate_member(spec, params, *members[i], alpha, jitter, with_gradients);
        }
      });
    }
  }
  BatchEvaluation out;
  if (with_gradients) out.gradients = params.zeros_like();
  const double inv = 1.0 / static_cast<double>(members.size());
  for (const MemberResult& r : results) {
    if (r.error) std::rethrow_exception(r.error);
    out.mean.loss += r.stats.loss * inv;
    out.mean.reconstruction += r.stats.reconstruction * inv;
    out.mean.overshoot += r.stats.overshoot * inv;
    out.mean.kl += r.stats.kl * inv;
    for (std::size_t k = 0; k < out.gradients.size(); ++k) out.gradients[k] += inv * r.gradients[k];
  }
  return out;
}

LossStats evaluate_loss(const ModelSpec& spec, const ModelParams& params,
                        const std::vector<Trajectory>& data, double alpha, double jitter,
                        unsigned threads) {
  std::vector<const Trajectory*> members;
  for (const Trajectory& t : data) members.push_back(&t);
  return evaluate_batch(spec, params, members, alpha, jitter, false, resolve_threads(threads)).mean;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the order is identical across
  // standard library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void train(TrainState& state, const std::vector<Trajectory>& data, const TrainConfig& cfg,
           const EpochCallback& on_epoch) {
  cfg.validate();
  state.spec.validate();
  check_data(state.spec, data);
  const auto tensors = state.params.tensors();
  if (state.adam.m.size() != tensors.size()) {
    state.adam = AdamState::zeros_like(std::span<const Matrix* const>(tensors.data(), tensors.size()));
  }
  const unsigned threads = resolve_threads(cfg.threads);
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::size_t epoch = state.epoch + 1;
    const std::vector<std::size_t> order = epoch_order(data.size(), cfg.seed, epoch);
    LossStats sum;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      std::vector<const Trajectory*> members;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        members.push_back(&data[order[i]]);
      }
      BatchEvaluation ev;
      try {
        ev = evaluate_batch(state.spec, state.params, members, cfg.alpha, cfg.jitter, true, threads);
      } catch (const std::exception& ex) {
        throw TrainingAborted(ex.what(), epoch, batch_index + 1, parameter_norms(state.params));
      }
      if (!std::isfinite(ev.mean.loss)) {
        throw TrainingAborted("non-finite loss", epoch, batch_index + 1,
                              parameter_norms(state.params));
      }
      const double norm = clip_global_norm(ev.gradients, cfg.gradient_clip);
      if (!std::isfinite(norm)) {
        throw TrainingAborted("non-finite gradient", epoch, batch_index + 1,
                              parameter_norms(state.params));
      }
      adam_step(std::span<Matrix* const>(tensors.data(), tensors.size()), ev.gradients,
                state.adam, adam);
      if (!state.params.log_q.allFinite() || !state.params.log_r.allFinite()) {
        throw TrainingAborted("noise covariance left the positive-definite domain", epoch,
                              batch_index + 1, parameter_norms(state.params));
      }
      const double w = static_cast<double>(members.size());
      sum.loss += w * ev.mean.loss;
      sum.reconstruction += w * ev.mean.reconstruction;
      sum.overshoot += w * ev.mean.overshoot;
      sum.kl += w * ev.mean.kl;
    }
    const double n = static_cast<double>(data.size());
    EpochStats stats{epoch, {sum.loss / n, sum.reconstruction / n, sum.overshoot / n, sum.kl / n}};
    state.epoch = epoch;
    state.history.push_back(stats);
    if (on_epoch) on_epoch(state, stats);
  }
}

}  // namespace nekf
