// Federated orchestration: client sampling, local training, FedAvg / FedOPT
// server aggregation, and the round loop.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/model.hpp"
#include "fedsim/partition.hpp"
#include "fedsim/quant.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class FedOptimizer { fedavg, fedopt, fedopt_sgd };

inline FedOptimizer parse_optimizer(const std::string& s) {
  if (s == "fedavg") return FedOptimizer::fedavg;
  if (s == "fedopt") return FedOptimizer::fedopt;
  if (s == "fedopt_sgd") return FedOptimizer::fedopt_sgd;
  throw std::invalid_argument("optimizer must be fedavg, fedopt or fedopt_sgd");
}

inline std::string optimizer_name(FedOptimizer o) {
  switch (o) {
    case FedOptimizer::fedavg: return "fedavg";
    case FedOptimizer::fedopt: return "fedopt";
    case FedOptimizer::fedopt_sgd: return "fedopt_sgd";
  }
  throw std::logic_error("optimizer_name: bad optimizer");
}

struct RoundConfig {
  std::size_t total_rounds = 0;
  double sample_ratio = 1.0;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 32;
  double client_lr = 0.01;
  FedOptimizer optimizer = FedOptimizer::fedavg;
  double server_lr = 0.01;        // fedopt / fedopt_sgd
  double server_beta1 = 0.9;      // fedopt
  double server_beta2 = 0.999;    // fedopt
  double server_tau = 1e-8;       // fedopt
  std::uint64_t master_seed = 0;
  std::size_t eval_every = 5;     // 0 = checkpoints and final round only
  Precision precision = Precision::full64;
  std::size_t threads = 1;
};

inline void validate_round_config(const RoundConfig& cfg) {
  if (!(cfg.sample_ratio > 0.0 && cfg.sample_ratio <= 1.0))
    throw std::invalid_argument("fed.sample_ratio: must be in (0, 1]");
  if (cfg.local_epochs < 1)
    throw std::invalid_argument("fed.local_epochs: must be >= 1");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("fed.batch_size: must be >= 1");
  if (!(cfg.client_lr > 0.0) || !std::isfinite(cfg.client_lr))
    throw std::invalid_argument("fed.client_lr: must be positive and finite");
  if (cfg.optimizer != FedOptimizer::fedavg) {
    if (!(cfg.server_lr > 0.0) || !std::isfinite(cfg.server_lr))
      throw std::invalid_argument("fed.server_lr: must be positive and finite");
    if (!(cfg.server_beta1 >= 0.0 && cfg.server_beta1 < 1.0) ||
        !(cfg.server_beta2 >= 0.0 && cfg.server_beta2 < 1.0))
      throw std::invalid_argument("fed.server_beta: must be in [0, 1)");
    if (!(cfg.server_tau > 0.0))
      throw std::invalid_argument("fed.server_tau: must be positive");
  }
}

struct ClientUpdate {
  std::size_t client_id = 0;
  std::size_t num_samples = 0;
  ParamVector delta;  // local_final - global_snapshot
};

struct ServerState {
  ParamVector global_params;
  std::size_t round = 0;
  ParamVector first_moment;   // fedopt only
  ParamVector second_moment;  // fedopt only
};

inline ServerState make_server_state(ParamVector global) {
  ServerState s;
  s.first_moment.layout = global.layout;
  s.first_moment.values.assign(global.values.size(), 0.0);
  s.second_moment = s.first_moment;
  s.global_params = std::move(global);
  return s;
}

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> clients;  // participating (non-aborted), sorted
  double train_loss = 0.0;
  std::optional<double> metric;
  std::string checkpoint_tag = "-";
  double wall_ms = 0.0;
};

struct MetricsLog {
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::vector<std::pair<std::string, std::string>> info;
  std::vector<std::string> notes;  // client aborts and similar events
  std::vector<RoundRecord> records;
  double total_wall_ms = 0.0;
};

// Thrown by local training when the loss stops being finite; the engine
// drops the client for the round and records a note.
struct ClientAbortError : std::runtime_error {
  std::size_t client_id;
  ClientAbortError(std::size_t id, const std::string& what)
      : std::runtime_error(what), client_id(id) {}
};

// k = max(1, round(ratio * M)) distinct ids, uniform without replacement,
// returned sorted. Deterministic in (master_seed, round).
inline std::vector<std::size_t> sample_clients(std::size_t round,
                                               std::size_t num_clients,
                                               double ratio,
                                               std::uint64_t master_seed) {
  if (num_clients < 1)
    throw std::invalid_argument("sample_clients: num_clients must be >= 1");
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw std::invalid_argument("sample_clients: ratio must be in (0, 1]");
  const std::size_t k = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(ratio * static_cast<double>(num_clients))));

  Rng rng(derive_seed(master_seed, StreamTag::sampling, round));
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(num_clients - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace detail {

inline Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& rows,
                          std::size_t begin, std::size_t end) {
  Matrix out(end - begin, src.cols);
  for (std::size_t i = begin; i < end; ++i)
    std::copy(src.row(rows[i]), src.row(rows[i]) + src.cols, out.row(i - begin));
  return out;
}

inline Targets gather_targets(const Targets& src, const std::vector<std::size_t>& rows,
                              std::size_t begin, std::size_t end) {
  Targets out;
  out.kind = src.kind;
  out.num_classes = src.num_classes;
  if (src.kind == TargetKind::categorical) {
    out.labels.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.labels.push_back(src.labels[rows[i]]);
  } else {
    out.values.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.values.push_back(src.values[rows[i]]);
  }
  return out;
}

}  // namespace detail

struct LocalTrainResult {
  ClientUpdate update;
  double mean_loss = 0.0;
};

// Local epochs of seeded-shuffled mini-batch SGD on one client's samples.
// All randomness comes from a stream derived from (master_seed, round,
// client_id), so execution order across clients cannot affect results. The
// global snapshot is never mutated.
inline LocalTrainResult local_train(const ModelSpec& spec, const ParamVector& global,
                                    const TabularDataset& train,
                                    const std::vector<std::size_t>& client_indices,
                                    const RoundConfig& cfg, std::size_t round,
                                    std::size_t client_id) {
  if (client_indices.empty())
    throw std::invalid_argument("local_train: client has no data");

  Rng rng(derive_seed(cfg.master_seed, StreamTag::local, round, client_id));
  ParamVector params = cfg.precision == Precision::full64
                           ? global
                           : quantize_roundtrip(global, cfg.precision);

  std::vector<std::size_t> order = client_indices;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const Matrix x = detail::gather_rows(train.features, order, start, stop);
      const Targets y = detail::gather_targets(train.targets, order, start, stop);
      const std::uint64_t dropout_seed = rng.next_u64();
      const LossGrad lg = loss_and_grad(spec, params, x, y, true, dropout_seed);
      if (!std::isfinite(lg.loss))
        throw ClientAbortError(client_id,
                               "client " + std::to_string(client_id) +
                                   ": non-finite loss in round " + std::to_string(round) +
                                   ", epoch " + std::to_string(epoch));
      params = quantized_sgd_step(params, lg.grad, cfg.client_lr, cfg.precision);
      loss_sum += lg.loss;
      ++loss_count;
    }
  }

  LocalTrainResult out;
  out.update.client_id = client_id;
  out.update.num_samples = client_indices.size();
  out.update.delta.layout = params.layout;
  out.update.delta.values.resize(params.values.size());
  for (std::size_t i = 0; i < params.values.size(); ++i)
    out.update.delta.values[i] = params.values[i] - global.values[i];
  out.mean_loss = loss_sum / static_cast<double>(loss_count);
  return out;
}

namespace detail {

// Sample-count weighted mean of deltas, reduced in ascending client-id order
// regardless of arrival order. Weights are normalized before the reduction
// so a lone client contributes its delta exactly.
inline ParamVector weighted_mean_delta(const std::vector<ClientUpdate>& updates) {
  if (updates.empty())
    throw std::invalid_argument("aggregate: empty update set");
  std::vector<const ClientUpdate*> sorted;
  sorted.reserve(updates.size());
  for (const ClientUpdate& u : updates) sorted.push_back(&u);
  std::sort(sorted.begin(), sorted.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) {
              return a->client_id < b->client_id;
            });

  const std::size_t len = sorted.front()->delta.values.size();
  double total = 0.0;
  for (const ClientUpdate* u : sorted) {
    if (u->num_samples == 0)
      throw std::invalid_argument("aggregate: update with zero samples");
    if (u->delta.values.size() != len)
      throw std::invalid_argument("aggregate: delta shape mismatch");
    total += static_cast<double>(u->num_samples);
  }

  ParamVector mean;
  mean.layout = sorted.front()->delta.layout;
  mean.values.assign(len, 0.0);
  for (const ClientUpdate* u : sorted) {
    const double w = static_cast<double>(u->num_samples) / total;
    for (std::size_t i = 0; i < len; ++i) mean.values[i] += w * u->delta.values[i];
  }
  return mean;
}

}  // namespace detail

inline ParamVector aggregate_fedavg(const ParamVector& global,
                                    const std::vector<ClientUpdate>& updates) {
  const ParamVector mean = detail::weighted_mean_delta(updates);
  if (mean.values.size() != global.values.size())
    throw std::invalid_argument("aggregate_fedavg: delta/global shape mismatch");
  ParamVector next = global;
  for (std::size_t i = 0; i < next.values.size(); ++i)
    next.values[i] += mean.values[i];
  return next;
}

// Server Adam over the pseudo-gradient g = -(weighted mean delta), with bias
// correction at step t = round + 1.
inline ServerState aggregate_fedopt(const ServerState& state,
                                    const std::vector<ClientUpdate>& updates,
                                    const RoundConfig& cfg) {
  const ParamVector mean = detail::weighted_mean_delta(updates);
  if (mean.values.size() != state.global_params.values.size())
    throw std::invalid_argument("aggregate_fedopt: delta/global shape mismatch");

  ServerState next = state;
  const double t = static_cast<double>(state.round + 1);
  const double bc1 = 1.0 - std::pow(cfg.server_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.server_beta2, t);
  for (std::size_t i = 0; i < mean.values.size(); ++i) {
    const double g = -mean.values[i];
    const double m = cfg.server_beta1 * state.first_moment.values[i] +
                     (1.0 - cfg.server_beta1) * g;
    const double v = cfg.server_beta2 * state.second_moment.values[i] +
                     (1.0 - cfg.server_beta2) * g * g;
    next.first_moment.values[i] = m;
    next.second_moment.values[i] = v;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    next.global_params.values[i] -=
        cfg.server_lr * m_hat / (std::sqrt(v_hat) + cfg.server_tau);
  }
  next.round = state.round + 1;
  return next;
}

// Plain server step along the mean delta. With server_lr = 1 this is
// bit-equal to aggregate_fedavg.
inline ServerState aggregate_fedopt_sgd(const ServerState& state,
                                        const std::vector<ClientUpdate>& updates,
                                        const RoundConfig& cfg) {
  const ParamVector mean = detail::weighted_mean_delta(updates);
  if (mean.values.size() != state.global_params.values.size())
    throw std::invalid_argument("aggregate_fedopt_sgd: delta/global shape mismatch");
  ServerState next = state;
  for (std::size_t i = 0; i < mean.values.size(); ++i)
    next.global_params.values[i] += cfg.server_lr * mean.values[i];
  next.round = state.round + 1;
  return next;
}

namespace detail {

// Index-parallel map with results deposited by position; thread count never
// affects the outcome. Non-abort exceptions are rethrown for the lowest
// failing index.
template <typename Fn>
inline void parallel_tasks(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace detail

struct RunResult {
  MetricsLog log;
  ParamVector final_params;
};

// Runs the full federated loop: sample clients, train locally on the global
// snapshot (optionally in parallel), transport deltas at the configured
// precision, aggregate, and evaluate on the held-out test set. The metric is
// always evaluated when 50% / 80% / 100% of the rounds complete and those
// records carry checkpoint tags. Deterministic in cfg.master_seed; thread
// count cannot change any recorded value except wall time.
inline RunResult run_experiment(const TabularDataset& train, const TabularDataset& test,
                                const PartitionMap& partition, const ModelSpec& spec,
                                const RoundConfig& cfg,
                                std::vector<std::pair<std::string, std::string>>
                                    config_echo = {}) {
  validate_round_config(cfg);
  validate_model_spec(spec);
  if (partition.dataset_size != train.num_samples())
    throw std::invalid_argument("run_experiment: partition does not match the training set");
  if (spec.layer_sizes.front() != train.num_features())
    throw std::invalid_argument("run_experiment: model input width does not match data");
  for (const auto& idx : partition.assignments)
    if (idx.empty())
      throw std::invalid_argument("run_experiment: a client has no samples");

  const std::size_t num_clients = partition.num_clients();
  ParamVector global = init_params(spec, cfg.master_seed);
  if (cfg.precision != Precision::full64)
    global = quantize_roundtrip(global, cfg.precision);
  ServerState state = make_server_state(std::move(global));

  MetricsLog log;
  log.config_echo = std::move(config_echo);
  log.info.emplace_back("version", "0.1.0");
  log.info.emplace_back("master_seed", std::to_string(cfg.master_seed));
  log.info.emplace_back("param_count", std::to_string(param_count(spec)));
  log.info.emplace_back("param_bytes",
                        std::to_string(payload_bytes(param_count(spec), cfg.precision)));
  if (cfg.precision == Precision::half16)
    log.info.emplace_back("payload_note",
                          "half16 payload is the analytic 50% of full32; "
                          "process memory is not modeled");

  const std::size_t rounds = cfg.total_rounds;
  const auto checkpoint_round = [&](double frac) {
    return static_cast<std::size_t>(
        std::ceil(frac * static_cast<double>(rounds)));
  };
  const std::size_t cp50 = checkpoint_round(0.5);
  const std::size_t cp80 = checkpoint_round(0.8);
  const std::size_t cp100 = rounds;

  const auto t_start = std::chrono::steady_clock::now();
  for (std::size_t round = 0; round < rounds; ++round) {
    const auto t_round = std::chrono::steady_clock::now();
    const std::vector<std::size_t> sampled =
        sample_clients(round, num_clients, cfg.sample_ratio, cfg.master_seed);

    std::vector<std::optional<LocalTrainResult>> results(sampled.size());
    std::vector<std::string> aborts(sampled.size());
    detail::parallel_tasks(sampled.size(), cfg.threads, [&](std::size_t i) {
      try {
        results[i] = local_train(spec, state.global_params, train,
                                 partition.assignments[sampled[i]], cfg, round,
                                 sampled[i]);
      } catch (const ClientAbortError& abort) {
        aborts[i] = abort.what();
      }
    });

    std::vector<ClientUpdate> updates;
    double loss_acc = 0.0;
    double weight_acc = 0.0;
    std::vector<std::size_t> participating;
    for (std::size_t i = 0; i < sampled.size(); ++i) {
      if (!results[i]) {
        log.notes.push_back("round " + std::to_string(round) + ": dropped " + aborts[i]);
        continue;
      }
      const double w = static_cast<double>(results[i]->update.num_samples);
      loss_acc += w * results[i]->mean_loss;
      weight_acc += w;
      participating.push_back(sampled[i]);
      updates.push_back(std::move(results[i]->update));
    }
    if (updates.empty())
      throw std::runtime_error("run_experiment: all sampled clients aborted in round " +
                               std::to_string(round));

    if (cfg.precision != Precision::full64)
      for (ClientUpdate& u : updates)
        u.delta.values = dequantize_values(quantize_values(u.delta.values, cfg.precision));

    switch (cfg.optimizer) {
      case FedOptimizer::fedavg:
        state.global_params = aggregate_fedavg(state.global_params, updates);
        state.round += 1;
        break;
      case FedOptimizer::fedopt:
        state = aggregate_fedopt(state, updates, cfg);
        break;
      case FedOptimizer::fedopt_sgd:
        state = aggregate_fedopt_sgd(state, updates, cfg);
        break;
    }
    if (cfg.precision != Precision::full64)
      state.global_params = quantize_roundtrip(state.global_params, cfg.precision);
    for (double v : state.global_params.values)
      if (!std::isfinite(v))
        throw std::runtime_error(
            "run_experiment: global parameters became non-finite in round " +
            std::to_string(round));

    RoundRecord rec;
    rec.round = round;
    rec.clients = std::move(participating);
    rec.train_loss = loss_acc / weight_acc;

    const std::size_t done = round + 1;
    std::string tag;
    if (done == cp50) tag += (tag.empty() ? "" : "+") + std::string("50%");
    if (done == cp80) tag += (tag.empty() ? "" : "+") + std::string("80%");
    if (done == cp100) tag += (tag.empty() ? "" : "+") + std::string("100%");
    const bool eval_due =
        (cfg.eval_every > 0 && done % cfg.eval_every == 0) || !tag.empty();
    if (eval_due) rec.metric = evaluate(spec, state.global_params, test).metric;
    rec.checkpoint_tag = tag.empty() ? "-" : tag;
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t_round)
                      .count();
    log.records.push_back(std::move(rec));
  }
  log.total_wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t_start)
                          .count();
  return {std::move(log), std::move(state.global_params)};
}

}  // namespace fedsim
