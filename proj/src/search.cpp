#include "bitshapley/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "bitshapley/errors.hpp"
#include "bitshapley/rng.hpp"

namespace bitshapley {

void SearchConfig::validate() const {
  train.validate();
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (rounds_per_epoch == 0) throw ConfigError("rounds_per_epoch must be >= 1");
  if (mc_samples == 0) throw ConfigError("mc_samples must be >= 1");
  if (truncation_threshold < 0 || truncation_threshold > 1) {
    throw ConfigError("truncation_threshold must lie in [0, 1]");
  }
  if (xi <= 0) throw ConfigError("xi must be > 0");
  if (beta < 0 || beta > 1) throw ConfigError("beta must lie in [0, 1]");
  if (epsilon <= 0) throw ConfigError("epsilon must be > 0");
  if (mu < 0) throw ConfigError("mu must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (alpha_lr < 0) throw ConfigError("alpha_lr must be >= 0");
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed,
                                                    std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "epoch.shuffle", epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    const std::size_t hi = std::min(lo + batch_size, n);
    batches.emplace_back(order.begin() + lo, order.begin() + hi);
  }
  return batches;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Minimum current-round contribution per layer, over both of its edges.
std::vector<double> per_layer_min(const Supernet& supernet,
                                  const std::vector<double>& psi) {
  std::vector<double> mins(supernet.n_layers(),
                           std::numeric_limits<double>::infinity());
  const auto& players = supernet.players();
  for (std::size_t i = 0; i < players.size(); ++i) {
    mins[players[i].layer] = std::min(mins[players[i].layer], psi[i]);
  }
  return mins;
}

}  // namespace

double train_weights_epoch(Supernet& supernet, const Dataset& train_data,
                           const TrainConfig& cfg, Optimizer& opt,
                           std::uint64_t epoch_index) {
  supernet.sync_mixture_slots();  // alpha frozen for the whole epoch
  ComputeGraph& graph = supernet.graph();
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (const auto& idx : epoch_batches(train_data.size(), cfg.batch_size,
                                       cfg.seed, epoch_index)) {
    graph.forward(train_data.rows(idx));
    const double loss = graph.backward(train_data.label_rows(idx));
    if (!std::isfinite(loss)) {
      throw NumericError("train_weights_epoch: non-finite loss");
    }
    opt.step(graph);
    loss_sum += loss;
    ++batches;
  }
  return loss_sum / static_cast<double>(batches);
}

double mixture_loss_alpha_grad(Supernet& supernet, const Tensor& batch,
                               const std::vector<int>& labels,
                               std::vector<double>* alpha_grad) {
  supernet.sync_mixture_slots();
  ComputeGraph& graph = supernet.graph();
  Workspace ws;
  ws.collect_mix_grads = alpha_grad != nullptr;
  graph.forward_ws(batch, ws);
  const double loss = graph.backward_ws(labels, ws);
  if (!alpha_grad) return loss;

  alpha_grad->clear();
  for (const MixedEdge& e : supernet.edges()) {
    const std::vector<double>& mix_grad =
        e.kind == EdgeKind::weight ? ws.wmix_grad[e.layer] : ws.amix_grad[e.layer];
    const std::vector<double> pi = softmax(e.alpha);
    double inner = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) inner += pi[i] * mix_grad[i];
    for (std::size_t i = 0; i < pi.size(); ++i) {
      alpha_grad->push_back(pi[i] * (mix_grad[i] - inner));
    }
  }
  return loss;
}

SearchResult smpq_search(Supernet& supernet, const Dataset& train_data,
                         const Dataset& val_data, const SearchConfig& cfg) {
  cfg.validate();
  if (cfg.method != SearchMethod::smpq) {
    throw ConfigError("smpq_search invoked with method != smpq");
  }
  const auto t0 = std::chrono::steady_clock::now();
  supernet.calibrate(train_data.inputs, cfg.train.batch_size,
                     cfg.calib_batches);

  const CostBudget budget =
      CostBudget::from_graph(supernet.graph(), cfg.omega0, cfg.mu);
  Optimizer opt(cfg.train.optimizer, cfg.train.learning_rate);
  MomentumState momentum;
  momentum.beta = cfg.beta;
  momentum.lambda = 1.0 - cfg.beta;
  momentum.xi = cfg.xi;
  ConvergenceMonitor monitor;
  monitor.epsilon = cfg.epsilon;
  monitor.scale = cfg.conv_scale;

  SearchResult result;
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss = train_weights_epoch(supernet, train_data, cfg.train,
                                            opt, epoch);
    bool stop = false;
    for (std::size_t round = 0; round < cfg.rounds_per_epoch && !stop;
         ++round) {
      // Shapley round under the frozen-weights contract.
      const std::uint64_t before = supernet.graph().weight_digest();
      const ValueFunction vf =
          make_value_function(supernet, val_data.inputs, val_data.labels,
                              budget, cfg.train.batch_size);
      const std::vector<ShapleyEstimate> estimates =
          mc_shapley(vf, cfg.mc_samples, cfg.truncation_threshold,
                     derive_seed(cfg.seed, "shapley.round", iteration),
                     cfg.threads);
      if (supernet.graph().weight_digest() != before) {
        throw Error("frozen-weights contract violated during Shapley round");
      }

      std::vector<double> psi(estimates.size());
      for (std::size_t i = 0; i < estimates.size(); ++i) {
        psi[i] = estimates[i].psi;
      }
      momentum_update(momentum, psi);
      std::vector<double> alpha = supernet.alpha_flat();
      alpha_update(alpha, momentum);
      supernet.set_alpha_flat(alpha);
      result.shapley_rounds.push_back(estimates);

      stop = monitor.check(per_layer_min(supernet, psi));

      TrajectoryRecord rec;
      rec.iteration = iteration++;
      rec.train_loss = loss;
      const std::vector<SlotPair> slots = supernet.mixture_slots();
      rec.val_accuracy = accuracy(supernet.graph(), val_data.inputs,
                                  val_data.labels, cfg.train.batch_size, &slots);
      rec.delta_psi = monitor.last_delta();
      rec.alpha_digest = supernet.alpha_digest();
      rec.wall_time_s = seconds_since(t0);
      result.trajectory.records.push_back(rec);
    }
    if (cfg.epoch_hook) cfg.epoch_hook(epoch, supernet);
    if (stop) {
      result.trajectory.converged = true;
      break;
    }
  }
  result.policy = enforce_budget(supernet, budget);
  return result;
}

SearchResult dmpq_search(Supernet& supernet, const Dataset& train_data,
                         const Dataset& val_data, const SearchConfig& cfg) {
  cfg.validate();
  if (cfg.method != SearchMethod::dmpq) {
    throw ConfigError("dmpq_search invoked with method != dmpq");
  }
  const auto t0 = std::chrono::steady_clock::now();
  supernet.calibrate(train_data.inputs, cfg.train.batch_size,
                     cfg.calib_batches);

  const CostBudget budget =
      CostBudget::from_graph(supernet.graph(), cfg.omega0, cfg.mu);
  Optimizer opt(cfg.train.optimizer, cfg.train.learning_rate);

  SearchResult result;
  std::size_t val_cursor = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& idx : epoch_batches(train_data.size(),
                                         cfg.train.batch_size, cfg.train.seed,
                                         epoch)) {
      std::vector<double> alpha_grad;
      const double loss =
          mixture_loss_alpha_grad(supernet, train_data.rows(idx),
                                  train_data.label_rows(idx), &alpha_grad);
      opt.step(supernet.graph());

      if (cfg.alpha_on_val) {
        // Bi-level flavor: the alpha step comes from a validation batch.
        const std::size_t n = val_data.size();
        const std::size_t lo = val_cursor % n;
        const std::size_t hi = std::min(lo + cfg.train.batch_size, n);
        val_cursor = hi % n;
        std::vector<std::size_t> vidx(hi - lo);
        std::iota(vidx.begin(), vidx.end(), lo);
        mixture_loss_alpha_grad(supernet, val_data.rows(vidx),
                                val_data.label_rows(vidx), &alpha_grad);
      }
      std::vector<double> alpha = supernet.alpha_flat();
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        alpha[i] -= cfg.alpha_lr * alpha_grad[i];
      }
      supernet.set_alpha_flat(alpha);
      loss_sum += loss;
      ++batches;
    }

    TrajectoryRecord rec;
    rec.iteration = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    const std::vector<SlotPair> slots = supernet.mixture_slots();
    rec.val_accuracy = accuracy(supernet.graph(), val_data.inputs,
                                val_data.labels, cfg.train.batch_size, &slots);
    rec.delta_psi = std::numeric_limits<double>::quiet_NaN();
    rec.alpha_digest = supernet.alpha_digest();
    rec.wall_time_s = seconds_since(t0);
    result.trajectory.records.push_back(rec);
    if (cfg.epoch_hook) cfg.epoch_hook(epoch, supernet);
  }
  result.policy = enforce_budget(supernet, budget);
  return result;
}

double train_graph_epochs(ComputeGraph& graph, const Dataset& train_data,
                          const TrainConfig& cfg) {
  cfg.validate();
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& idx :
         epoch_batches(train_data.size(), cfg.batch_size, cfg.seed, epoch)) {
      graph.forward(train_data.rows(idx));
      loss_sum += graph.backward(train_data.label_rows(idx));
      opt.step(graph);
      ++batches;
    }
    last = loss_sum / static_cast<double>(batches);
    if (!std::isfinite(last)) {
      throw NumericError("train_graph_epochs: non-finite loss");
    }
  }
  return last;
}

FinetuneMetrics finetune(const Supernet& supernet, const QuantPolicy& policy,
                         const Dataset& train_data, const Dataset& val_data,
                         const TrainConfig& cfg, const CostBudget& budget,
                         ComputeGraph* out_graph) {
  ComputeGraph graph = apply_policy(supernet, policy);
  FinetuneMetrics metrics;
  if (cfg.epochs > 0) {
    metrics.train_loss = train_graph_epochs(graph, train_data, cfg);
  }
  metrics.train_accuracy =
      accuracy(graph, train_data.inputs, train_data.labels, cfg.batch_size);
  metrics.val_accuracy =
      accuracy(graph, val_data.inputs, val_data.labels, cfg.batch_size);
  const PolicyCost cost = policy_bops(policy, budget);
  metrics.bops = cost.bops;
  metrics.compression_ratio = cost.compression_ratio;
  if (out_graph) *out_graph = std::move(graph);
  return metrics;
}

}  // namespace bitshapley
