#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bitshapley/cost.hpp"
#include "bitshapley/data.hpp"
#include "bitshapley/game.hpp"
#include "bitshapley/supernet.hpp"

namespace bitshapley {

enum class SearchMethod { smpq, dmpq };

struct SearchConfig {
  SearchMethod method = SearchMethod::smpq;
  std::size_t epochs = 8;
  std::size_t rounds_per_epoch = 1;
  std::size_t mc_samples = 10;        // M permutations per round
  double truncation_threshold = 0.5;
  double xi = 0.1;
  double beta = 0.8;                  // lambda = 1 - beta
  double epsilon = 1e-3;
  double conv_scale = 50.0;
  double mu = 1.0;
  double omega0 = 0;                  // <= 0: unconstrained
  std::size_t calib_batches = 8;
  std::uint64_t seed = 1;
  int threads = 1;

  TrainConfig train;                  // inner weight training
  double alpha_lr = 0.05;             // differentiable baseline only
  bool alpha_on_val = false;          // dmpq: alpha step on the val split

  // Invoked after every epoch (periodic checkpoints and the like).
  std::function<void(std::size_t epoch, const Supernet&)> epoch_hook;

  void validate() const;
};

struct TrajectoryRecord {
  std::size_t iteration = 0;
  double train_loss = 0;
  double val_accuracy = 0;
  double delta_psi = 0;    // NaN for rounds without a Shapley pass
  std::uint64_t alpha_digest = 0;
  double wall_time_s = 0;  // excluded from the deterministic CSV
};

struct SearchTrajectory {
  std::vector<TrajectoryRecord> records;
  bool converged = false;
};

struct SearchResult {
  BudgetedPolicy policy;
  SearchTrajectory trajectory;
  // Per-round Shapley estimates (smpq only), for dumps and probes.
  std::vector<std::vector<ShapleyEstimate>> shapley_rounds;
};

/// One epoch of gradient descent on the shared weights through the softmax
/// mixture (alpha frozen).  Returns the mean batch loss.
double train_weights_epoch(Supernet& supernet, const Dataset& train_data,
                           const TrainConfig& cfg, Optimizer& opt,
                           std::uint64_t epoch_index);

/// Alternates weight training with frozen-weight Shapley rounds: estimate
/// per-player contributions by truncated Monte-Carlo sampling, fold them
/// through the momentum accumulator, step alpha, and stop at the epoch limit
/// or once the per-layer minimum contributions meet the convergence rule.
/// The final policy is budget-repaired winner-take-all.
SearchResult smpq_search(Supernet& supernet, const Dataset& train_data,
                         const Dataset& val_data, const SearchConfig& cfg);

/// Differentiable baseline: alpha receives gradients through the softmax
/// mixture, jointly with the weights on the training loss (or on the val
/// split when alpha_on_val is set).  Same discretize + budget path.
SearchResult dmpq_search(Supernet& supernet, const Dataset& train_data,
                         const Dataset& val_data, const SearchConfig& cfg);

struct FinetuneMetrics {
  double train_accuracy = 0;
  double val_accuracy = 0;
  double train_loss = 0;
  double bops = 0;
  double compression_ratio = 1;
};

/// Trains an already-pinned graph for cfg.epochs; returns the final mean
/// epoch loss (0 for zero epochs).
double train_graph_epochs(ComputeGraph& graph, const Dataset& train_data,
                          const TrainConfig& cfg);

/// Pins the policy onto a copy of the supernet graph (weights inherited) and
/// trains for cfg.epochs.  Zero epochs reports the inherited weights as-is.
/// The trained graph lands in *out_graph when given.
FinetuneMetrics finetune(const Supernet& supernet, const QuantPolicy& policy,
                         const Dataset& train_data, const Dataset& val_data,
                         const TrainConfig& cfg, const CostBudget& budget,
                         ComputeGraph* out_graph = nullptr);

/// Loss (and optionally the alpha gradient) of one mixture forward/backward
/// pass; the gradient is d(loss)/d(alpha) through the softmax on each edge.
double mixture_loss_alpha_grad(Supernet& supernet, const Tensor& batch,
                               const std::vector<int>& labels,
                               std::vector<double>* alpha_grad);

}  // namespace bitshapley
