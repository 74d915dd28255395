#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bitshapley/cost.hpp"
#include "bitshapley/supernet.hpp"

namespace bitshapley {

// ---------------------------------------------------------------------------
// Cooperative-game engine.
// ---------------------------------------------------------------------------

/// Coalition -> payoff callback with the two endpoint values cached.
/// Must be deterministic while weights stay frozen.
class ValueFunction {
 public:
  ValueFunction(std::size_t n_players,
                std::function<double(const Coalition&)> eval);

  std::size_t n_players() const { return n_; }
  double operator()(const Coalition& c) const;
  double v_empty() const { return v_empty_; }
  double v_full() const { return v_full_; }

  /// Evaluation-count bookkeeping (testing the truncation contract).
  std::size_t calls() const { return *calls_; }
  void reset_calls() const { *calls_ = 0; }

 private:
  std::size_t n_;
  std::function<double(const Coalition&)> eval_;
  double v_empty_ = 0, v_full_ = 0;
  std::shared_ptr<std::size_t> calls_;
};

/// Estimated contribution of one player: running mean over sampled marginal
/// contributions plus a variance accumulator.
struct ShapleyEstimate {
  double psi = 0.0;
  std::int64_t samples_seen = 0;
  double m2 = 0.0;  // sum of squared deviations from the running mean

  void observe(double marginal) {
    ++samples_seen;
    const double delta = marginal - psi;
    psi += delta / static_cast<double>(samples_seen);
    m2 += delta * (marginal - psi);
  }

  double variance() const {
    return samples_seen > 1 ? m2 / static_cast<double>(samples_seen - 1) : 0.0;
  }
};

/// Exact Shapley values by subset enumeration:
///   psi_i = sum over S not containing i of
///           |S|!(n-|S|-1)!/n! * (V(S + i) - V(S)).
/// Guarded to at most 20 players.  Evaluates each of the 2^n coalitions once.
std::vector<ShapleyEstimate> exact_shapley(const ValueFunction& vf);

/// Monte-Carlo permutation estimator with truncation: for M seeded uniform
/// permutations, accumulate marginals along each permutation; once the
/// running coalition's value falls below threshold * V(N), remaining players
/// in that permutation receive marginal 0.  Truncation is examined after
/// each evaluation (the empty prefix never truncates).  (seed, M, threshold)
/// fixes the result bit-exactly; `threads` only changes wall time.
std::vector<ShapleyEstimate> mc_shapley(const ValueFunction& vf, std::size_t M,
                                        double truncation_threshold,
                                        std::uint64_t seed, int threads = 1);

/// Momentum accumulator over per-player Shapley estimates.
/// beta + lambda = 1 exactly; xi is the alpha step size.
struct MomentumState {
  std::vector<double> q;
  double beta = 0.8;
  double lambda = 0.2;
  double xi = 0.1;

  void validate() const;
};

/// q <- beta * q + lambda * psi / ||psi||2.  A zero psi leaves q unchanged.
void momentum_update(MomentumState& state, const std::vector<double>& psi);

/// alpha <- alpha + xi * q / ||q||2, so each nonzero step has L2 norm
/// exactly xi.  A zero q leaves alpha unchanged.
void alpha_update(std::vector<double>& alpha, const MomentumState& state);

/// Stopping rule on the per-layer minimum contributions:
///   delta_psi = sum_i scale * |psi_min,i| ; stop when delta_psi < epsilon.
struct ConvergenceMonitor {
  double epsilon = 1e-3;
  double scale = 50.0;
  std::vector<double> history;

  /// Returns true when the search should stop; records delta_psi.
  bool check(const std::vector<double>& psi_min_per_layer);
  double last_delta() const { return history.empty() ? 0.0 : history.back(); }
};

// ---------------------------------------------------------------------------
// The supernet value function.
// ---------------------------------------------------------------------------

/// V(S) = Acc_val(masked_forward with S)
///        - mu * max(0, E[BOPs | S] / Omega0 - 1),
/// where E[BOPs | S] averages candidate bits per edge (an empty edge counts
/// as full precision).  Supernet weights must stay frozen for the lifetime
/// of the returned callback.
ValueFunction make_value_function(const Supernet& supernet,
                                  const Tensor& val_inputs,
                                  const std::vector<int>& val_labels,
                                  const CostBudget& budget,
                                  std::size_t batch_size = 256);

/// Classification accuracy of logits produced by `eval` over the dataset.
double accuracy(const ComputeGraph& graph, const Tensor& inputs,
                const std::vector<int>& labels, std::size_t batch_size = 256,
                const std::vector<SlotPair>* slot_override = nullptr);

/// Shapley dump: one CSV row per player, (layer, kind, bit, psi, samples,
/// variance), preceded by provenance comment lines.
void write_shapley_csv(const std::string& path, const Supernet& supernet,
                       const std::vector<ShapleyEstimate>& estimates,
                       const std::vector<std::string>& provenance);

}  // namespace bitshapley
