#include "bitshapley/game.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "bitshapley/errors.hpp"
#include "bitshapley/rng.hpp"

namespace bitshapley {

ValueFunction::ValueFunction(std::size_t n_players,
                             std::function<double(const Coalition&)> eval)
    : n_(n_players),
      eval_(std::move(eval)),
      calls_(std::make_shared<std::size_t>(0)) {
  v_empty_ = eval_(Coalition(n_));
  v_full_ = eval_(Coalition::full(n_));
  if (!std::isfinite(v_empty_) || !std::isfinite(v_full_)) {
    throw NumericError("value function returned a non-finite endpoint");
  }
}

double ValueFunction::operator()(const Coalition& c) const {
  ++*calls_;
  const double v = eval_(c);
  if (!std::isfinite(v)) throw NumericError("value function returned non-finite");
  return v;
}

// ---------------------------------------------------------------------------
// Exact enumeration.
// ---------------------------------------------------------------------------

std::vector<ShapleyEstimate> exact_shapley(const ValueFunction& vf) {
  const std::size_t n = vf.n_players();
  if (n == 0) return {};
  if (n > 20) {
    throw std::invalid_argument(
        "exact_shapley: player set too large for enumeration (max 20); "
        "use the Monte-Carlo estimator");
  }

  // One evaluation per subset, then the weighted marginal sums.
  const std::uint32_t total = 1u << n;
  std::vector<double> value(total);
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    Coalition c(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) c.add(i);
    }
    value[mask] = vf(c);
  }

  // weight(s) = s! (n-s-1)! / n!
  std::vector<double> weight(n);
  {
    std::vector<double> fact(n + 1, 1.0);
    for (std::size_t i = 1; i <= n; ++i) {
      fact[i] = fact[i - 1] * static_cast<double>(i);
    }
    for (std::size_t s = 0; s < n; ++s) {
      weight[s] = fact[s] * fact[n - 1 - s] / fact[n];
    }
  }

  std::vector<ShapleyEstimate> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double psi = 0.0;
    const std::uint32_t bit = 1u << i;
    for (std::uint32_t mask = 0; mask < total; ++mask) {
      if (mask & bit) continue;
      const std::size_t s = static_cast<std::size_t>(std::popcount(mask));
      psi += weight[s] * (value[mask | bit] - value[mask]);
    }
    out[i].psi = psi;
    out[i].samples_seen = static_cast<std::int64_t>(total / 2);
    out[i].m2 = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo permutation sampling with truncation.
// ---------------------------------------------------------------------------

namespace {

// Marginals of one permutation; evaluation happens only until truncation.
void run_permutation(const ValueFunction& vf, double threshold,
                     std::uint64_t perm_seed, std::vector<double>& marginal) {
  const std::size_t n = vf.n_players();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(perm_seed);
  rng.shuffle(order);

  std::fill(marginal.begin(), marginal.end(), 0.0);
  Coalition coalition(n);
  double prev = vf.v_empty();
  const double cutoff = threshold * vf.v_full();
  for (const std::size_t p : order) {
    coalition.add(p);
    const double v = vf(coalition);
    marginal[p] = v - prev;
    prev = v;
    if (v < cutoff) break;  // remaining players keep marginal 0
  }
}

}  // namespace

std::vector<ShapleyEstimate> mc_shapley(const ValueFunction& vf, std::size_t M,
                                        double truncation_threshold,
                                        std::uint64_t seed, int threads) {
  if (M == 0) throw std::invalid_argument("mc_shapley: M must be >= 1");
  if (truncation_threshold < 0.0 || truncation_threshold > 1.0) {
    throw std::invalid_argument("mc_shapley: threshold must lie in [0, 1]");
  }
  const std::size_t n = vf.n_players();
  std::vector<std::vector<double>> marginals(M, std::vector<double>(n, 0.0));

  const auto worker = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t m = lo; m < hi; ++m) {
      run_permutation(vf, truncation_threshold,
                      derive_seed(seed, "permutation", m), marginals[m]);
    }
  };

  if (threads <= 1 || M == 1) {
    worker(0, M);
  } else {
    const std::size_t k = std::min<std::size_t>(threads, M);
    std::vector<std::thread> pool;
    const std::size_t chunk = (M + k - 1) / k;
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t lo = t * chunk, hi = std::min(M, lo + chunk);
      if (lo < hi) pool.emplace_back(worker, lo, hi);
    }
    for (std::thread& th : pool) th.join();
  }

  // Reduce in permutation order: the estimate is independent of threading.
  std::vector<ShapleyEstimate> out(n);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t i = 0; i < n; ++i) out[i].observe(marginals[m][i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Update rules and stopping criterion.
// ---------------------------------------------------------------------------

namespace {
double l2_norm(const std::vector<double>& xs) {
  double s = 0.0;
  for (const double x : xs) s += x * x;
  return std::sqrt(s);
}
}  // namespace

void MomentumState::validate() const {
  if (beta < 0.0 || beta > 1.0) throw ConfigError("beta must lie in [0, 1]");
  if (beta + lambda != 1.0) throw ConfigError("beta + lambda must equal 1");
  if (xi <= 0.0) throw ConfigError("xi must be > 0");
}

void momentum_update(MomentumState& state, const std::vector<double>& psi) {
  state.validate();
  if (state.q.empty()) state.q.assign(psi.size(), 0.0);
  if (state.q.size() != psi.size()) {
    throw std::invalid_argument("momentum_update: size mismatch");
  }
  const double norm = l2_norm(psi);
  if (norm == 0.0) return;  // degenerate rule: q unchanged
  for (std::size_t i = 0; i < psi.size(); ++i) {
    state.q[i] = state.beta * state.q[i] + state.lambda * psi[i] / norm;
  }
}

void alpha_update(std::vector<double>& alpha, const MomentumState& state) {
  if (state.q.empty()) return;
  if (alpha.size() != state.q.size()) {
    throw std::invalid_argument("alpha_update: size mismatch");
  }
  const double norm = l2_norm(state.q);
  if (norm == 0.0) return;  // degenerate rule: alpha unchanged
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    alpha[i] += state.xi * state.q[i] / norm;
  }
}

bool ConvergenceMonitor::check(const std::vector<double>& psi_min_per_layer) {
  if (epsilon <= 0.0) throw ConfigError("epsilon must be > 0");
  double delta = 0.0;
  for (const double v : psi_min_per_layer) delta += scale * std::abs(v);
  history.push_back(delta);
  return delta < epsilon;
}

// ---------------------------------------------------------------------------
// Supernet value function.
// ---------------------------------------------------------------------------

double accuracy(const ComputeGraph& graph, const Tensor& inputs,
                const std::vector<int>& labels, std::size_t batch_size,
                const std::vector<SlotPair>* slot_override) {
  const std::size_t n = inputs.dim(0);
  if (n == 0 || labels.size() != n) {
    throw DataError("accuracy: empty or mismatched evaluation set");
  }
  const std::size_t sample = inputs.numel() / n;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    const std::size_t hi = std::min(lo + batch_size, n);
    std::vector<std::size_t> shape = inputs.shape();
    shape[0] = hi - lo;
    Tensor batch(shape,
                 std::vector<double>(inputs.vec().begin() + lo * sample,
                                     inputs.vec().begin() + hi * sample));
    const Tensor logits = graph.eval(batch, slot_override);
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < hi - lo; ++i) {
      const double* row = logits.data() + i * classes;
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (static_cast<int>(best) == labels[lo + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

ValueFunction make_value_function(const Supernet& supernet,
                                  const Tensor& val_inputs,
                                  const std::vector<int>& val_labels,
                                  const CostBudget& budget,
                                  std::size_t batch_size) {
  if (val_inputs.dim(0) == 0 || val_labels.empty()) {
    throw DataError("value function: empty validation set");
  }
  const std::size_t n = supernet.n_players();
  auto eval = [&supernet, &val_inputs, &val_labels, budget,
               batch_size](const Coalition& c) {
    const std::vector<SlotPair> slots = supernet.masked_slots(c);
    const double acc = accuracy(supernet.graph(), val_inputs, val_labels,
                                batch_size, &slots);
    double penalty = 0.0;
    if (budget.mu > 0.0 && !budget.unconstrained()) {
      double expected = 0.0;
      const auto bits = supernet.expected_bits(c);
      for (std::size_t l = 0; l < bits.size(); ++l) {
        expected += budget.layer_macs[l] * bits[l].first * bits[l].second;
      }
      penalty = budget.mu * std::max(0.0, expected / budget.omega0 - 1.0);
    }
    return acc - penalty;
  };
  return ValueFunction(n, std::move(eval));
}

void write_shapley_csv(const std::string& path, const Supernet& supernet,
                       const std::vector<ShapleyEstimate>& estimates,
                       const std::vector<std::string>& provenance) {
  if (estimates.size() != supernet.n_players()) {
    throw std::invalid_argument("write_shapley_csv: estimate count mismatch");
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  for (const std::string& line : provenance) os << "# " << line << "\n";
  os << "layer,kind,bit,psi,samples,variance\n";
  const auto& players = supernet.players();
  char buf[64];
  const auto fmt = [&buf](double v) {
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  for (std::size_t i = 0; i < players.size(); ++i) {
    os << players[i].layer << ','
       << (players[i].kind == EdgeKind::weight ? "weight" : "act") << ','
       << players[i].bit.bits() << ',' << fmt(estimates[i].psi) << ','
       << estimates[i].samples_seen << ',' << fmt(estimates[i].variance())
       << "\n";
  }
}

}  // namespace bitshapley
