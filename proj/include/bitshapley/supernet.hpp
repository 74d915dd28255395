#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitshapley/graph.hpp"
#include "bitshapley/quantize.hpp"

namespace bitshapley {

// ---------------------------------------------------------------------------
// Search space.
// ---------------------------------------------------------------------------

/// Per-layer candidate bit-width sets for weights and activations.  Sets are
/// non-empty, strictly ascending, duplicate-free.
struct SearchSpace {
  std::vector<BitWidth> weight_bits;
  std::vector<BitWidth> act_bits;

  void validate() const;

  std::size_t n_w() const { return weight_bits.size(); }
  std::size_t n_a() const { return act_bits.size(); }

  // Named presets.  s1 ships in two flavors because its activation set is
  // stated differently in two places; experiments name which one they use.
  static SearchSpace s1_table();  // weights {2..8}, activations {4}
  static SearchSpace s1_text();   // weights {2..8}, activations {2}
  static SearchSpace s2();        // weights {1,2,3,4}, activations {2,3,4}
  static SearchSpace s3();        // weights {2..8}, activations {2..8}
  static SearchSpace preset(const std::string& name);

  /// Exact count of discrete configurations for `layers` layers, i.e.
  /// (n_w * n_a)^layers, as a decimal string (big integer).
  std::string config_count(std::size_t layers) const;
};

/// Exact (n_choices)^layers as a decimal string.  Small dedicated counter;
/// the configuration census is the only big-integer arithmetic in the tree.
std::string count_configurations(std::uint64_t n_choices, std::size_t layers);

// ---------------------------------------------------------------------------
// Players, coalitions, policies.
// ---------------------------------------------------------------------------

enum class EdgeKind { weight, act };

/// One (edge, bit-width) pair of the cooperative game.
struct Player {
  int layer = 0;
  EdgeKind kind = EdgeKind::weight;
  BitWidth bit;
};

/// Subset of the player set, stored as a membership mask over player ids.
class Coalition {
 public:
  Coalition() = default;
  explicit Coalition(std::size_t n_players) : mask_(n_players, 0) {}

  static Coalition full(std::size_t n_players) {
    Coalition c(n_players);
    std::fill(c.mask_.begin(), c.mask_.end(), 1);
    c.count_ = n_players;
    return c;
  }

  std::size_t n_players() const { return mask_.size(); }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  bool contains(std::size_t id) const { return mask_[id] != 0; }

  void add(std::size_t id) {
    if (!mask_[id]) {
      mask_[id] = 1;
      ++count_;
    }
  }
  void remove(std::size_t id) {
    if (mask_[id]) {
      mask_[id] = 0;
      --count_;
    }
  }

  std::vector<std::size_t> members() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask_.size(); ++i) {
      if (mask_[i]) out.push_back(i);
    }
    return out;
  }

 private:
  std::vector<std::uint8_t> mask_;
  std::size_t count_ = 0;
};

/// One (weight bit, activation bit) pair per quantizable layer.
struct QuantPolicy {
  struct Entry {
    int layer = 0;
    BitWidth weight_bit;
    BitWidth act_bit;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;

  bool operator==(const QuantPolicy&) const = default;
};

// ---------------------------------------------------------------------------
// Supernet: the layer-wise search space over a shared-weight graph.
// ---------------------------------------------------------------------------

struct MixedEdge {
  int layer = 0;
  EdgeKind kind = EdgeKind::weight;
  std::vector<BitWidth> candidates;
  std::vector<double> alpha;            // contribution weights, start at 0
  std::vector<QuantizerState> states;   // per candidate
  int noise_candidate = -1;
  std::uint64_t noise_seed = 0;
};

class Supernet {
 public:
  /// Every quantizable layer gains one weight edge and one activation edge
  /// with alpha initialized to zero; all candidates share the underlying
  /// layer weights.  Throws on an empty candidate set.
  Supernet(ComputeGraph graph, const SearchSpace& space);

  ComputeGraph& graph() { return graph_; }
  const ComputeGraph& graph() const { return graph_; }
  const SearchSpace& space() const { return space_; }

  int n_layers() const { return graph_.n_quant(); }
  std::size_t n_players() const { return players_.size(); }
  const std::vector<Player>& players() const { return players_; }
  std::size_t player_id(int layer, EdgeKind kind, BitWidth bit) const;

  std::vector<MixedEdge>& edges() { return edges_; }
  const std::vector<MixedEdge>& edges() const { return edges_; }
  MixedEdge& edge(int layer, EdgeKind kind);
  const MixedEdge& edge(int layer, EdgeKind kind) const;

  /// Flat alpha vector in player-id order, and its inverse.
  std::vector<double> alpha_flat() const;
  void set_alpha_flat(const std::vector<double>& alpha);
  std::uint64_t alpha_digest() const;

  /// Estimates the activation clip ranges from full-precision forward passes
  /// over up to `max_batches` batches of `inputs`.
  void calibrate(const Tensor& inputs, std::size_t batch_size,
                 std::size_t max_batches);

  /// Replaces candidate branch (layer, kind, index) by a deterministic noise
  /// emitter seeded with `seed` (planted-branch experiments).
  void plant_noise_branch(int layer, EdgeKind kind, int candidate_index,
                          std::uint64_t seed);

  /// Installs softmax(alpha) mixtures into the graph slots, then runs the
  /// training forward.  Mixture weights on each edge sum to 1.
  Tensor mixture_forward(const Tensor& batch);

  /// Read-only softmax-mixture evaluation (no caches kept).
  Tensor mixture_eval(const Tensor& batch) const;

  /// Read-only coalition-masked evaluation: on each edge only candidates in
  /// the coalition participate, mixed uniformly; an edge with no present
  /// candidate falls back to full precision.  Thread-safe.
  Tensor masked_forward(const Tensor& batch, const Coalition& coalition) const;

  /// Mixture slots for the graph in the given mode, usable as an eval
  /// override.
  std::vector<SlotPair> mixture_slots() const;
  std::vector<SlotPair> masked_slots(const Coalition& coalition) const;

  /// Pushes mixture slots into the stored graph (training path).
  void sync_mixture_slots();

  /// Winner-take-all: the candidate with maximal alpha per edge; ties break
  /// toward the lower bit-width.
  QuantPolicy discretize() const;

  /// Mean candidate bit per edge under the coalition mask (empty edge counts
  /// as full precision), one (weight, act) pair per layer.  Feeds the
  /// expected-cost penalty of the value function.
  std::vector<std::pair<double, double>> expected_bits(
      const Coalition& coalition) const;

  /// True if the policy selects a planted noise candidate anywhere.
  bool policy_uses_noise(const QuantPolicy& policy) const;

  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  void load_named_tensors(
      const std::vector<std::pair<std::string, Tensor>>& entries);

 private:
  ComputeGraph graph_;
  SearchSpace space_;
  std::vector<MixedEdge> edges_;    // [layer0.weight, layer0.act, layer1...]
  std::vector<Player> players_;     // player id order
  std::vector<std::size_t> edge_offset_;  // first player id per edge
};

/// Fixed-precision graph with the policy's bit-widths pinned and weights
/// inherited from the supernet's shared graph.  Throws if a policy bit is
/// not in the layer's candidate set.
ComputeGraph apply_policy(const Supernet& supernet, const QuantPolicy& policy);

/// Same, against a bare graph (candidate-set checks skipped).
ComputeGraph apply_policy(const ComputeGraph& graph, const QuantPolicy& policy,
                          const std::vector<QuantizerState>& act_states);

std::vector<double> softmax(const std::vector<double>& xs);

}  // namespace bitshapley
