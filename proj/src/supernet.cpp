#include "bitshapley/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "bitshapley/errors.hpp"
#include "bitshapley/rng.hpp"

namespace bitshapley {

// ---------------------------------------------------------------------------
// SearchSpace.
// ---------------------------------------------------------------------------

namespace {

std::vector<BitWidth> bit_range(int lo, int hi) {
  std::vector<BitWidth> out;
  for (int b = lo; b <= hi; ++b) out.emplace_back(b);
  return out;
}

}  // namespace

void SearchSpace::validate() const {
  const auto check = [](const std::vector<BitWidth>& bits, const char* which) {
    if (bits.empty()) {
      throw std::invalid_argument(std::string("search space: empty ") + which +
                                  " candidate set");
    }
    for (std::size_t i = 1; i < bits.size(); ++i) {
      if (!(bits[i - 1] < bits[i])) {
        throw std::invalid_argument(
            std::string("search space: ") + which +
            " bits must be strictly ascending without duplicates");
      }
    }
  };
  check(weight_bits, "weight");
  check(act_bits, "activation");
}

SearchSpace SearchSpace::s1_table() { return {bit_range(2, 8), {BitWidth(4)}}; }
SearchSpace SearchSpace::s1_text() { return {bit_range(2, 8), {BitWidth(2)}}; }
SearchSpace SearchSpace::s2() { return {bit_range(1, 4), bit_range(2, 4)}; }
SearchSpace SearchSpace::s3() { return {bit_range(2, 8), bit_range(2, 8)}; }

SearchSpace SearchSpace::preset(const std::string& name) {
  if (name == "s1_table" || name == "s1") return s1_table();
  if (name == "s1_text") return s1_text();
  if (name == "s2") return s2();
  if (name == "s3") return s3();
  throw ConfigError("unknown search-space preset: " + name);
}

std::string count_configurations(std::uint64_t n_choices, std::size_t layers) {
  if (n_choices == 0) return "0";
  // Base-1e9 little-endian limbs; multiply-by-small is all a census needs.
  std::vector<std::uint64_t> limbs{1};
  const std::uint64_t kBase = 1000000000ULL;
  for (std::size_t l = 0; l < layers; ++l) {
    std::uint64_t carry = 0;
    for (std::uint64_t& limb : limbs) {
      const std::uint64_t v = limb * n_choices + carry;
      limb = v % kBase;
      carry = v / kBase;
    }
    while (carry) {
      limbs.push_back(carry % kBase);
      carry /= kBase;
    }
  }
  std::string out = std::to_string(limbs.back());
  for (std::size_t i = limbs.size() - 1; i-- > 0;) {
    std::string part = std::to_string(limbs[i]);
    out += std::string(9 - part.size(), '0') + part;
  }
  return out;
}

std::string SearchSpace::config_count(std::size_t layers) const {
  validate();
  return count_configurations(
      static_cast<std::uint64_t>(n_w()) * static_cast<std::uint64_t>(n_a()),
      layers);
}

std::vector<double> softmax(const std::vector<double>& xs) {
  double m = xs.front();
  for (const double x : xs) m = std::max(m, x);
  std::vector<double> out(xs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = std::exp(xs[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// Supernet.
// ---------------------------------------------------------------------------

Supernet::Supernet(ComputeGraph graph, const SearchSpace& space)
    : graph_(std::move(graph)), space_(space) {
  space_.validate();
  const int n_layers = graph_.n_quant();
  if (n_layers == 0) {
    throw std::invalid_argument("supernet: graph has no quantizable layers");
  }
  for (int l = 0; l < n_layers; ++l) {
    for (const EdgeKind kind : {EdgeKind::weight, EdgeKind::act}) {
      MixedEdge e;
      e.layer = l;
      e.kind = kind;
      e.candidates =
          kind == EdgeKind::weight ? space_.weight_bits : space_.act_bits;
      e.alpha.assign(e.candidates.size(), 0.0);
      e.states.assign(e.candidates.size(), QuantizerState{});
      edge_offset_.push_back(players_.size());
      for (const BitWidth b : e.candidates) {
        players_.push_back({l, kind, b});
      }
      edges_.push_back(std::move(e));
    }
  }
}

std::size_t Supernet::player_id(int layer, EdgeKind kind, BitWidth bit) const {
  const MixedEdge& e = edge(layer, kind);
  const std::size_t ei =
      static_cast<std::size_t>(layer) * 2 + (kind == EdgeKind::act ? 1 : 0);
  for (std::size_t i = 0; i < e.candidates.size(); ++i) {
    if (e.candidates[i] == bit) return edge_offset_[ei] + i;
  }
  throw std::invalid_argument("player_id: bit not in candidate set");
}

MixedEdge& Supernet::edge(int layer, EdgeKind kind) {
  return edges_.at(static_cast<std::size_t>(layer) * 2 +
                   (kind == EdgeKind::act ? 1 : 0));
}

const MixedEdge& Supernet::edge(int layer, EdgeKind kind) const {
  return edges_.at(static_cast<std::size_t>(layer) * 2 +
                   (kind == EdgeKind::act ? 1 : 0));
}

std::vector<double> Supernet::alpha_flat() const {
  std::vector<double> out;
  out.reserve(players_.size());
  for (const MixedEdge& e : edges_) {
    out.insert(out.end(), e.alpha.begin(), e.alpha.end());
  }
  return out;
}

void Supernet::set_alpha_flat(const std::vector<double>& alpha) {
  if (alpha.size() != players_.size()) {
    throw std::invalid_argument("set_alpha_flat: size mismatch");
  }
  std::size_t k = 0;
  for (MixedEdge& e : edges_) {
    for (double& a : e.alpha) a = alpha[k++];
  }
}

std::uint64_t Supernet::alpha_digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const MixedEdge& e : edges_) {
    for (const double v : e.alpha) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

void Supernet::calibrate(const Tensor& inputs, std::size_t batch_size,
                         std::size_t max_batches) {
  const std::size_t n = inputs.dim(0);
  const std::size_t sample = inputs.numel() / n;
  std::vector<std::vector<Tensor>> streams(graph_.n_quant());

  const std::size_t batches =
      std::min(max_batches, (n + batch_size - 1) / batch_size);
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t lo = b * batch_size;
    const std::size_t hi = std::min(lo + batch_size, n);
    if (lo >= hi) break;
    std::vector<std::size_t> shape = inputs.shape();
    shape[0] = hi - lo;
    Tensor batch(shape, std::vector<double>(
                            inputs.vec().begin() + lo * sample,
                            inputs.vec().begin() + hi * sample));
    Workspace ws;
    // full-precision pass regardless of the currently installed slots
    const std::vector<SlotPair> off(graph_.n_quant());
    graph_.forward_ws(batch, ws, &off);
    for (std::size_t li = 0; li < graph_.n_layers(); ++li) {
      int qidx = -1;
      if (const auto* d = std::get_if<Dense>(&graph_.layer(li))) {
        qidx = d->quant_idx;
      } else if (const auto* c = std::get_if<Conv2d>(&graph_.layer(li))) {
        qidx = c->quant_idx;
      }
      if (qidx >= 0) streams[qidx].push_back(ws.caches[li].input);
    }
  }
  for (int l = 0; l < graph_.n_quant(); ++l) {
    const QuantizerState qs = calibrate_clip(streams[l]);
    for (QuantizerState& s : edge(l, EdgeKind::act).states) s = qs;
  }
}

void Supernet::plant_noise_branch(int layer, EdgeKind kind,
                                  int candidate_index, std::uint64_t seed) {
  MixedEdge& e = edge(layer, kind);
  if (candidate_index < 0 ||
      candidate_index >= static_cast<int>(e.candidates.size())) {
    throw std::invalid_argument("plant_noise_branch: bad candidate index");
  }
  e.noise_candidate = candidate_index;
  e.noise_seed = seed;
}

namespace {

void check_alpha_finite(const std::vector<MixedEdge>& edges) {
  for (const MixedEdge& e : edges) {
    for (const double a : e.alpha) {
      if (!std::isfinite(a)) throw NumericError("non-finite alpha value");
    }
  }
}

QuantSlot edge_slot(const MixedEdge& e, std::vector<double> mix) {
  QuantSlot s;
  s.mode = SlotMode::mixture;
  s.bits = e.candidates;
  s.mix = std::move(mix);
  s.qs = e.states.front();
  s.noise_candidate = e.noise_candidate;
  s.noise_seed = e.noise_seed;
  return s;
}

}  // namespace

std::vector<SlotPair> Supernet::mixture_slots() const {
  check_alpha_finite(edges_);
  std::vector<SlotPair> slots(graph_.n_quant());
  for (int l = 0; l < graph_.n_quant(); ++l) {
    slots[l].weight =
        edge_slot(edge(l, EdgeKind::weight), softmax(edge(l, EdgeKind::weight).alpha));
    slots[l].act =
        edge_slot(edge(l, EdgeKind::act), softmax(edge(l, EdgeKind::act).alpha));
  }
  return slots;
}

std::vector<SlotPair> Supernet::masked_slots(const Coalition& coalition) const {
  if (coalition.n_players() != players_.size()) {
    throw std::invalid_argument("coalition sized for a different player set");
  }
  std::vector<SlotPair> slots(graph_.n_quant());
  std::size_t pid = 0;
  for (std::size_t ei = 0; ei < edges_.size(); ++ei) {
    const MixedEdge& e = edges_[ei];
    std::vector<BitWidth> present_bits;
    std::vector<int> present_idx;
    for (std::size_t i = 0; i < e.candidates.size(); ++i, ++pid) {
      if (coalition.contains(pid)) {
        present_bits.push_back(e.candidates[i]);
        present_idx.push_back(static_cast<int>(i));
      }
    }
    QuantSlot slot;
    if (present_bits.empty()) {
      slot = QuantSlot::off_slot();  // full-precision fallback
    } else {
      slot.mode = SlotMode::mixture;
      slot.bits = std::move(present_bits);
      slot.mix.assign(slot.bits.size(), 1.0 / static_cast<double>(slot.bits.size()));
      slot.qs = e.states.front();
      for (std::size_t i = 0; i < present_idx.size(); ++i) {
        if (present_idx[i] == e.noise_candidate) {
          slot.noise_candidate = static_cast<int>(i);
          slot.noise_seed = e.noise_seed;
        }
      }
    }
    SlotPair& pair = slots[e.layer];
    (e.kind == EdgeKind::weight ? pair.weight : pair.act) = std::move(slot);
  }
  return slots;
}

void Supernet::sync_mixture_slots() {
  const std::vector<SlotPair> slots = mixture_slots();
  for (int l = 0; l < graph_.n_quant(); ++l) graph_.slot(l) = slots[l];
}

Tensor Supernet::mixture_forward(const Tensor& batch) {
  sync_mixture_slots();
  return graph_.forward(batch);
}

Tensor Supernet::mixture_eval(const Tensor& batch) const {
  const std::vector<SlotPair> slots = mixture_slots();
  return graph_.eval(batch, &slots);
}

Tensor Supernet::masked_forward(const Tensor& batch,
                                const Coalition& coalition) const {
  const std::vector<SlotPair> slots = masked_slots(coalition);
  return graph_.eval(batch, &slots);
}

QuantPolicy Supernet::discretize() const {
  check_alpha_finite(edges_);
  QuantPolicy policy;
  policy.entries.resize(graph_.n_quant());
  for (int l = 0; l < graph_.n_quant(); ++l) {
    policy.entries[l].layer = l;
    for (const EdgeKind kind : {EdgeKind::weight, EdgeKind::act}) {
      const MixedEdge& e = edge(l, kind);
      std::size_t best = 0;
      for (std::size_t i = 1; i < e.alpha.size(); ++i) {
        if (e.alpha[i] > e.alpha[best]) best = i;  // ties keep the lower bit
      }
      (kind == EdgeKind::weight ? policy.entries[l].weight_bit
                                : policy.entries[l].act_bit) =
          e.candidates[best];
    }
  }
  return policy;
}

std::vector<std::pair<double, double>> Supernet::expected_bits(
    const Coalition& coalition) const {
  if (coalition.n_players() != players_.size()) {
    throw std::invalid_argument("coalition sized for a different player set");
  }
  std::vector<std::pair<double, double>> out(graph_.n_quant(), {32.0, 32.0});
  std::size_t pid = 0;
  for (const MixedEdge& e : edges_) {
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < e.candidates.size(); ++i, ++pid) {
      if (coalition.contains(pid)) {
        sum += e.candidates[i].bits();
        ++count;
      }
    }
    const double mean = count == 0 ? 32.0 : sum / count;
    (e.kind == EdgeKind::weight ? out[e.layer].first : out[e.layer].second) =
        mean;
  }
  return out;
}

bool Supernet::policy_uses_noise(const QuantPolicy& policy) const {
  for (const QuantPolicy::Entry& entry : policy.entries) {
    for (const EdgeKind kind : {EdgeKind::weight, EdgeKind::act}) {
      const MixedEdge& e = edge(entry.layer, kind);
      if (e.noise_candidate < 0) continue;
      const BitWidth chosen =
          kind == EdgeKind::weight ? entry.weight_bit : entry.act_bit;
      if (e.candidates[e.noise_candidate] == chosen) return true;
    }
  }
  return false;
}

std::vector<std::pair<std::string, Tensor>> Supernet::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out = graph_.named_tensors();
  for (const MixedEdge& e : edges_) {
    const std::string name =
        "alpha.layer" + std::to_string(e.layer) +
        (e.kind == EdgeKind::weight ? ".weight" : ".act");
    out.emplace_back(name, Tensor({e.alpha.size()}, e.alpha));
    std::vector<double> clips;
    for (const QuantizerState& s : e.states) clips.push_back(s.clip_max);
    out.emplace_back(name + ".clip", Tensor({clips.size()}, clips));
  }
  return out;
}

void Supernet::load_named_tensors(
    const std::vector<std::pair<std::string, Tensor>>& entries) {
  graph_.load_named_tensors(entries);
  for (MixedEdge& e : edges_) {
    const std::string name =
        "alpha.layer" + std::to_string(e.layer) +
        (e.kind == EdgeKind::weight ? ".weight" : ".act");
    bool found_alpha = false, found_clip = false;
    for (const auto& [key, value] : entries) {
      if (key == name) {
        if (value.numel() != e.alpha.size()) {
          throw DataError("checkpoint mismatch: alpha size differs for " + name);
        }
        e.alpha = value.vec();
        found_alpha = true;
      } else if (key == name + ".clip") {
        if (value.numel() != e.states.size()) {
          throw DataError("checkpoint mismatch: clip size differs for " + name);
        }
        for (std::size_t i = 0; i < e.states.size(); ++i) {
          e.states[i].clip_max = value[i];
        }
        found_clip = true;
      }
    }
    if (!found_alpha || !found_clip) {
      throw DataError("checkpoint mismatch: missing edge state " + name);
    }
  }
}

// ---------------------------------------------------------------------------
// Policies.
// ---------------------------------------------------------------------------

ComputeGraph apply_policy(const Supernet& supernet, const QuantPolicy& policy) {
  if (policy.entries.size() != static_cast<std::size_t>(supernet.n_layers())) {
    throw std::invalid_argument("policy does not cover all quantizable layers");
  }
  ComputeGraph g = supernet.graph();
  for (const QuantPolicy::Entry& entry : policy.entries) {
    const MixedEdge& we = supernet.edge(entry.layer, EdgeKind::weight);
    const MixedEdge& ae = supernet.edge(entry.layer, EdgeKind::act);
    const auto index_of = [](const MixedEdge& e, BitWidth b) {
      for (std::size_t i = 0; i < e.candidates.size(); ++i) {
        if (e.candidates[i] == b) return static_cast<int>(i);
      }
      throw std::invalid_argument(
          "policy bit " + std::to_string(b.bits()) +
          " not in candidate set of layer " + std::to_string(e.layer));
    };
    const int wi = index_of(we, entry.weight_bit);
    const int ai = index_of(ae, entry.act_bit);
    SlotPair& pair = g.slot(entry.layer);
    pair.weight = QuantSlot::fixed(entry.weight_bit, we.states[wi],
                                   we.noise_candidate == wi, we.noise_seed);
    pair.act = QuantSlot::fixed(entry.act_bit, ae.states[ai],
                                ae.noise_candidate == ai, ae.noise_seed);
  }
  return g;
}

ComputeGraph apply_policy(const ComputeGraph& graph, const QuantPolicy& policy,
                          const std::vector<QuantizerState>& act_states) {
  if (policy.entries.size() != static_cast<std::size_t>(graph.n_quant()) ||
      act_states.size() != policy.entries.size()) {
    throw std::invalid_argument("policy does not cover all quantizable layers");
  }
  ComputeGraph g = graph;
  for (const QuantPolicy::Entry& entry : policy.entries) {
    SlotPair& pair = g.slot(entry.layer);
    pair.weight = QuantSlot::fixed(entry.weight_bit);
    pair.act = QuantSlot::fixed(entry.act_bit, act_states[entry.layer]);
  }
  return g;
}

}  // namespace bitshapley
