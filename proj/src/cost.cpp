#include "bitshapley/cost.hpp"

#include <limits>
#include <stdexcept>

namespace bitshapley {

CostBudget CostBudget::from_graph(const ComputeGraph& graph, double omega0,
                                  double mu) {
  CostBudget b;
  b.omega0 = omega0;
  b.mu = mu;
  b.layer_macs = graph.quant_layer_macs();
  return b;
}

double layer_bops(double macs, BitWidth b_w, BitWidth b_a) {
  if (macs <= 0) throw std::invalid_argument("layer_bops: macs must be > 0");
  return macs * b_w.bits() * b_a.bits();
}

PolicyCost policy_bops(const QuantPolicy& policy, const CostBudget& budget) {
  PolicyCost out;
  double baseline = 0;
  for (const QuantPolicy::Entry& e : policy.entries) {
    if (static_cast<std::size_t>(e.layer) >= budget.layer_macs.size()) {
      throw std::invalid_argument("policy_bops: missing MAC count for layer " +
                                  std::to_string(e.layer));
    }
    const double macs = budget.layer_macs[e.layer];
    out.bops += layer_bops(macs, e.weight_bit, e.act_bit);
    baseline += layer_bops(macs, BitWidth(32), BitWidth(32));
  }
  out.compression_ratio = baseline / out.bops;
  return out;
}

BudgetedPolicy enforce_budget(const Supernet& supernet,
                              const CostBudget& budget) {
  BudgetedPolicy out;
  out.policy = supernet.discretize();

  // Current candidate index per edge, in edge order (layer-major, weight
  // then act).
  const auto& edges = supernet.edges();
  std::vector<int> idx(edges.size());
  for (std::size_t ei = 0; ei < edges.size(); ++ei) {
    const MixedEdge& e = edges[ei];
    const QuantPolicy::Entry& entry = out.policy.entries[e.layer];
    const BitWidth chosen =
        e.kind == EdgeKind::weight ? entry.weight_bit : entry.act_bit;
    for (std::size_t i = 0; i < e.candidates.size(); ++i) {
      if (e.candidates[i] == chosen) idx[ei] = static_cast<int>(i);
    }
  }

  const auto write_back = [&] {
    for (std::size_t ei = 0; ei < edges.size(); ++ei) {
      const MixedEdge& e = edges[ei];
      QuantPolicy::Entry& entry = out.policy.entries[e.layer];
      (e.kind == EdgeKind::weight ? entry.weight_bit : entry.act_bit) =
          e.candidates[idx[ei]];
    }
    const PolicyCost cost = policy_bops(out.policy, budget);
    out.bops = cost.bops;
    out.compression_ratio = cost.compression_ratio;
  };

  write_back();
  if (budget.unconstrained()) return out;

  while (out.bops > budget.omega0) {
    // Smallest alpha gap to the next-lower candidate wins the demotion.
    std::size_t best_edge = edges.size();
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t ei = 0; ei < edges.size(); ++ei) {
      if (idx[ei] == 0) continue;  // already at the minimum bit
      const MixedEdge& e = edges[ei];
      const double gap = e.alpha[idx[ei]] - e.alpha[idx[ei] - 1];
      if (gap < best_gap) {
        best_gap = gap;
        best_edge = ei;
      }
    }
    if (best_edge == edges.size()) {
      out.feasible = false;  // everything already minimal
      break;
    }
    --idx[best_edge];
    write_back();
  }
  return out;
}

}  // namespace bitshapley
