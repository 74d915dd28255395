#pragma once

#include <vector>

#include "bitshapley/supernet.hpp"

namespace bitshapley {

/// BOPs accounting for a policy against the budget Omega0.
struct CostBudget {
  double omega0 = 0;            // BOPs budget; <= 0 means unconstrained
  double mu = 1.0;              // soft-penalty coefficient in the value function
  std::vector<double> layer_macs;

  bool unconstrained() const { return omega0 <= 0; }
  static CostBudget from_graph(const ComputeGraph& graph, double omega0 = 0,
                               double mu = 1.0);
};

/// Bit operations of one layer: macs * b_w * b_a.
double layer_bops(double macs, BitWidth b_w, BitWidth b_a);

struct PolicyCost {
  double bops = 0;
  double compression_ratio = 1.0;  // vs the 32/32 baseline
};

/// Total BOPs of a policy plus its compression ratio.  Throws if a layer has
/// no MAC count.
PolicyCost policy_bops(const QuantPolicy& policy, const CostBudget& budget);

struct BudgetedPolicy {
  QuantPolicy policy;
  double bops = 0;
  double compression_ratio = 1.0;
  bool feasible = true;  // false: budget unreachable even at minimum bits
};

/// Winner-take-all policy repaired to the budget: while over Omega0, demote
/// the edge whose alpha gap between the current and the next-lower candidate
/// bit is smallest.  If even all-minimum bits violate the budget the minimal
/// policy is returned with feasible = false.
BudgetedPolicy enforce_budget(const Supernet& supernet,
                              const CostBudget& budget);

}  // namespace bitshapley
