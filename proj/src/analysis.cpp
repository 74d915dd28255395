#include "bitshapley/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "bitshapley/errors.hpp"
#include "bitshapley/rng.hpp"

namespace bitshapley {

double kendall_tau(const std::vector<double>& xs,
                   const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw std::invalid_argument("kendall_tau: length mismatch");
  }
  const std::size_t n = xs.size();
  if (n < 2) throw std::invalid_argument("kendall_tau: need at least 2 points");
  long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = (xs[i] - xs[j]) * (ys[i] - ys[j]);
      if (s > 0) ++concordant;
      if (s < 0) ++discordant;
    }
  }
  return static_cast<double>(concordant - discordant) /
         (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double policy_score(const Supernet& supernet, const QuantPolicy& policy) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const QuantPolicy::Entry& entry : policy.entries) {
    for (const EdgeKind kind : {EdgeKind::weight, EdgeKind::act}) {
      const MixedEdge& e = supernet.edge(entry.layer, kind);
      const BitWidth chosen =
          kind == EdgeKind::weight ? entry.weight_bit : entry.act_bit;
      for (std::size_t i = 0; i < e.candidates.size(); ++i) {
        if (e.candidates[i] == chosen) {
          sum += e.alpha[i];
          ++count;
        }
      }
    }
  }
  return sum / static_cast<double>(count);
}

std::vector<QuantPolicy> sample_policies(const Supernet& supernet,
                                         std::size_t k, std::uint64_t seed) {
  // Distinct-policy capacity of the space.
  double capacity = 1.0;
  for (const MixedEdge& e : supernet.edges()) {
    capacity *= static_cast<double>(e.candidates.size());
  }
  if (capacity < static_cast<double>(k)) {
    throw ConfigError("fewer than k distinct policies available in the space");
  }

  Rng rng(derive_seed(seed, "policy.sample"));
  std::vector<QuantPolicy> out;
  std::set<std::vector<int>> seen;
  while (out.size() < k) {
    QuantPolicy p;
    std::vector<int> key;
    p.entries.resize(supernet.n_layers());
    for (int l = 0; l < supernet.n_layers(); ++l) {
      p.entries[l].layer = l;
      const MixedEdge& we = supernet.edge(l, EdgeKind::weight);
      const MixedEdge& ae = supernet.edge(l, EdgeKind::act);
      const int wi = static_cast<int>(rng.below(we.candidates.size()));
      const int ai = static_cast<int>(rng.below(ae.candidates.size()));
      p.entries[l].weight_bit = we.candidates[wi];
      p.entries[l].act_bit = ae.candidates[ai];
      key.push_back(wi);
      key.push_back(ai);
    }
    if (seen.insert(key).second) out.push_back(std::move(p));
  }
  return out;
}

namespace {

std::vector<RankedPolicySample> rank_policies(const Supernet& supernet,
                                              std::size_t k,
                                              const Dataset& train_data,
                                              const Dataset& val_data,
                                              const TrainConfig& cfg,
                                              std::uint64_t seed) {
  const CostBudget budget = CostBudget::from_graph(supernet.graph());
  std::vector<RankedPolicySample> out;
  // Measured accuracy averages three paired replicate fine-tunes: every
  // policy sees the same replicate seeds, so score differences are not
  // confounded with shuffling noise.
  constexpr int kReplicates = 3;
  for (const QuantPolicy& policy : sample_policies(supernet, k, seed)) {
    RankedPolicySample s;
    s.policy = policy;
    s.score = policy_score(supernet, policy);
    double acc = 0.0;
    for (int r = 0; r < kReplicates; ++r) {
      TrainConfig tuned = cfg;
      tuned.seed = derive_seed(seed, "correlation.replicate", r);
      acc += finetune(supernet, policy, train_data, val_data, tuned, budget)
                 .val_accuracy;
    }
    s.accuracy = acc / kReplicates;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

CorrelationResult correlation_experiment(const Supernet& supernet_smpq,
                                         const Supernet& supernet_dmpq,
                                         std::size_t k,
                                         const Dataset& train_data,
                                         const Dataset& val_data,
                                         const TrainConfig& cfg,
                                         std::uint64_t seed) {
  if (k < 5) throw ConfigError("correlation_experiment: k must be >= 5");
  CorrelationResult result;
  result.samples_smpq = rank_policies(supernet_smpq, k, train_data, val_data,
                                      cfg, derive_seed(seed, "corr.smpq"));
  result.samples_dmpq = rank_policies(supernet_dmpq, k, train_data, val_data,
                                      cfg, derive_seed(seed, "corr.dmpq"));
  const auto tau = [](const std::vector<RankedPolicySample>& samples) {
    std::vector<double> scores, accs;
    for (const RankedPolicySample& s : samples) {
      scores.push_back(s.score);
      accs.push_back(s.accuracy);
    }
    return kendall_tau(scores, accs);
  };
  result.tau_smpq = tau(result.samples_smpq);
  result.tau_dmpq = tau(result.samples_dmpq);
  return result;
}

PitfallResult pitfall_probe(const Supernet& supernet_dmpq,
                            const QuantPolicy& searched_policy, int layer,
                            EdgeKind kind, const Dataset& train_data,
                            const Dataset& val_data, const TrainConfig& cfg) {
  if (layer < 0 || layer >= supernet_dmpq.n_layers()) {
    throw ConfigError("pitfall_probe: invalid edge index");
  }
  const MixedEdge& e = supernet_dmpq.edge(layer, kind);
  const CostBudget budget = CostBudget::from_graph(supernet_dmpq.graph());

  PitfallResult result;
  TrainConfig tuned = cfg;  // paired: one seed across all pinned variants
  tuned.seed = derive_seed(cfg.seed, "pitfall.finetune");
  for (std::size_t i = 0; i < e.candidates.size(); ++i) {
    QuantPolicy pinned = searched_policy;
    QuantPolicy::Entry& entry = pinned.entries.at(layer);
    (kind == EdgeKind::weight ? entry.weight_bit : entry.act_bit) =
        e.candidates[i];
    PitfallRow row{e.candidates[i], e.alpha[i],
                   finetune(supernet_dmpq, pinned, train_data, val_data, tuned,
                            budget)
                       .val_accuracy};
    result.rows.push_back(row);
  }
  if (result.rows.size() >= 2) {
    std::vector<double> alphas, accs;
    for (const PitfallRow& r : result.rows) {
      alphas.push_back(r.alpha);
      accs.push_back(r.accuracy);
    }
    result.rank_agreement = kendall_tau(alphas, accs);
  } else {
    result.rank_agreement = 1.0;  // single candidate: trivially consistent
  }
  return result;
}

InteractionResult interaction_probe(const Supernet& supernet,
                                    const QuantPolicy& base_policy,
                                    const EdgeEdit& edit1, const EdgeEdit& edit2,
                                    const Dataset& train_data,
                                    const Dataset& val_data,
                                    const TrainConfig& cfg) {
  if (edit1.layer == edit2.layer && edit1.kind == edit2.kind) {
    throw ConfigError("interaction_probe: edits must touch distinct edges");
  }
  const CostBudget budget = CostBudget::from_graph(supernet.graph());
  const auto apply_edit = [](QuantPolicy policy, const EdgeEdit& edit) {
    QuantPolicy::Entry& entry = policy.entries.at(edit.layer);
    (edit.kind == EdgeKind::weight ? entry.weight_bit : entry.act_bit) =
        edit.bit;
    return policy;
  };

  const QuantPolicy b1 = apply_edit(base_policy, edit1);
  const QuantPolicy b2 = apply_edit(base_policy, edit2);
  const QuantPolicy b3 = apply_edit(b1, edit2);

  InteractionResult r;
  TrainConfig tuned = cfg;  // paired: identical policies give identical runs
  tuned.seed = derive_seed(cfg.seed, "interaction.finetune");
  const auto run = [&](const QuantPolicy& p) {
    return finetune(supernet, p, train_data, val_data, tuned, budget)
        .val_accuracy;
  };
  r.acc_base = run(base_policy);
  r.acc_b1 = run(b1);
  r.acc_b2 = run(b2);
  r.acc_b3 = run(b3);
  r.delta_b1 = r.acc_b1 - r.acc_base;
  r.delta_b2 = r.acc_b2 - r.acc_base;
  r.delta_b3 = r.acc_b3 - r.acc_base;
  r.interaction_gap = r.delta_b3 - (r.delta_b1 + r.delta_b2);
  return r;
}

}  // namespace bitshapley
