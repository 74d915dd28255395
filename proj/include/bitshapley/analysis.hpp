#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitshapley/search.hpp"

namespace bitshapley {

/// Kendall rank correlation, tau-a convention:
///   tau = (concordant - discordant) / (n (n-1) / 2); ties contribute zero.
double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys);

struct RankedPolicySample {
  QuantPolicy policy;
  double score = 0;     // predictor: mean alpha over the selected players
  double accuracy = 0;  // measured after a brief fine-tune
};

struct CorrelationResult {
  double tau_smpq = 0;
  double tau_dmpq = 0;
  std::vector<RankedPolicySample> samples_smpq;
  std::vector<RankedPolicySample> samples_dmpq;
};

/// Samples k distinct policies per supernet (seeded), fine-tunes each for
/// cfg.epochs (accuracy averaged over three paired replicate fine-tunes),
/// and correlates the predictor score with measured accuracy.  Both
/// supernets must come out of completed searches.  Throws when the space
/// holds fewer than k distinct policies.
CorrelationResult correlation_experiment(const Supernet& supernet_smpq,
                                         const Supernet& supernet_dmpq,
                                         std::size_t k,
                                         const Dataset& train_data,
                                         const Dataset& val_data,
                                         const TrainConfig& cfg,
                                         std::uint64_t seed);

/// Mean alpha over the players a policy selects (the raw-alpha predictor).
double policy_score(const Supernet& supernet, const QuantPolicy& policy);

/// k distinct uniform policies over the candidate sets.
std::vector<QuantPolicy> sample_policies(const Supernet& supernet,
                                         std::size_t k, std::uint64_t seed);

struct PitfallRow {
  BitWidth bit;
  double alpha = 0;
  double accuracy = 0;  // discretization accuracy with this bit pinned
};

struct PitfallResult {
  std::vector<PitfallRow> rows;  // one per candidate on the probed edge
  double rank_agreement = 0;     // kendall tau between alpha and accuracy
};

/// For each candidate bit on the chosen edge: pin it (other edges follow the
/// searched policy), fine-tune briefly, and record accuracy next to the
/// edge's alpha.
PitfallResult pitfall_probe(const Supernet& supernet_dmpq,
                            const QuantPolicy& searched_policy, int layer,
                            EdgeKind kind, const Dataset& train_data,
                            const Dataset& val_data, const TrainConfig& cfg);

struct EdgeEdit {
  int layer = 0;
  EdgeKind kind = EdgeKind::weight;
  BitWidth bit;
};

struct InteractionResult {
  double acc_base = 0, acc_b1 = 0, acc_b2 = 0, acc_b3 = 0;
  double delta_b1 = 0, delta_b2 = 0, delta_b3 = 0;
  double interaction_gap = 0;  // delta_b3 - (delta_b1 + delta_b2)
};

/// Fine-tunes the base policy, both single-edit variants and the joint edit;
/// the interaction gap measures how far the joint effect sits from additive.
/// The two edits must touch distinct edges.
InteractionResult interaction_probe(const Supernet& supernet,
                                    const QuantPolicy& base_policy,
                                    const EdgeEdit& edit1, const EdgeEdit& edit2,
                                    const Dataset& train_data,
                                    const Dataset& val_data,
                                    const TrainConfig& cfg);

}  // namespace bitshapley
