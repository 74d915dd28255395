#pragma once

#include <string>
#include <vector>

#include "bitshapley/config.hpp"
#include "bitshapley/cost.hpp"
#include "bitshapley/search.hpp"
#include "bitshapley/supernet.hpp"

namespace bitshapley {

/// "key = value" lines of the resolved config; every text artifact embeds
/// them as provenance.
std::vector<std::string> provenance_lines(const RunConfig& cfg);

void write_text_file(const std::string& path,
                     const std::vector<std::string>& lines);

/// Policy JSON schema:
///   {"layers": [{"index", "weight_bits", "act_bits"}...],
///    "search_space": {"weight_bits": [...], "act_bits": [...]},
///    "seed": ..., "bops": ..., "compression_ratio": ..., "feasible": ...,
///    "config": {...}}
void write_policy_json(const std::string& path, const BudgetedPolicy& policy,
                       const SearchSpace& space, const RunConfig& cfg);

QuantPolicy read_policy_json(const std::string& path);

/// Deterministic trajectory CSV (iteration, train_loss, val_accuracy,
/// delta_psi, alpha_digest).  Wall times go to a separate timing CSV because
/// they vary across byte-identical runs.
void write_trajectory_csv(const std::string& path,
                          const SearchTrajectory& trajectory,
                          const std::vector<std::string>& provenance);

void write_timing_csv(const std::string& path,
                      const SearchTrajectory& trajectory,
                      const std::vector<std::string>& provenance);

/// Full search-run emission into `dir`: config.resolved, policy.json,
/// trajectory.csv, timing.csv, checkpoint.bshp and per-round Shapley dumps.
void write_search_artifacts(const std::string& dir, const RunConfig& cfg,
                            const Supernet& supernet,
                            const SearchResult& result);

/// Rebuilds the supernet of a prior search run from dir/config.resolved and
/// dir/checkpoint.bshp.
struct RestoredRun {
  RunConfig config;
  Supernet supernet;
  BudgetedPolicy policy;  // bops/ratio recomputed from the stored policy
};
RestoredRun restore_run(const std::string& dir);

std::string shortest_double(double v);

}  // namespace bitshapley
