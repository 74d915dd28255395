#include "bitshapley/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bitshapley/checkpoint.hpp"
#include "bitshapley/errors.hpp"

namespace bitshapley {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string shortest_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> provenance_lines(const RunConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& [key, value] : cfg.resolved()) {
    out.push_back(key + " = " + value);
  }
  return out;
}

void write_text_file(const std::string& path,
                     const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  for (const std::string& line : lines) os << line << "\n";
}

namespace {

ordered_json config_json(const RunConfig& cfg) {
  ordered_json j;
  for (const auto& [key, value] : cfg.resolved()) j[key] = value;
  return j;
}

ordered_json bits_json(const std::vector<BitWidth>& bits) {
  ordered_json arr = ordered_json::array();
  for (const BitWidth b : bits) arr.push_back(b.bits());
  return arr;
}

}  // namespace

void write_policy_json(const std::string& path, const BudgetedPolicy& policy,
                       const SearchSpace& space, const RunConfig& cfg) {
  ordered_json j;
  j["layers"] = ordered_json::array();
  for (const QuantPolicy::Entry& e : policy.policy.entries) {
    ordered_json layer;
    layer["index"] = e.layer;
    layer["weight_bits"] = e.weight_bit.bits();
    layer["act_bits"] = e.act_bit.bits();
    j["layers"].push_back(layer);
  }
  j["search_space"] = {{"weight_bits", bits_json(space.weight_bits)},
                       {"act_bits", bits_json(space.act_bits)}};
  j["seed"] = cfg.seed;
  j["bops"] = policy.bops;
  j["compression_ratio"] = policy.compression_ratio;
  j["feasible"] = policy.feasible;
  j["config"] = config_json(cfg);
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

QuantPolicy read_policy_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open policy file: " + path);
  ordered_json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw DataError("bad policy JSON in " + path + ": " + e.what());
  }
  QuantPolicy policy;
  if (!j.contains("layers") || !j["layers"].is_array()) {
    throw DataError("policy JSON missing 'layers' array: " + path);
  }
  for (const auto& layer : j["layers"]) {
    QuantPolicy::Entry e;
    e.layer = layer.at("index").get<int>();
    e.weight_bit = BitWidth(layer.at("weight_bits").get<int>());
    e.act_bit = BitWidth(layer.at("act_bits").get<int>());
    policy.entries.push_back(e);
  }
  return policy;
}

void write_trajectory_csv(const std::string& path,
                          const SearchTrajectory& trajectory,
                          const std::vector<std::string>& provenance) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  for (const std::string& line : provenance) os << "# " << line << "\n";
  os << "iteration,train_loss,val_accuracy,delta_psi,alpha_digest\n";
  for (const TrajectoryRecord& r : trajectory.records) {
    os << r.iteration << ',' << shortest_double(r.train_loss) << ','
       << shortest_double(r.val_accuracy) << ',';
    if (std::isnan(r.delta_psi)) {
      os << "";  // rounds without a Shapley pass
    } else {
      os << shortest_double(r.delta_psi);
    }
    os << ',' << r.alpha_digest << "\n";
  }
}

void write_timing_csv(const std::string& path,
                      const SearchTrajectory& trajectory,
                      const std::vector<std::string>& provenance) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  for (const std::string& line : provenance) os << "# " << line << "\n";
  os << "iteration,wall_time_s\n";
  for (const TrajectoryRecord& r : trajectory.records) {
    os << r.iteration << ',' << shortest_double(r.wall_time_s) << "\n";
  }
}

void write_search_artifacts(const std::string& dir, const RunConfig& cfg,
                            const Supernet& supernet,
                            const SearchResult& result) {
  fs::create_directories(dir);
  const std::vector<std::string> prov = provenance_lines(cfg);
  write_text_file(dir + "/config.resolved", prov);
  write_policy_json(dir + "/policy.json", result.policy, supernet.space(), cfg);
  write_trajectory_csv(dir + "/trajectory.csv", result.trajectory, prov);
  write_timing_csv(dir + "/timing.csv", result.trajectory, prov);
  save_checkpoint(dir + "/checkpoint.bshp", supernet.named_tensors());
  for (std::size_t r = 0; r < result.shapley_rounds.size(); ++r) {
    write_shapley_csv(dir + "/shapley_round" + std::to_string(r) + ".csv",
                      supernet, result.shapley_rounds[r], prov);
  }
}

RestoredRun restore_run(const std::string& dir) {
  const std::string cfg_path = dir + "/config.resolved";
  if (!fs::exists(cfg_path)) {
    throw DataError("not a search run directory (missing config.resolved): " +
                    dir);
  }
  RunConfig cfg = parse_config_file(cfg_path);
  Supernet supernet(cfg.build_graph(), cfg.to_search_space());
  supernet.load_named_tensors(load_checkpoint(dir + "/checkpoint.bshp"));

  BudgetedPolicy policy;
  policy.policy = read_policy_json(dir + "/policy.json");
  CostBudget budget = CostBudget::from_graph(supernet.graph());
  const PolicyCost cost = policy_bops(policy.policy, budget);
  policy.bops = cost.bops;
  policy.compression_ratio = cost.compression_ratio;
  return {std::move(cfg), std::move(supernet), std::move(policy)};
}

}  // namespace bitshapley
