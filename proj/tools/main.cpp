// Command-line front end: search, finetune, eval, shapley-exact and the
// analysis experiments.  Exit codes: 0 success, 2 config error, 3 data
// error, 4 numerical abort.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bitshapley/analysis.hpp"
#include "bitshapley/checkpoint.hpp"
#include "bitshapley/config.hpp"
#include "bitshapley/errors.hpp"
#include "bitshapley/game.hpp"
#include "bitshapley/io.hpp"
#include "bitshapley/rng.hpp"
#include "bitshapley/search.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace bitshapley;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<std::string> method;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
  auto* opt = cmd->add_option("--config", flags.config_path,
                              "flat key = value configuration file");
  if (config_required) opt->required();
  cmd->add_option("--seed", flags.seed, "master seed (overrides config)");
  cmd->add_option("--out", flags.out, "output directory (overrides config)");
  cmd->add_option("--threads", flags.threads, "worker threads (overrides config)");
  cmd->add_option("--method", flags.method, "smpq | dmpq (overrides config)")
      ->check(CLI::IsMember({"smpq", "dmpq"}));
}

// defaults < file < environment < explicit flags
RunConfig resolve_config(const CommonFlags& flags) {
  RunConfig cfg = flags.config_path.empty() ? RunConfig{}
                                            : parse_config_file(flags.config_path);
  apply_env_overrides(cfg);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out) cfg.out = *flags.out;
  if (flags.threads) cfg.threads = *flags.threads;
  if (flags.method) cfg.method = *flags.method;
  cfg.validate();
  return cfg;
}

void write_json(const std::string& path, const ordered_json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

ordered_json config_block(const RunConfig& cfg) {
  ordered_json j;
  for (const auto& [key, value] : cfg.resolved()) j[key] = value;
  return j;
}

int cmd_search(const CommonFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const Dataset data = cfg.load_dataset();
  const auto [train_data, val_data] =
      split(data, cfg.val_fraction, derive_seed(cfg.seed, "split"));

  Supernet supernet(cfg.build_graph(), cfg.to_search_space());
  SearchConfig scfg = cfg.to_search_config();
  scfg.omega0 = cfg.resolve_omega0(supernet.graph());
  if (cfg.checkpoint_every > 0) {
    fs::create_directories(cfg.out);
    scfg.epoch_hook = [&cfg](std::size_t epoch, const Supernet& sn) {
      if ((epoch + 1) % cfg.checkpoint_every == 0) {
        save_checkpoint(cfg.out + "/checkpoint_epoch" +
                            std::to_string(epoch + 1) + ".bshp",
                        sn.named_tensors());
      }
    };
  }

  const SearchResult result =
      scfg.method == SearchMethod::smpq
          ? smpq_search(supernet, train_data, val_data, scfg)
          : dmpq_search(supernet, train_data, val_data, scfg);

  write_search_artifacts(cfg.out, cfg, supernet, result);

  ordered_json summary;
  summary["out"] = cfg.out;
  summary["method"] = cfg.method;
  summary["converged"] = result.trajectory.converged;
  summary["iterations"] = result.trajectory.records.size();
  summary["bops"] = result.policy.bops;
  summary["compression_ratio"] = result.policy.compression_ratio;
  summary["feasible"] = result.policy.feasible;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_finetune(const CommonFlags& flags, const std::string& run_dir,
                 const std::string& policy_path) {
  RunConfig cfg = resolve_config(flags);
  if (!run_dir.empty()) cfg.run_dir = run_dir;
  if (cfg.run_dir.empty()) {
    throw ConfigError("finetune needs --run (a completed search directory)");
  }
  RestoredRun run = restore_run(cfg.run_dir);
  const QuantPolicy policy =
      policy_path.empty() ? run.policy.policy : read_policy_json(policy_path);

  const Dataset data = cfg.load_dataset();
  const auto [train_data, val_data] =
      split(data, cfg.val_fraction, derive_seed(cfg.seed, "split"));

  TrainConfig tcfg = cfg.to_train_config();
  tcfg.epochs = cfg.finetune_epochs;
  const CostBudget budget = CostBudget::from_graph(run.supernet.graph());
  ComputeGraph tuned;
  const FinetuneMetrics metrics = finetune(run.supernet, policy, train_data,
                                           val_data, tcfg, budget, &tuned);

  fs::create_directories(cfg.out);
  save_checkpoint(cfg.out + "/finetuned.bshp", tuned.named_tensors());
  ordered_json j;
  j["train_accuracy"] = metrics.train_accuracy;
  j["val_accuracy"] = metrics.val_accuracy;
  j["train_loss"] = metrics.train_loss;
  j["bops"] = metrics.bops;
  j["compression_ratio"] = metrics.compression_ratio;
  j["config"] = config_block(cfg);
  write_json(cfg.out + "/finetune_metrics.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint_path,
             const std::string& policy_path) {
  const RunConfig cfg = resolve_config(flags);
  Supernet supernet(cfg.build_graph(), cfg.to_search_space());
  supernet.load_named_tensors(load_checkpoint(checkpoint_path));
  const QuantPolicy policy = read_policy_json(policy_path);
  if (policy.entries.size() != static_cast<std::size_t>(supernet.n_layers())) {
    throw DataError("policy/checkpoint layer mismatch: policy has " +
                    std::to_string(policy.entries.size()) + " layers, network " +
                    std::to_string(supernet.n_layers()));
  }
  const ComputeGraph graph = apply_policy(supernet, policy);

  const Dataset data = cfg.load_dataset();
  const auto [train_data, val_data] =
      split(data, cfg.val_fraction, derive_seed(cfg.seed, "split"));
  const CostBudget budget = CostBudget::from_graph(graph);
  const PolicyCost cost = policy_bops(policy, budget);

  ordered_json j;
  j["val_accuracy"] =
      accuracy(graph, val_data.inputs, val_data.labels, cfg.batch_size);
  j["train_accuracy"] =
      accuracy(graph, train_data.inputs, train_data.labels, cfg.batch_size);
  j["bops"] = cost.bops;
  j["compression_ratio"] = cost.compression_ratio;
  j["config"] = config_block(cfg);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_shapley_exact(const CommonFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const Dataset data = cfg.load_dataset();
  const auto [train_data, val_data] =
      split(data, cfg.val_fraction, derive_seed(cfg.seed, "split"));

  Supernet supernet(cfg.build_graph(), cfg.to_search_space());
  if (supernet.n_players() > 20) {
    throw ConfigError(
        "player set too large for exact enumeration (" +
        std::to_string(supernet.n_players()) +
        " > 20); use `search` with the Monte-Carlo estimator instead");
  }

  // Brief weight training under the uniform mixture, then a frozen game.
  SearchConfig scfg = cfg.to_search_config();
  scfg.omega0 = cfg.resolve_omega0(supernet.graph());
  Optimizer opt(scfg.train.optimizer, scfg.train.learning_rate);
  supernet.calibrate(train_data.inputs, scfg.train.batch_size,
                     scfg.calib_batches);
  for (std::size_t e = 0; e < scfg.epochs; ++e) {
    train_weights_epoch(supernet, train_data, scfg.train, opt, e);
  }

  const CostBudget budget =
      CostBudget::from_graph(supernet.graph(), scfg.omega0, scfg.mu);
  const ValueFunction vf = make_value_function(
      supernet, val_data.inputs, val_data.labels, budget, scfg.train.batch_size);
  const std::vector<ShapleyEstimate> exact = exact_shapley(vf);
  const std::vector<ShapleyEstimate> mc =
      mc_shapley(vf, scfg.mc_samples, /*truncation_threshold=*/0.0,
                 derive_seed(cfg.seed, "shapley.exact.mc"), scfg.threads);

  double max_dev = 0, sum_exact = 0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    max_dev = std::max(max_dev, std::abs(exact[i].psi - mc[i].psi));
    sum_exact += exact[i].psi;
  }

  fs::create_directories(cfg.out);
  write_shapley_csv(cfg.out + "/shapley_exact.csv", supernet, exact,
                    provenance_lines(cfg));
  write_shapley_csv(cfg.out + "/shapley_mc.csv", supernet, mc,
                    provenance_lines(cfg));

  ordered_json j;
  j["players"] = supernet.n_players();
  j["sum_psi"] = sum_exact;
  j["v_full_minus_v_empty"] = vf.v_full() - vf.v_empty();
  j["mc_samples"] = cfg.mc_samples;
  j["max_abs_deviation"] = max_dev;
  std::cout << j.dump(2) << "\n";
  return 0;
}

EdgeKind kind_from(const std::string& s) {
  return s == "act" ? EdgeKind::act : EdgeKind::weight;
}

int cmd_analyze_correlation(const CommonFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  if (cfg.smpq_run.empty() || cfg.dmpq_run.empty()) {
    throw ConfigError("analyze correlation needs smpq_run and dmpq_run");
  }
  RestoredRun smpq = restore_run(cfg.smpq_run);
  RestoredRun dmpq = restore_run(cfg.dmpq_run);

  const Dataset data = cfg.load_dataset();
  const auto [train_data, val_data] =
      split(data, cfg.val_fraction, derive_seed(cfg.seed, "split"));
  TrainConfig tcfg = cfg.to_train_config();
  tcfg.epochs = cfg.probe_epochs;

  const CorrelationResult result = correlation_experiment(
      smpq.supernet, dmpq.supernet, cfg.k_policies, train_data, val_data, tcfg,
      derive_seed(cfg.seed, "analysis.correlation"));

  fs::create_directories(cfg.out);
  std::vector<std::string> lines = provenance_lines(cfg);
  for (std::string& line : lines) line.insert(0, "# ");
  lines.push_back("method,sample,score,accuracy");
  const auto emit = [&lines](const char* method,
                             const std::vector<RankedPolicySample>& samples) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      lines.push_back(std::string(method) + "," + std::to_string(i) + "," +
                      shortest_double(samples[i].score) + "," +
                      shortest_double(samples[i].accuracy));
    }
  };
  emit("smpq", result.samples_smpq);
  emit("dmpq", result.samples_dmpq);
  write_text_file(cfg.out + "/correlation.csv", lines);

  ordered_json j;
  j["tau_smpq"] = result.tau_smpq;
  j["tau_dmpq"] = result.tau_dmpq;
  j["k_policies"] = cfg.k_policies;
  j["seed"] = cfg.seed;
  j["score_definition"] = "mean raw alpha over the policy's selected players";
  j["full_scale_reference_tau"] = 0.494;
  j["config"] = config_block(cfg);
  write_json(cfg.out + "/correlation.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_analyze_pitfall(const CommonFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  if (cfg.dmpq_run.empty()) throw ConfigError("analyze pitfall needs dmpq_run");
  RestoredRun dmpq = restore_run(cfg.dmpq_run);

  const Dataset data = cfg.load_dataset();
  const auto [train_data, val_data] =
      split(data, cfg.val_fraction, derive_seed(cfg.seed, "split"));
  TrainConfig tcfg = cfg.to_train_config();
  tcfg.epochs = cfg.probe_epochs;
  tcfg.seed = cfg.seed;

  const PitfallResult result =
      pitfall_probe(dmpq.supernet, dmpq.policy.policy, cfg.probe_layer,
                    kind_from(cfg.probe_kind), train_data, val_data, tcfg);

  fs::create_directories(cfg.out);
  std::vector<std::string> lines = provenance_lines(cfg);
  for (std::string& line : lines) line.insert(0, "# ");
  lines.push_back("bit,alpha,discretization_accuracy");
  for (const PitfallRow& row : result.rows) {
    lines.push_back(std::to_string(row.bit.bits()) + "," +
                    shortest_double(row.alpha) + "," +
                    shortest_double(row.accuracy));
  }
  write_text_file(cfg.out + "/pitfall.csv", lines);

  ordered_json j;
  j["layer"] = cfg.probe_layer;
  j["kind"] = cfg.probe_kind;
  j["rows"] = result.rows.size();
  j["rank_agreement"] = result.rank_agreement;
  j["config"] = config_block(cfg);
  write_json(cfg.out + "/pitfall.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_analyze_interaction(const CommonFlags& flags) {
  const RunConfig cfg = resolve_config(flags);
  if (cfg.run_dir.empty()) throw ConfigError("analyze interaction needs run_dir");
  RestoredRun run = restore_run(cfg.run_dir);

  const Dataset data = cfg.load_dataset();
  const auto [train_data, val_data] =
      split(data, cfg.val_fraction, derive_seed(cfg.seed, "split"));
  TrainConfig tcfg = cfg.to_train_config();
  tcfg.epochs = cfg.probe_epochs;
  tcfg.seed = cfg.seed;

  const EdgeEdit e1{cfg.edit1_layer, kind_from(cfg.edit1_kind),
                    BitWidth(cfg.edit1_bit)};
  const EdgeEdit e2{cfg.edit2_layer, kind_from(cfg.edit2_kind),
                    BitWidth(cfg.edit2_bit)};
  const InteractionResult result = interaction_probe(
      run.supernet, run.policy.policy, e1, e2, train_data, val_data, tcfg);

  fs::create_directories(cfg.out);
  ordered_json j;
  j["acc_base"] = result.acc_base;
  j["acc_b1"] = result.acc_b1;
  j["acc_b2"] = result.acc_b2;
  j["acc_b3"] = result.acc_b3;
  j["delta_b1"] = result.delta_b1;
  j["delta_b2"] = result.delta_b2;
  j["delta_b3"] = result.delta_b3;
  j["interaction_gap"] = result.interaction_gap;
  j["config"] = config_block(cfg);
  write_json(cfg.out + "/interaction.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixed-precision bit-width search via Shapley attribution"};
  app.require_subcommand(1);

  CommonFlags search_flags, finetune_flags, eval_flags, exact_flags;
  CommonFlags corr_flags, pitfall_flags, inter_flags;
  std::string finetune_run, finetune_policy;
  std::string eval_checkpoint, eval_policy;

  CLI::App* search = app.add_subcommand("search", "run a bit-width search");
  add_common(search, search_flags);

  CLI::App* finetune_cmd =
      app.add_subcommand("finetune", "fine-tune a policy from a search run");
  add_common(finetune_cmd, finetune_flags);
  finetune_cmd->add_option("--run", finetune_run, "search output directory");
  finetune_cmd->add_option("--policy", finetune_policy,
                           "policy JSON (defaults to the run's policy)");

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint under a policy");
  add_common(eval_cmd, eval_flags);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--policy", eval_policy, "policy JSON file")->required();

  CLI::App* exact = app.add_subcommand(
      "shapley-exact", "exact Shapley table vs the Monte-Carlo estimator");
  add_common(exact, exact_flags);

  CLI::App* analyze = app.add_subcommand("analyze", "diagnostic experiments");
  analyze->require_subcommand(1);
  CLI::App* corr = analyze->add_subcommand(
      "correlation", "rank correlation of predictor scores vs accuracy");
  add_common(corr, corr_flags);
  CLI::App* pitfall = analyze->add_subcommand(
      "pitfall", "per-bit discretization accuracy vs alpha on one edge");
  add_common(pitfall, pitfall_flags);
  CLI::App* interaction = analyze->add_subcommand(
      "interaction", "joint vs additive effect of two single-edge edits");
  add_common(interaction, inter_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (search->parsed()) return cmd_search(search_flags);
    if (finetune_cmd->parsed()) {
      return cmd_finetune(finetune_flags, finetune_run, finetune_policy);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_flags, eval_checkpoint, eval_policy);
    }
    if (exact->parsed()) return cmd_shapley_exact(exact_flags);
    if (corr->parsed()) return cmd_analyze_correlation(corr_flags);
    if (pitfall->parsed()) return cmd_analyze_pitfall(pitfall_flags);
    if (interaction->parsed()) return cmd_analyze_interaction(inter_flags);
  } catch (const ConfigError& e) {
    std::cerr << "{\"error\": \"config\", \"message\": \"" << e.what()
              << "\"}\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "{\"error\": \"config\", \"message\": \"" << e.what()
              << "\"}\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "{\"error\": \"data\", \"message\": \"" << e.what() << "\"}\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "{\"error\": \"numeric\", \"message\": \"" << e.what()
              << "\"}\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "{\"error\": \"internal\", \"message\": \"" << e.what()
              << "\"}\n";
    return 1;
  }
  return 0;
}
