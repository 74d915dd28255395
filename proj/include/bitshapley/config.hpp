#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitshapley/data.hpp"
#include "bitshapley/search.hpp"
#include "bitshapley/supernet.hpp"

namespace bitshapley {

/// Flat key = value run configuration.  Precedence: defaults < config file
/// < BSHP_* environment variables < command-line flags.  Unknown keys are
/// rejected by name.
struct RunConfig {
  // run
  std::string method = "smpq";  // smpq | dmpq
  std::uint64_t seed = 1;
  std::string out = "out";
  int threads = 1;

  // dataset
  std::string dataset = "moons";  // gaussians | moons | spirals | idx
  std::size_t dataset_n = 1024;
  double dataset_noise = 0.08;
  int dataset_classes = 2;
  std::string idx_images;
  std::string idx_labels;
  double val_fraction = 0.25;

  // network: "mlp:2-8-2" or "cnn:1x8x8:c4k3-d2"
  std::string net = "mlp:2-8-2";

  // search space: preset name or "custom" with explicit bit lists
  std::string space = "s2";
  std::string weight_bits;  // e.g. "1,2,4,8"
  std::string act_bits;

  // inner training
  std::size_t epochs = 8;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::string optimizer = "sgd";  // sgd | adam

  // outer search
  std::size_t rounds_per_epoch = 1;
  std::size_t mc_samples = 10;
  double truncation_threshold = 0.5;
  std::string update_preset = "default";  // default (0.8, 0.1) | alt (0.75, 0.05)
  double xi = 0.1;
  double beta = 0.8;
  double epsilon = 1e-3;
  double conv_scale = 50.0;
  std::size_t calib_batches = 8;
  double alpha_lr = 0.05;
  bool dmpq_alpha_on_val = false;

  // budget: absolute BOPs, or a target compression ratio vs 32/32
  double budget_bops = 0;
  double budget_ratio = 0;
  double mu = 1.0;

  // periodic supernet checkpoints every N epochs (0: final only)
  std::size_t checkpoint_every = 0;

  // fine-tuning and analysis
  std::size_t finetune_epochs = 10;
  std::size_t probe_epochs = 10;
  std::size_t k_policies = 10;
  int probe_layer = 0;
  std::string probe_kind = "weight";  // weight | act
  std::string smpq_run;
  std::string dmpq_run;
  std::string run_dir;
  int edit1_layer = 0;
  std::string edit1_kind = "weight";
  int edit1_bit = 0;
  int edit2_layer = 1;
  std::string edit2_kind = "weight";
  int edit2_bit = 0;

  void validate() const;

  SearchConfig to_search_config() const;
  TrainConfig to_train_config() const;
  SearchSpace to_search_space() const;
  ComputeGraph build_graph() const;
  Dataset load_dataset() const;

  /// Omega0 for the graph: budget_bops wins; otherwise derived from
  /// budget_ratio against the 32/32 baseline; 0 when unconstrained.
  double resolve_omega0(const ComputeGraph& graph) const;

  /// Resolved configuration as deterministic "key = value" lines.
  std::vector<std::pair<std::string, std::string>> resolved() const;
};

/// Applies one key=value assignment; throws ConfigError for unknown keys or
/// unparsable values.
void config_set(RunConfig& cfg, const std::string& key,
                const std::string& value);

/// Parses a flat key = value file ('#' comments) over the defaults.
RunConfig parse_config_file(const std::string& path);

/// Applies BSHP_<KEY> environment overrides in schema order.
void apply_env_overrides(RunConfig& cfg);

std::vector<LayerSpec> parse_net_layers(const std::string& net,
                                        std::vector<std::size_t>* input_dims);

}  // namespace bitshapley
