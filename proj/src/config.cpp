#include "bitshapley/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "bitshapley/errors.hpp"
#include "bitshapley/rng.hpp"

namespace bitshapley {

namespace {

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const std::string v = trim(value);
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t pos = 0;
      out = static_cast<T>(std::stod(v, &pos));
      if (pos != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad numeric value '" + v +
                        "'");
    }
  } else {
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
      throw ConfigError("config key '" + key + "': bad integer value '" + v +
                        "'");
    }
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': bad boolean value '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

#define STR_FIELD(name)                                                   \
  Field{#name, [](RunConfig& c, const std::string& v) { c.name = trim(v); }, \
        [](const RunConfig& c) { return c.name; }}
#define U64_FIELD(name)                                                    \
  Field{#name,                                                             \
        [](RunConfig& c, const std::string& v) {                           \
          c.name = parse_number<std::uint64_t>(#name, v);                  \
        },                                                                 \
        [](const RunConfig& c) { return std::to_string(c.name); }}
#define SIZE_FIELD(name)                                                   \
  Field{#name,                                                             \
        [](RunConfig& c, const std::string& v) {                           \
          c.name = parse_number<std::size_t>(#name, v);                    \
        },                                                                 \
        [](const RunConfig& c) { return std::to_string(c.name); }}
#define INT_FIELD(name)                                                    \
  Field{#name,                                                             \
        [](RunConfig& c, const std::string& v) {                           \
          c.name = parse_number<int>(#name, v);                            \
        },                                                                 \
        [](const RunConfig& c) { return std::to_string(c.name); }}
#define DBL_FIELD(name)                                                    \
  Field{#name,                                                             \
        [](RunConfig& c, const std::string& v) {                           \
          c.name = parse_number<double>(#name, v);                         \
        },                                                                 \
        [](const RunConfig& c) { return fmt_double(c.name); }}
#define BOOL_FIELD(name)                                                 \
  Field{#name,                                                           \
        [](RunConfig& c, const std::string& v) {                         \
          c.name = parse_bool(#name, v);                                 \
        },                                                               \
        [](const RunConfig& c) { return c.name ? "true" : "false"; }}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      STR_FIELD(method),
      U64_FIELD(seed),
      STR_FIELD(out),
      INT_FIELD(threads),
      STR_FIELD(dataset),
      SIZE_FIELD(dataset_n),
      DBL_FIELD(dataset_noise),
      INT_FIELD(dataset_classes),
      STR_FIELD(idx_images),
      STR_FIELD(idx_labels),
      DBL_FIELD(val_fraction),
      STR_FIELD(net),
      STR_FIELD(space),
      STR_FIELD(weight_bits),
      STR_FIELD(act_bits),
      SIZE_FIELD(epochs),
      SIZE_FIELD(batch_size),
      DBL_FIELD(learning_rate),
      STR_FIELD(optimizer),
      SIZE_FIELD(rounds_per_epoch),
      SIZE_FIELD(mc_samples),
      DBL_FIELD(truncation_threshold),
      STR_FIELD(update_preset),
      DBL_FIELD(xi),
      DBL_FIELD(beta),
      DBL_FIELD(epsilon),
      DBL_FIELD(conv_scale),
      SIZE_FIELD(calib_batches),
      DBL_FIELD(alpha_lr),
      BOOL_FIELD(dmpq_alpha_on_val),
      DBL_FIELD(budget_bops),
      DBL_FIELD(budget_ratio),
      DBL_FIELD(mu),
      SIZE_FIELD(checkpoint_every),
      SIZE_FIELD(finetune_epochs),
      SIZE_FIELD(probe_epochs),
      SIZE_FIELD(k_policies),
      INT_FIELD(probe_layer),
      STR_FIELD(probe_kind),
      STR_FIELD(smpq_run),
      STR_FIELD(dmpq_run),
      STR_FIELD(run_dir),
      INT_FIELD(edit1_layer),
      STR_FIELD(edit1_kind),
      INT_FIELD(edit1_bit),
      INT_FIELD(edit2_layer),
      STR_FIELD(edit2_kind),
      INT_FIELD(edit2_bit),
  };
  return fields;
}

std::vector<BitWidth> parse_bit_list(const std::string& key,
                                     const std::string& csv) {
  std::vector<BitWidth> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string v = trim(item);
    if (v.empty()) continue;
    try {
      out.emplace_back(std::stoi(v));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad bit value '" + v + "'");
    }
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

}  // namespace

void config_set(RunConfig& cfg, const std::string& key,
                const std::string& value) {
  for (const Field& f : schema()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key: '" + key + "'");
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    config_set(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return cfg;
}

void apply_env_overrides(RunConfig& cfg) {
  for (const Field& f : schema()) {
    std::string name = "BSHP_";
    for (const char* p = f.key; *p; ++p) {
      name += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
    }
    if (const char* v = std::getenv(name.c_str())) {
      config_set(cfg, f.key, v);
    }
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::resolved() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : schema()) out.emplace_back(f.key, f.get(*this));
  return out;
}

void RunConfig::validate() const {
  if (method != "smpq" && method != "dmpq") {
    throw ConfigError("method must be smpq or dmpq");
  }
  if (optimizer != "sgd" && optimizer != "adam") {
    throw ConfigError("optimizer must be sgd or adam");
  }
  if (update_preset != "default" && update_preset != "alt") {
    throw ConfigError("update_preset must be default or alt");
  }
  if (probe_kind != "weight" && probe_kind != "act") {
    throw ConfigError("probe_kind must be weight or act");
  }
  if (dataset != "idx" && dataset != "gaussians" && dataset != "moons" &&
      dataset != "spirals") {
    throw ConfigError("dataset must be gaussians, moons, spirals or idx");
  }
  if (budget_bops < 0 || budget_ratio < 0) {
    throw ConfigError("budget values must be non-negative");
  }
  if (budget_bops > 0 && budget_ratio > 0) {
    throw ConfigError("set budget_bops or budget_ratio, not both");
  }
  to_search_config().validate();
  to_search_space().validate();
}

TrainConfig RunConfig::to_train_config() const {
  TrainConfig t;
  t.learning_rate = learning_rate;
  t.batch_size = batch_size;
  t.epochs = epochs;
  t.optimizer = optimizer == "adam" ? Optim::adam : Optim::sgd;
  t.seed = seed;
  return t;
}

SearchConfig RunConfig::to_search_config() const {
  SearchConfig s;
  s.method = method == "dmpq" ? SearchMethod::dmpq : SearchMethod::smpq;
  s.epochs = epochs;
  s.rounds_per_epoch = rounds_per_epoch;
  s.mc_samples = mc_samples;
  s.truncation_threshold = truncation_threshold;
  s.xi = xi;
  s.beta = beta;
  if (update_preset == "alt") {  // tuned alternative to the defaults
    s.xi = 0.05;
    s.beta = 0.75;
  }
  s.epsilon = epsilon;
  s.conv_scale = conv_scale;
  s.mu = mu;
  s.calib_batches = calib_batches;
  s.seed = seed;
  s.threads = threads;
  s.train = to_train_config();
  s.alpha_lr = alpha_lr;
  s.alpha_on_val = dmpq_alpha_on_val;
  return s;
}

SearchSpace RunConfig::to_search_space() const {
  if (space != "custom") return SearchSpace::preset(space);
  SearchSpace s;
  s.weight_bits = parse_bit_list("weight_bits", weight_bits);
  s.act_bits = parse_bit_list("act_bits", act_bits);
  s.validate();
  return s;
}

std::vector<LayerSpec> parse_net_layers(const std::string& net,
                                        std::vector<std::size_t>* input_dims) {
  const auto fail = [&net](const std::string& why) -> std::vector<LayerSpec> {
    throw ConfigError("bad net spec '" + net + "': " + why);
  };
  const auto split_on = [](const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) parts.push_back(item);
    return parts;
  };

  std::vector<LayerSpec> layers;
  if (net.rfind("mlp:", 0) == 0) {
    std::vector<std::size_t> dims;
    for (const std::string& d : split_on(net.substr(4), '-')) {
      const int v = parse_number<int>("net", d);
      if (v <= 0) return fail("non-positive width");
      dims.push_back(static_cast<std::size_t>(v));
    }
    if (dims.size() < 2) return fail("mlp needs at least input and output");
    *input_dims = {dims[0]};
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      layers.emplace_back(DenseSpec{dims[i], dims[i + 1]});
      if (i + 2 < dims.size()) layers.emplace_back(ReluSpec{});
    }
    return layers;
  }
  if (net.rfind("cnn:", 0) == 0) {
    const std::vector<std::string> parts = split_on(net.substr(4), ':');
    if (parts.size() != 2) return fail("cnn needs 'cnn:CxHxW:tokens'");
    const std::vector<std::string> dims = split_on(parts[0], 'x');
    if (dims.size() != 3) return fail("input must be CxHxW");
    std::vector<std::size_t> cur;
    for (const std::string& d : dims) {
      cur.push_back(parse_number<std::size_t>("net", d));
    }
    *input_dims = cur;
    bool flattened = false;
    const std::vector<std::string> tokens = split_on(parts[1], '-');
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const std::string& tok = tokens[t];
      const bool last = t + 1 == tokens.size();
      if (tok.size() >= 2 && tok[0] == 'c') {
        const auto kpos = tok.find('k');
        if (kpos == std::string::npos) return fail("conv token needs kN");
        const std::size_t oc =
            parse_number<std::size_t>("net", tok.substr(1, kpos - 1));
        const std::size_t k =
            parse_number<std::size_t>("net", tok.substr(kpos + 1));
        layers.emplace_back(Conv2dSpec{cur[0], oc, k, k});
        cur = {oc, cur[1] - k + 1, cur[2] - k + 1};
        if (!last) layers.emplace_back(ReluSpec{});
      } else if (tok.size() >= 2 && tok[0] == 'd') {
        if (!flattened && cur.size() == 3) {
          layers.emplace_back(FlattenSpec{});
          cur = {cur[0] * cur[1] * cur[2]};
          flattened = true;
        }
        const std::size_t out = parse_number<std::size_t>("net", tok.substr(1));
        layers.emplace_back(DenseSpec{cur[0], out});
        cur = {out};
        if (!last) layers.emplace_back(ReluSpec{});
      } else {
        return fail("unknown token '" + tok + "'");
      }
    }
    return layers;
  }
  return fail("must start with mlp: or cnn:");
}

ComputeGraph RunConfig::build_graph() const {
  std::vector<std::size_t> input_dims;
  const std::vector<LayerSpec> layers = parse_net_layers(net, &input_dims);
  return ComputeGraph::build(layers, input_dims,
                             derive_seed(seed, "network.init"));
}

Dataset RunConfig::load_dataset() const {
  if (dataset == "idx") {
    if (idx_images.empty() || idx_labels.empty()) {
      throw ConfigError("idx dataset needs idx_images and idx_labels paths");
    }
    return load_idx(idx_images, idx_labels);
  }
  return gen_synthetic(synthetic_kind_from(dataset), dataset_n, dataset_noise,
                       derive_seed(seed, "dataset"), dataset_classes);
}

double RunConfig::resolve_omega0(const ComputeGraph& graph) const {
  if (budget_bops > 0) return budget_bops;
  if (budget_ratio > 0) {
    double baseline = 0;
    for (const double macs : graph.quant_layer_macs()) {
      baseline += macs * 32.0 * 32.0;
    }
    return baseline / budget_ratio;
  }
  return 0;
}

}  // namespace bitshapley
