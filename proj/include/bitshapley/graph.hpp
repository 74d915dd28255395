#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "bitshapley/quantize.hpp"
#include "bitshapley/tensor.hpp"

namespace bitshapley {

// ---------------------------------------------------------------------------
// Quantization slots.  Every quantizable layer owns one slot for its weights
// and one for its input activations.  A slot is either off (full precision),
// pinned to a single bit-width, or a mixture over candidates.  Candidate
// index `noise_candidate` can be sabotaged to emit a deterministic noise
// pattern instead of a quantized branch; the planted-branch experiments rely
// on this.
// ---------------------------------------------------------------------------

enum class SlotMode { off, fixed, mixture };

struct QuantSlot {
  SlotMode mode = SlotMode::off;
  std::vector<BitWidth> bits;  // fixed: exactly one entry
  std::vector<double> mix;     // mixture weights, parallel to bits, sum 1
  QuantizerState qs;
  int noise_candidate = -1;
  std::uint64_t noise_seed = 0;

  static QuantSlot off_slot() { return {}; }
  static QuantSlot fixed(BitWidth b, QuantizerState qs = {},
                         bool noise = false, std::uint64_t noise_seed = 0);
  static QuantSlot mixture(std::vector<BitWidth> bits, std::vector<double> mix,
                           QuantizerState qs = {});
};

struct SlotPair {
  QuantSlot weight;
  QuantSlot act;
};

// ---------------------------------------------------------------------------
// Layer descriptors and layers.
// ---------------------------------------------------------------------------

struct DenseSpec {
  std::size_t in = 0, out = 0;
};
struct Conv2dSpec {
  std::size_t in_c = 0, out_c = 0, kh = 3, kw = 3;
};
struct ReluSpec {};
struct FlattenSpec {};

using LayerSpec = std::variant<DenseSpec, Conv2dSpec, ReluSpec, FlattenSpec>;

struct Dense {
  Tensor W;  // [out, in]
  Tensor b;  // [out]
  Tensor gW, gb;
  int quant_idx = -1;
  double macs = 0;  // per sample
};

struct Conv2d {
  Tensor W;  // [oc, ic, kh, kw]
  Tensor b;  // [oc]
  Tensor gW, gb;
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  int quant_idx = -1;
  double macs = 0;
};

struct Relu {};

struct Flatten {
  std::vector<std::size_t> in_dims;
};

using Layer = std::variant<Dense, Conv2d, Relu, Flatten>;

// Per-layer forward cache, owned by a workspace so read-only evaluation can
// run concurrently with thread-local caches.
struct LayerCache {
  Tensor input;
  Tensor qinput;                    // activation path after its slot
  Tensor qweight_storage;           // mixed quantized weight
  std::vector<Tensor> w_branches;   // per-candidate outputs (mix-grad runs)
  std::vector<Tensor> a_branches;
};

struct Workspace {
  std::vector<LayerCache> caches;
  Tensor logits;
  bool has_forward = false;
  bool collect_mix_grads = false;
  // dL/d(mixture weight) per quantizable layer, one vector per edge.
  std::vector<std::vector<double>> wmix_grad;
  std::vector<std::vector<double>> amix_grad;
};

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

// ---------------------------------------------------------------------------
// ComputeGraph: a fixed feed-forward chain with reverse-mode gradients.
// Forward then backward visits every node exactly once; the training
// workspace is single-writer, while eval() is const and takes thread-local
// scratch.
// ---------------------------------------------------------------------------

class ComputeGraph {
 public:
  ComputeGraph() = default;

  /// Builds the chain and initializes parameters from `seed` with uniform
  /// fan-in scaling: W ~ U[-sqrt(1/fan_in), +sqrt(1/fan_in)], biases zero.
  /// Identical seeds give bit-identical parameters.  Throws on dimension
  /// mismatch between consecutive layers.
  static ComputeGraph build(const std::vector<LayerSpec>& specs,
                            const std::vector<std::size_t>& input_dims,
                            std::uint64_t seed);

  /// Training forward: caches activations for backward.
  Tensor forward(const Tensor& batch);

  /// Softmax cross-entropy backward over the cached forward.  Fills every
  /// parameter gradient and returns the (scaled) mean loss.  Throws if no
  /// forward preceded it.
  double backward(const std::vector<int>& labels, double loss_scale = 1.0);

  /// Backward from an externally supplied logit gradient (same contract).
  void backward_from_logit_grad(const Tensor& dlogits);

  /// Thread-safe inference.  `slot_override`, when non-null, replaces the
  /// stored quantization slots for this evaluation only (sized n_quant()).
  Tensor eval(const Tensor& batch,
              const std::vector<SlotPair>* slot_override = nullptr) const;

  /// Forward into a caller-owned workspace (mix-grad collection for the
  /// differentiable search path), then backward with the same workspace.
  Tensor forward_ws(const Tensor& batch, Workspace& ws,
                    const std::vector<SlotPair>* slot_override = nullptr) const;
  double backward_ws(const std::vector<int>& labels, Workspace& ws,
                     double loss_scale = 1.0);
  void backward_from_logit_grad_ws(const Tensor& dlogits, Workspace& ws);

  std::vector<ParamRef> params();
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  void load_named_tensors(
      const std::vector<std::pair<std::string, Tensor>>& entries);
  std::size_t param_count() const;
  void zero_grads();

  /// FNV-1a over all parameter bytes; frozen-weights contracts compare this.
  std::uint64_t weight_digest() const;

  std::size_t n_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return layers_[i]; }
  const Layer& layer(std::size_t i) const { return layers_[i]; }

  int n_quant() const { return static_cast<int>(slots_.size()); }
  SlotPair& slot(int quant_idx) { return slots_[quant_idx]; }
  const SlotPair& slot(int quant_idx) const { return slots_[quant_idx]; }

  /// MAC count per quantizable layer, in slot order.
  std::vector<double> quant_layer_macs() const;

  const std::vector<std::size_t>& input_dims() const { return input_dims_; }
  std::size_t n_classes() const { return n_classes_; }

  const Workspace& workspace() const { return ws_; }

  static double cross_entropy(const Tensor& logits,
                              const std::vector<int>& labels,
                              Tensor* dlogits = nullptr);

 private:
  std::vector<Layer> layers_;
  std::vector<SlotPair> slots_;
  std::vector<std::size_t> input_dims_;
  std::size_t n_classes_ = 0;
  Workspace ws_;
};

// Standard optimizers over a graph's parameter registry.  Adam keeps its
// moments keyed by parameter name so checkpoint loads do not invalidate it.
enum class Optim { sgd, adam };

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 8;
  Optim optimizer = Optim::sgd;
  std::uint64_t seed = 1;

  void validate() const;
};

class Optimizer {
 public:
  Optimizer(Optim kind, double lr) : kind_(kind), lr_(lr) {}

  /// SGD: p <- p - lr * g, exactly.  Adam: standard update with beta1 = 0.9,
  /// beta2 = 0.999, eps = 1e-8 and bias correction.
  void step(ComputeGraph& graph);

 private:
  Optim kind_;
  double lr_;
  std::int64_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

/// One optimizer step with a transient optimizer (SGD semantics per call).
void optimizer_step(ComputeGraph& graph, const TrainConfig& cfg);

double noise_unit(std::uint64_t seed, std::uint64_t index);  // [0, 1)

}  // namespace bitshapley
