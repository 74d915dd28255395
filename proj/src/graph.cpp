#include "bitshapley/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "bitshapley/errors.hpp"
#include "bitshapley/rng.hpp"

namespace bitshapley {

namespace {

std::string layer_name(std::size_t i, const Layer& l) {
  const char* kind = std::visit(
      [](const auto& v) -> const char* {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Dense>) return "dense";
        if constexpr (std::is_same_v<T, Conv2d>) return "conv2d";
        if constexpr (std::is_same_v<T, Relu>) return "relu";
        return "flatten";
      },
      l);
  return "layer" + std::to_string(i) + " (" + kind + ")";
}

Tensor noise_like(const Tensor& t, std::uint64_t seed, double lo, double hi) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    out[i] = lo + (hi - lo) * noise_unit(seed, i);
  }
  return out;
}

// Candidate branch output for a weight slot.
Tensor weight_branch(const QuantSlot& s, const Tensor& W, int o) {
  if (s.noise_candidate == o) {
    double scale = 0.0;
    for (const double v : W.vec()) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) scale = 1.0;
    return noise_like(W, s.noise_seed, -scale, scale);
  }
  return quantize_weights(W, s.bits[o]);
}

// Candidate branch output for an activation slot.  Bit 32 is a true
// pass-through on an edge (the full-precision fallback), unlike the
// standalone saturating quantize_activations.
Tensor act_branch(const QuantSlot& s, const Tensor& a, int o) {
  if (s.noise_candidate == o) {
    return noise_like(a, s.noise_seed, 0.0, s.qs.clip_max);
  }
  if (s.bits[o].full_precision()) return a;
  return quantize_activations(a, s.bits[o], s.qs);
}

Tensor apply_weight_slot(const QuantSlot& s, const Tensor& W,
                         std::vector<Tensor>* branches_out) {
  if (s.mode == SlotMode::off) return W;
  if (s.mode == SlotMode::fixed) {
    if (s.noise_candidate == 0) return weight_branch(s, W, 0);
    return quantize_weights(W, s.bits[0]);
  }
  Tensor out(W.shape());
  for (std::size_t o = 0; o < s.bits.size(); ++o) {
    Tensor b = weight_branch(s, W, static_cast<int>(o));
    const double w = s.mix[o];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += w * b[i];
    if (branches_out) branches_out->push_back(std::move(b));
  }
  return out;
}

Tensor apply_act_slot(const QuantSlot& s, const Tensor& a,
                      std::vector<Tensor>* branches_out) {
  if (s.mode == SlotMode::off) return a;
  if (s.mode == SlotMode::fixed) return act_branch(s, a, 0);
  Tensor out(a.shape());
  for (std::size_t o = 0; o < s.bits.size(); ++o) {
    Tensor b = act_branch(s, a, static_cast<int>(o));
    const double w = s.mix[o];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += w * b[i];
    if (branches_out) branches_out->push_back(std::move(b));
  }
  return out;
}

// dW from the gradient w.r.t. the mixed quantized weight.  Quantized
// branches pass the gradient straight through (every weight sits inside the
// symmetric min-max range); a noise branch contributes nothing.
Tensor weight_slot_backward(const QuantSlot& s, const Tensor& dWq,
                            const std::vector<Tensor>& branches,
                            std::vector<double>* mix_grad) {
  double coeff = 1.0;
  if (s.mode == SlotMode::fixed) {
    coeff = (s.noise_candidate == 0) ? 0.0 : 1.0;
  } else if (s.mode == SlotMode::mixture) {
    coeff = 0.0;
    for (std::size_t o = 0; o < s.bits.size(); ++o) {
      if (s.noise_candidate != static_cast<int>(o)) coeff += s.mix[o];
    }
  }
  if (mix_grad) {
    mix_grad->assign(s.bits.size(), 0.0);
    for (std::size_t o = 0; o < branches.size(); ++o) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dWq.numel(); ++i) {
        dot += dWq[i] * branches[o][i];
      }
      (*mix_grad)[o] = dot;
    }
  }
  Tensor dW(dWq.shape());
  for (std::size_t i = 0; i < dW.numel(); ++i) dW[i] = coeff * dWq[i];
  return dW;
}

// da via the straight-through estimator per branch: full-precision passes,
// quantized branches mask to [0, clip_max], noise blocks.
Tensor act_slot_backward(const QuantSlot& s, const Tensor& dAq,
                         const Tensor& input,
                         const std::vector<Tensor>& branches,
                         std::vector<double>* mix_grad) {
  if (s.mode == SlotMode::off) return dAq;
  if (mix_grad) {
    mix_grad->assign(s.bits.size(), 0.0);
    for (std::size_t o = 0; o < branches.size(); ++o) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dAq.numel(); ++i) {
        dot += dAq[i] * branches[o][i];
      }
      (*mix_grad)[o] = dot;
    }
  }
  Tensor da(dAq.shape());
  const auto accumulate = [&](int o, double w) {
    if (w == 0.0) return;
    if (s.noise_candidate == o) return;
    if (s.bits[o].full_precision()) {
      for (std::size_t i = 0; i < da.numel(); ++i) da[i] += w * dAq[i];
      return;
    }
    for (std::size_t i = 0; i < da.numel(); ++i) {
      const bool inside = input[i] >= 0.0 && input[i] <= s.qs.clip_max;
      if (inside) da[i] += w * dAq[i];
    }
  };
  if (s.mode == SlotMode::fixed) {
    accumulate(0, 1.0);
  } else {
    for (std::size_t o = 0; o < s.bits.size(); ++o) {
      accumulate(static_cast<int>(o), s.mix[o]);
    }
  }
  return da;
}

}  // namespace

double noise_unit(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t z = mix64(seed ^ ((index + 1) * 0x9e3779b97f4a7c15ULL));
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

QuantSlot QuantSlot::fixed(BitWidth b, QuantizerState qs, bool noise,
                           std::uint64_t noise_seed) {
  QuantSlot s;
  s.mode = SlotMode::fixed;
  s.bits = {b};
  s.qs = qs;
  if (noise) {
    s.noise_candidate = 0;
    s.noise_seed = noise_seed;
  }
  return s;
}

QuantSlot QuantSlot::mixture(std::vector<BitWidth> bits,
                             std::vector<double> mix, QuantizerState qs) {
  if (bits.empty() || bits.size() != mix.size()) {
    throw std::invalid_argument("quant slot: bits/mix size mismatch");
  }
  QuantSlot s;
  s.mode = SlotMode::mixture;
  s.bits = std::move(bits);
  s.mix = std::move(mix);
  s.qs = qs;
  return s;
}

// ---------------------------------------------------------------------------
// Construction.
// ---------------------------------------------------------------------------

ComputeGraph ComputeGraph::build(const std::vector<LayerSpec>& specs,
                                 const std::vector<std::size_t>& input_dims,
                                 std::uint64_t seed) {
  if (specs.empty()) throw std::invalid_argument("build: empty layer spec");
  ComputeGraph g;
  g.input_dims_ = input_dims;
  std::vector<std::size_t> cur = input_dims;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (const auto* d = std::get_if<DenseSpec>(&specs[i])) {
      if (cur.size() != 1 || cur[0] != d->in) {
        throw std::invalid_argument(
            "dimension mismatch between consecutive layers at layer " +
            std::to_string(i) + ": dense expects in=" + std::to_string(d->in));
      }
      Dense layer;
      layer.W = Tensor({d->out, d->in});
      layer.b = Tensor({d->out});
      layer.gW = Tensor({d->out, d->in});
      layer.gb = Tensor({d->out});
      layer.quant_idx = static_cast<int>(g.slots_.size());
      layer.macs = static_cast<double>(d->in) * static_cast<double>(d->out);
      Rng rng(derive_seed(seed, "param.layer" + std::to_string(i)));
      const double s = std::sqrt(1.0 / static_cast<double>(d->in));
      for (double& v : layer.W.vec()) v = rng.uniform(-s, s);
      g.slots_.emplace_back();
      g.layers_.emplace_back(std::move(layer));
      cur = {d->out};
    } else if (const auto* c = std::get_if<Conv2dSpec>(&specs[i])) {
      if (cur.size() != 3 || cur[0] != c->in_c) {
        throw std::invalid_argument(
            "dimension mismatch between consecutive layers at layer " +
            std::to_string(i) + ": conv2d expects " + std::to_string(c->in_c) +
            " channels");
      }
      if (cur[1] < c->kh || cur[2] < c->kw) {
        throw std::invalid_argument("conv2d kernel larger than input at layer " +
                                    std::to_string(i));
      }
      Conv2d layer;
      layer.W = Tensor({c->out_c, c->in_c, c->kh, c->kw});
      layer.b = Tensor({c->out_c});
      layer.gW = Tensor(layer.W.shape());
      layer.gb = Tensor(layer.b.shape());
      layer.in_h = cur[1];
      layer.in_w = cur[2];
      layer.out_h = cur[1] - c->kh + 1;
      layer.out_w = cur[2] - c->kw + 1;
      layer.quant_idx = static_cast<int>(g.slots_.size());
      const double fan_in =
          static_cast<double>(c->in_c) * static_cast<double>(c->kh * c->kw);
      layer.macs = static_cast<double>(c->out_c) * fan_in *
                   static_cast<double>(layer.out_h * layer.out_w);
      Rng rng(derive_seed(seed, "param.layer" + std::to_string(i)));
      const double s = std::sqrt(1.0 / fan_in);
      for (double& v : layer.W.vec()) v = rng.uniform(-s, s);
      g.slots_.emplace_back();
      cur = {c->out_c, layer.out_h, layer.out_w};
      g.layers_.emplace_back(std::move(layer));
    } else if (std::holds_alternative<ReluSpec>(specs[i])) {
      g.layers_.emplace_back(Relu{});
    } else {
      Flatten f;
      f.in_dims = cur;
      std::size_t n = 1;
      for (const std::size_t d : cur) n *= d;
      cur = {n};
      g.layers_.emplace_back(std::move(f));
    }
  }
  if (cur.size() != 1) {
    throw std::invalid_argument("network must end with a rank-1 logit layer");
  }
  g.n_classes_ = cur[0];
  return g;
}

// ---------------------------------------------------------------------------
// Forward.
// ---------------------------------------------------------------------------

Tensor ComputeGraph::forward_ws(const Tensor& batch, Workspace& ws,
                                const std::vector<SlotPair>* slot_override) const {
  if (batch.rank() != input_dims_.size() + 1) {
    throw std::invalid_argument("forward: batch rank mismatch");
  }
  for (std::size_t d = 0; d < input_dims_.size(); ++d) {
    if (batch.dim(d + 1) != input_dims_[d]) {
      throw std::invalid_argument("forward: batch dims do not match input spec");
    }
  }
  if (slot_override &&
      slot_override->size() != static_cast<std::size_t>(n_quant())) {
    throw std::invalid_argument("forward: slot override size mismatch");
  }

  ws.caches.assign(layers_.size(), {});
  ws.wmix_grad.assign(slots_.size(), {});
  ws.amix_grad.assign(slots_.size(), {});
  const std::size_t n = batch.dim(0);
  Tensor x = batch;

  for (std::size_t li = 0; li < layers_.size(); ++li) {
    LayerCache& cache = ws.caches[li];
    cache.input = x;
    if (const auto* dn = std::get_if<Dense>(&layers_[li])) {
      const SlotPair& sp =
          slot_override ? (*slot_override)[dn->quant_idx] : slots_[dn->quant_idx];
      std::vector<Tensor>* ab =
          ws.collect_mix_grads && sp.act.mode == SlotMode::mixture
              ? &cache.a_branches
              : nullptr;
      std::vector<Tensor>* wb =
          ws.collect_mix_grads && sp.weight.mode == SlotMode::mixture
              ? &cache.w_branches
              : nullptr;
      cache.qinput = apply_act_slot(sp.act, x, ab);
      Tensor Wq = apply_weight_slot(sp.weight, dn->W, wb);
      const std::size_t in = dn->W.dim(1), out = dn->W.dim(0);
      Tensor y({n, out});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
          double acc = dn->b[o];
          const double* xr = cache.qinput.data() + i * in;
          const double* wr = Wq.data() + o * in;
          for (std::size_t k = 0; k < in; ++k) acc += xr[k] * wr[k];
          y.at2(i, o) = acc;
        }
      }
      cache.qweight_storage = std::move(Wq);
      x = std::move(y);
    } else if (const auto* cv = std::get_if<Conv2d>(&layers_[li])) {
      const SlotPair& sp =
          slot_override ? (*slot_override)[cv->quant_idx] : slots_[cv->quant_idx];
      std::vector<Tensor>* ab =
          ws.collect_mix_grads && sp.act.mode == SlotMode::mixture
              ? &cache.a_branches
              : nullptr;
      std::vector<Tensor>* wb =
          ws.collect_mix_grads && sp.weight.mode == SlotMode::mixture
              ? &cache.w_branches
              : nullptr;
      cache.qinput = apply_act_slot(sp.act, x, ab);
      Tensor Wq = apply_weight_slot(sp.weight, cv->W, wb);
      const std::size_t ic = cv->W.dim(1), oc = cv->W.dim(0);
      const std::size_t kh = cv->W.dim(2), kw = cv->W.dim(3);
      const std::size_t ih = cv->in_h, iw = cv->in_w;
      const std::size_t oh = cv->out_h, ow = cv->out_w;
      Tensor y({n, oc, oh, ow});
      const Tensor& a = cache.qinput;
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t o = 0; o < oc; ++o) {
          for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
              double acc = cv->b[o];
              for (std::size_t c = 0; c < ic; ++c) {
                for (std::size_t u = 0; u < kh; ++u) {
                  const double* ar =
                      a.data() + ((s * ic + c) * ih + (i + u)) * iw + j;
                  const double* wr = Wq.data() + ((o * ic + c) * kh + u) * kw;
                  for (std::size_t v = 0; v < kw; ++v) acc += ar[v] * wr[v];
                }
              }
              y[((s * oc + o) * oh + i) * ow + j] = acc;
            }
          }
        }
      }
      cache.qweight_storage = std::move(Wq);
      x = std::move(y);
    } else if (std::holds_alternative<Relu>(layers_[li])) {
      Tensor y(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) y[i] = std::max(x[i], 0.0);
      x = std::move(y);
    } else {  // Flatten
      Tensor y({n, x.numel() / n}, x.vec());
      x = std::move(y);
    }
    if (!x.all_finite()) {
      throw NumericError("non-finite value produced at " +
                         layer_name(li, layers_[li]));
    }
  }
  ws.logits = x;
  ws.has_forward = true;
  return x;
}

Tensor ComputeGraph::forward(const Tensor& batch) {
  return forward_ws(batch, ws_, nullptr);
}

Tensor ComputeGraph::eval(const Tensor& batch,
                          const std::vector<SlotPair>* slot_override) const {
  Workspace ws;
  return forward_ws(batch, ws, slot_override);
}

// ---------------------------------------------------------------------------
// Loss and backward.
// ---------------------------------------------------------------------------

double ComputeGraph::cross_entropy(const Tensor& logits,
                                   const std::vector<int>& labels,
                                   Tensor* dlogits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  if (dlogits) *dlogits = Tensor(logits.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * c;
    double zmax = z[0];
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - zmax);
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::invalid_argument("cross_entropy: label out of range");
    }
    loss += std::log(sum) + zmax - z[y];
    if (dlogits) {
      double* d = dlogits->data() + i * c;
      for (std::size_t j = 0; j < c; ++j) {
        d[j] = std::exp(z[j] - zmax) / sum / static_cast<double>(n);
      }
      d[y] -= 1.0 / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

double ComputeGraph::backward_ws(const std::vector<int>& labels, Workspace& ws,
                                 double loss_scale) {
  if (!ws.has_forward) throw Error("backward called before forward");
  Tensor dlogits;
  const double loss = cross_entropy(ws.logits, labels, &dlogits);
  if (loss_scale != 1.0) {
    for (double& v : dlogits.vec()) v *= loss_scale;
  }
  backward_from_logit_grad_ws(dlogits, ws);
  return loss * loss_scale;
}

double ComputeGraph::backward(const std::vector<int>& labels,
                              double loss_scale) {
  return backward_ws(labels, ws_, loss_scale);
}

void ComputeGraph::backward_from_logit_grad(const Tensor& dlogits) {
  backward_from_logit_grad_ws(dlogits, ws_);
}

void ComputeGraph::backward_from_logit_grad_ws(const Tensor& dlogits,
                                               Workspace& ws) {
  if (!ws.has_forward) throw Error("backward called before forward");
  zero_grads();
  Tensor dy = dlogits;
  const std::size_t n = dy.dim(0);
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    LayerCache& cache = ws.caches[idx];
    if (auto* dn = std::get_if<Dense>(&layers_[idx])) {
      const SlotPair& sp = slots_[dn->quant_idx];
      const std::size_t in = dn->W.dim(1), out = dn->W.dim(0);
      const Tensor& aq = cache.qinput;
      const Tensor& Wq = cache.qweight_storage;
      Tensor dWq({out, in});
      Tensor dAq({n, in});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
          const double g = dy.at2(i, o);
          dn->gb[o] += g;
          const double* ar = aq.data() + i * in;
          double* dwr = dWq.data() + o * in;
          const double* wr = Wq.data() + o * in;
          double* dar = dAq.data() + i * in;
          for (std::size_t k = 0; k < in; ++k) {
            dwr[k] += g * ar[k];
            dar[k] += g * wr[k];
          }
        }
      }
      std::vector<double>* wmg = ws.collect_mix_grads &&
                                         sp.weight.mode == SlotMode::mixture
                                     ? &ws.wmix_grad[dn->quant_idx]
                                     : nullptr;
      std::vector<double>* amg =
          ws.collect_mix_grads && sp.act.mode == SlotMode::mixture
              ? &ws.amix_grad[dn->quant_idx]
              : nullptr;
      dn->gW = weight_slot_backward(sp.weight, dWq, cache.w_branches, wmg);
      dy = act_slot_backward(sp.act, dAq, cache.input, cache.a_branches, amg);
    } else if (auto* cv = std::get_if<Conv2d>(&layers_[idx])) {
      const SlotPair& sp = slots_[cv->quant_idx];
      const std::size_t ic = cv->W.dim(1), oc = cv->W.dim(0);
      const std::size_t kh = cv->W.dim(2), kw = cv->W.dim(3);
      const std::size_t ih = cv->in_h, iw = cv->in_w;
      const std::size_t oh = cv->out_h, ow = cv->out_w;
      const Tensor& aq = cache.qinput;
      const Tensor& Wq = cache.qweight_storage;
      Tensor dWq(cv->W.shape());
      Tensor dAq(aq.shape());
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t o = 0; o < oc; ++o) {
          for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
              const double g = dy[((s * oc + o) * oh + i) * ow + j];
              cv->gb[o] += g;
              for (std::size_t c = 0; c < ic; ++c) {
                for (std::size_t u = 0; u < kh; ++u) {
                  const double* ar =
                      aq.data() + ((s * ic + c) * ih + (i + u)) * iw + j;
                  double* dar =
                      dAq.data() + ((s * ic + c) * ih + (i + u)) * iw + j;
                  double* dwr = dWq.data() + ((o * ic + c) * kh + u) * kw;
                  const double* wr = Wq.data() + ((o * ic + c) * kh + u) * kw;
                  for (std::size_t v = 0; v < kw; ++v) {
                    dwr[v] += g * ar[v];
                    dar[v] += g * wr[v];
                  }
                }
              }
            }
          }
        }
      }
      std::vector<double>* wmg = ws.collect_mix_grads &&
                                         sp.weight.mode == SlotMode::mixture
                                     ? &ws.wmix_grad[cv->quant_idx]
                                     : nullptr;
      std::vector<double>* amg =
          ws.collect_mix_grads && sp.act.mode == SlotMode::mixture
              ? &ws.amix_grad[cv->quant_idx]
              : nullptr;
      cv->gW = weight_slot_backward(sp.weight, dWq, cache.w_branches, wmg);
      dy = act_slot_backward(sp.act, dAq, cache.input, cache.a_branches, amg);
    } else if (std::holds_alternative<Relu>(layers_[idx])) {
      const Tensor& x = cache.input;
      Tensor dx(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) {
        dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
      }
      dy = std::move(dx);
    } else {  // Flatten
      dy = Tensor(cache.input.shape(), dy.vec());
    }
    if (!dy.all_finite()) {
      throw NumericError("non-finite gradient at " +
                         layer_name(idx, layers_[idx]));
    }
  }
}

// ---------------------------------------------------------------------------
// Registry, digest, optimizers.
// ---------------------------------------------------------------------------

std::vector<ParamRef> ComputeGraph::params() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string base = "layer" + std::to_string(i);
    if (auto* d = std::get_if<Dense>(&layers_[i])) {
      out.push_back({base + ".weight", &d->W, &d->gW});
      out.push_back({base + ".bias", &d->b, &d->gb});
    } else if (auto* c = std::get_if<Conv2d>(&layers_[i])) {
      out.push_back({base + ".weight", &c->W, &c->gW});
      out.push_back({base + ".bias", &c->b, &c->gb});
    }
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> ComputeGraph::named_tensors()
    const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto& self = const_cast<ComputeGraph&>(*this);
  for (const ParamRef& p : self.params()) out.emplace_back(p.name, *p.value);
  return out;
}

void ComputeGraph::load_named_tensors(
    const std::vector<std::pair<std::string, Tensor>>& entries) {
  for (ParamRef& p : params()) {
    bool found = false;
    for (const auto& [name, value] : entries) {
      if (name != p.name) continue;
      if (value.shape() != p.value->shape()) {
        throw DataError("checkpoint mismatch: shape differs for " + p.name);
      }
      *p.value = value;
      found = true;
      break;
    }
    if (!found) throw DataError("checkpoint mismatch: missing " + p.name);
  }
}

std::size_t ComputeGraph::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t.numel();
  return n;
}

void ComputeGraph::zero_grads() {
  for (ParamRef& p : params()) p.grad->fill(0.0);
}

std::uint64_t ComputeGraph::weight_digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : named_tensors()) {
    for (const double v : t.vec()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

std::vector<double> ComputeGraph::quant_layer_macs() const {
  std::vector<double> macs(slots_.size(), 0.0);
  for (const Layer& l : layers_) {
    if (const auto* d = std::get_if<Dense>(&l)) {
      macs[d->quant_idx] = d->macs;
    } else if (const auto* c = std::get_if<Conv2d>(&l)) {
      macs[c->quant_idx] = c->macs;
    }
  }
  return macs;
}

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

void Optimizer::step(ComputeGraph& graph) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (kind_ == Optim::sgd) {
    for (ParamRef& p : graph.params()) {
      for (std::size_t i = 0; i < p.value->numel(); ++i) {
        (*p.value)[i] -= lr_ * (*p.grad)[i];
      }
    }
    return;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (ParamRef& p : graph.params()) {
    auto it = moments_.find(p.name);
    if (it == moments_.end()) {
      it = moments_
               .emplace(p.name, std::make_pair(Tensor(p.value->shape()),
                                               Tensor(p.value->shape())))
               .first;
    }
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::size_t i = 0; i < p.value->numel(); ++i) {
      const double g = (*p.grad)[i];
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
      (*p.value)[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
    }
  }
}

void optimizer_step(ComputeGraph& graph, const TrainConfig& cfg) {
  cfg.validate();
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  opt.step(graph);
}

}  // namespace bitshapley
