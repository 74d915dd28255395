#include "bitshapley/quantize.hpp"

#include <algorithm>
#include <cmath>

#include "bitshapley/errors.hpp"

namespace bitshapley {

Tensor quantize_weights(const Tensor& w, BitWidth b) {
  return quantize_weights(w, b, nullptr);
}

Tensor quantize_weights(const Tensor& w, BitWidth b, double* scale_out) {
  if (b.full_precision()) {
    if (scale_out) *scale_out = 1.0;
    return w;
  }
  double scale = 0.0;
  for (const double v : w.vec()) scale = std::max(scale, std::abs(v));
  if (scale_out) *scale_out = scale;
  Tensor q(w.shape());
  if (scale == 0.0) return q;  // all-zero in, all-zero out

  const double steps = b.levels() - 1.0;  // 2^b - 1 grid intervals
  const double delta = 2.0 * scale / steps;
  for (std::size_t i = 0; i < w.numel(); ++i) {
    double k = std::round((w[i] + scale) / delta);
    k = std::clamp(k, 0.0, steps);
    // pin the endpoints so max|q| reproduces the scale bit-exactly and a
    // second pass lands on the same grid
    q[i] = k == steps ? scale : -scale + k * delta;
  }
  return q;
}

Tensor quantize_activations(const Tensor& a, BitWidth b,
                            const QuantizerState& state) {
  if (state.clip_max <= 0.0) {
    throw std::invalid_argument("quantize_activations: clip_max must be > 0");
  }
  Tensor q(a.shape());
  if (b.full_precision()) {
    for (std::size_t i = 0; i < a.numel(); ++i) {
      q[i] = std::clamp(a[i], 0.0, state.clip_max);
    }
    return q;
  }
  const double steps = b.levels() - 1.0;
  const double delta = state.clip_max / steps;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = std::clamp(a[i], 0.0, state.clip_max);
    q[i] = delta * std::round(x / delta);
  }
  return q;
}

Tensor ste_grad(const Tensor& upstream, const Tensor& input,
                const QuantizerState& state) {
  if (!upstream.same_shape(input)) {
    throw std::invalid_argument("ste_grad: shape mismatch");
  }
  Tensor g(upstream.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const bool inside = input[i] >= 0.0 && input[i] <= state.clip_max;
    g[i] = inside ? upstream[i] : 0.0;
  }
  return g;
}

QuantizerState calibrate_clip(const std::vector<Tensor>& activations) {
  std::vector<double> mags;
  for (const Tensor& t : activations) {
    for (const double v : t.vec()) mags.push_back(std::abs(v));
  }
  if (mags.empty()) {
    throw DataError("calibrate_clip: empty calibration stream");
  }
  std::sort(mags.begin(), mags.end());
  // Nearest-rank 99.9th percentile.
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.999 * static_cast<double>(mags.size())));
  double clip = mags[std::max<std::size_t>(rank, 1) - 1];
  if (clip <= 0.0) clip = 1e-12;
  QuantizerState s;
  s.clip_max = clip;
  return s;
}

}  // namespace bitshapley
