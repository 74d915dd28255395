#pragma once

#include <cstdint>
#include <vector>

#include "bitshapley/tensor.hpp"

namespace bitshapley {

/// Candidate bit-width.  32 denotes full precision: a pass-through on any
/// network edge, never a grid.
class BitWidth {
 public:
  BitWidth() = default;
  explicit BitWidth(int bits) : bits_(bits) {
    if (bits < 1 || bits > 32) {
      throw std::invalid_argument("bit-width must lie in [1, 32]");
    }
  }

  int bits() const { return bits_; }
  bool full_precision() const { return bits_ == 32; }
  /// Number of representable levels, as a double (2^32 overflows int).
  double levels() const { return std::ldexp(1.0, bits_); }

  friend bool operator==(BitWidth a, BitWidth b) = default;
  friend auto operator<=>(BitWidth a, BitWidth b) = default;

 private:
  int bits_ = 32;
};

/// Immutable after calibration.  clip_max bounds the unsigned activation
/// grid; per_tensor_scale records the symmetric weight range last used.
struct QuantizerState {
  double clip_max = 1.0;
  double per_tensor_scale = 1.0;
};

/// Symmetric uniform fake-quantization of a weight tensor.  scale = max|w|;
/// the grid is {-scale + 2*scale*k/(2^b - 1)}.  b = 32 returns w unchanged,
/// an all-zero tensor quantizes to all zeros (the degenerate scale case is
/// not an error: it occurs transiently during training).
Tensor quantize_weights(const Tensor& w, BitWidth b);

/// Same, but also reports the scale actually used.
Tensor quantize_weights(const Tensor& w, BitWidth b, double* scale_out);

/// Unsigned uniform fake-quantization onto [0, clip_max] with 2^b levels.
/// Values below 0 clip to 0 and values above clip_max saturate.  At b = 32
/// the grid degenerates to the identity on [0, clip_max] (saturation still
/// applies).  Throws on non-positive clip_max.
Tensor quantize_activations(const Tensor& a, BitWidth b,
                            const QuantizerState& state);

/// Straight-through estimator for the activation quantizer: the gradient of
/// the clipped-identity surrogate.  Passes `upstream` where the pre-quant
/// input lies inside [0, clip_max], zero outside.
Tensor ste_grad(const Tensor& upstream, const Tensor& input,
                const QuantizerState& state);

/// clip_max = 99.9th percentile (nearest rank) of all observed activation
/// magnitudes across the calibration stream.  Throws DataError on an empty
/// stream.  A degenerate all-zero stream yields a tiny positive clip so the
/// state invariant clip_max > 0 holds.
QuantizerState calibrate_clip(const std::vector<Tensor>& activations);

}  // namespace bitshapley
