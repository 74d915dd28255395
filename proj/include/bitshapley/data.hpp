#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitshapley/tensor.hpp"

namespace bitshapley {

/// Immutable after construction; freely shared across threads.
struct Dataset {
  Tensor inputs;            // n x d or n x c x h x w
  std::vector<int> labels;  // class ids in [0, classes)
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  void validate() const;

  /// Rows lo..hi (exclusive) as a batch tensor.
  Tensor batch(std::size_t lo, std::size_t hi) const;
  Tensor rows(const std::vector<std::size_t>& idx) const;
  std::vector<int> label_rows(const std::vector<std::size_t>& idx) const;
};

enum class SyntheticKind { gaussians, moons, spirals };

SyntheticKind synthetic_kind_from(const std::string& name);

/// Seeded 2-d synthetic classification sets, class-balanced within +/-1 and
/// scaled to roughly the unit square so the unsigned activation pipeline
/// sees non-negative features.  `classes` applies to gaussians and spirals;
/// moons is inherently two-class.
Dataset gen_synthetic(SyntheticKind kind, std::size_t n, double noise,
                      std::uint64_t seed, int classes = 2);

/// IDX image + label files (big-endian headers, u8 payload).  Pixels scale
/// to [0, 1]; shapes come out as (n, 1, h, w).  Throws DataError on magic
/// mismatch, truncation, or image/label count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Inverse of load_idx for fixtures; round-trips byte-exactly.
void save_idx(const Dataset& dataset, const std::string& images_path,
              const std::string& labels_path);

/// Disjoint, exhaustive, seeded, per-class stratified split.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double val_fraction,
                                  std::uint64_t seed);

}  // namespace bitshapley
