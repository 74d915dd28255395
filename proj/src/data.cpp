#include "bitshapley/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "bitshapley/errors.hpp"
#include "bitshapley/rng.hpp"

namespace bitshapley {

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset: empty");
  if (inputs.dim(0) != labels.size()) {
    throw DataError("dataset: input/label count mismatch");
  }
  if (!inputs.all_finite()) throw DataError("dataset: non-finite input");
  for (const int y : labels) {
    if (y < 0 || y >= classes) throw DataError("dataset: label out of range");
  }
}

Tensor Dataset::batch(std::size_t lo, std::size_t hi) const {
  const std::size_t sample = inputs.numel() / inputs.dim(0);
  std::vector<std::size_t> shape = inputs.shape();
  shape[0] = hi - lo;
  return Tensor(shape,
                std::vector<double>(inputs.vec().begin() + lo * sample,
                                    inputs.vec().begin() + hi * sample));
}

Tensor Dataset::rows(const std::vector<std::size_t>& idx) const {
  const std::size_t sample = inputs.numel() / inputs.dim(0);
  std::vector<std::size_t> shape = inputs.shape();
  shape[0] = idx.size();
  std::vector<double> data;
  data.reserve(idx.size() * sample);
  for (const std::size_t i : idx) {
    data.insert(data.end(), inputs.vec().begin() + i * sample,
                inputs.vec().begin() + (i + 1) * sample);
  }
  return Tensor(shape, std::move(data));
}

std::vector<int> Dataset::label_rows(const std::vector<std::size_t>& idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (const std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

SyntheticKind synthetic_kind_from(const std::string& name) {
  if (name == "gaussians") return SyntheticKind::gaussians;
  if (name == "moons") return SyntheticKind::moons;
  if (name == "spirals") return SyntheticKind::spirals;
  throw ConfigError("unknown synthetic dataset kind: " + name);
}

Dataset gen_synthetic(SyntheticKind kind, std::size_t n, double noise,
                      std::uint64_t seed, int classes) {
  if (classes < 2) throw ConfigError("gen_synthetic: need at least 2 classes");
  if (kind == SyntheticKind::moons) classes = 2;
  if (n < static_cast<std::size_t>(classes)) {
    throw ConfigError("gen_synthetic: n must be >= class count");
  }
  Rng rng(derive_seed(seed, "synthetic"));
  Dataset d;
  d.classes = classes;
  d.inputs = Tensor({n, 2});
  d.labels.resize(n);

  using std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    d.labels[i] = c;
    double x = 0, y = 0;
    switch (kind) {
      case SyntheticKind::gaussians: {
        // class means on a circle of radius 0.3 around (0.5, 0.5)
        const double ang = 2.0 * pi * c / classes;
        x = 0.5 + 0.3 * std::cos(ang) + noise * rng.normal();
        y = 0.5 + 0.3 * std::sin(ang) + noise * rng.normal();
        break;
      }
      case SyntheticKind::moons: {
        const double t = pi * rng.uniform();
        if (c == 0) {
          x = std::cos(t);
          y = std::sin(t);
        } else {
          x = 1.0 - std::cos(t);
          y = 0.5 - std::sin(t);
        }
        x += noise * rng.normal();
        y += noise * rng.normal();
        // fixed affine map into the unit square
        x = (x + 1.5) / 4.0;
        y = (y + 1.0) / 2.5;
        break;
      }
      case SyntheticKind::spirals: {
        const double t = rng.uniform();
        const double r = 0.08 + 0.42 * t;
        const double ang = 2.0 * pi * (1.75 * t + static_cast<double>(c) / classes);
        x = 0.5 + r * std::cos(ang) + noise * rng.normal();
        y = 0.5 + r * std::sin(ang) + noise * rng.normal();
        break;
      }
    }
    d.inputs.at2(i, 0) = x;
    d.inputs.at2(i, 1) = y;
  }
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// IDX.
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError("truncated IDX file: " + path);
  }
  return (static_cast<std::uint32_t>(b[0]) << 24) |
         (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | b[3];
}

void write_u32_be(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw DataError("cannot open IDX images: " + images_path);
  if (read_u32_be(imgs, images_path) != kImageMagic) {
    throw DataError("bad IDX image magic in " + images_path);
  }
  const std::uint32_t n = read_u32_be(imgs, images_path);
  const std::uint32_t h = read_u32_be(imgs, images_path);
  const std::uint32_t w = read_u32_be(imgs, images_path);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * h * w);
  if (!imgs.read(reinterpret_cast<char*>(pixels.data()),
                 static_cast<std::streamsize>(pixels.size()))) {
    throw DataError("truncated IDX image payload: " + images_path);
  }

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw DataError("cannot open IDX labels: " + labels_path);
  if (read_u32_be(labs, labels_path) != kLabelMagic) {
    throw DataError("bad IDX label magic in " + labels_path);
  }
  const std::uint32_t ln = read_u32_be(labs, labels_path);
  if (ln != n) {
    throw DataError("IDX image/label count mismatch: " + std::to_string(n) +
                    " vs " + std::to_string(ln));
  }
  std::vector<unsigned char> raw_labels(ln);
  if (!labs.read(reinterpret_cast<char*>(raw_labels.data()), ln)) {
    throw DataError("truncated IDX label payload: " + labels_path);
  }

  Dataset d;
  d.inputs = Tensor({n, 1, h, w});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    d.inputs[i] = static_cast<double>(pixels[i]) / 255.0;
  }
  d.labels.assign(raw_labels.begin(), raw_labels.end());
  int max_label = 0;
  for (const int y : d.labels) max_label = std::max(max_label, y);
  d.classes = max_label + 1;
  d.validate();
  return d;
}

void save_idx(const Dataset& dataset, const std::string& images_path,
              const std::string& labels_path) {
  if (dataset.inputs.rank() != 4 || dataset.inputs.dim(1) != 1) {
    throw DataError("save_idx: expected (n, 1, h, w) images");
  }
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw DataError("cannot write IDX images: " + images_path);
  write_u32_be(imgs, kImageMagic);
  write_u32_be(imgs, static_cast<std::uint32_t>(dataset.inputs.dim(0)));
  write_u32_be(imgs, static_cast<std::uint32_t>(dataset.inputs.dim(2)));
  write_u32_be(imgs, static_cast<std::uint32_t>(dataset.inputs.dim(3)));
  for (const double v : dataset.inputs.vec()) {
    const double scaled = std::clamp(std::round(v * 255.0), 0.0, 255.0);
    const unsigned char b = static_cast<unsigned char>(scaled);
    imgs.write(reinterpret_cast<const char*>(&b), 1);
  }

  std::ofstream labs(labels_path, std::ios::binary);
  if (!labs) throw DataError("cannot write IDX labels: " + labels_path);
  write_u32_be(labs, kLabelMagic);
  write_u32_be(labs, static_cast<std::uint32_t>(dataset.labels.size()));
  for (const int y : dataset.labels) {
    const unsigned char b = static_cast<unsigned char>(y);
    labs.write(reinterpret_cast<const char*>(&b), 1);
  }
}

// ---------------------------------------------------------------------------
// Split.
// ---------------------------------------------------------------------------

std::pair<Dataset, Dataset> split(const Dataset& dataset, double val_fraction,
                                  std::uint64_t seed) {
  if (val_fraction <= 0.0 || val_fraction >= 1.0) {
    throw ConfigError("split: val_fraction must lie strictly inside (0, 1)");
  }
  dataset.validate();

  std::vector<std::vector<std::size_t>> by_class(dataset.classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[dataset.labels[i]].push_back(i);
  }

  std::vector<std::size_t> train_idx, val_idx;
  for (int c = 0; c < dataset.classes; ++c) {
    std::vector<std::size_t>& ids = by_class[c];
    Rng rng(derive_seed(seed, "split.class", static_cast<std::uint64_t>(c)));
    rng.shuffle(ids);
    const std::size_t n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(ids.size())));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      (i < n_val ? val_idx : train_idx).push_back(ids[i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  const auto subset = [&](const std::vector<std::size_t>& idx) {
    Dataset d;
    d.inputs = dataset.rows(idx);
    d.labels = dataset.label_rows(idx);
    d.classes = dataset.classes;
    return d;
  };
  return {subset(train_idx), subset(val_idx)};
}

}  // namespace bitshapley
