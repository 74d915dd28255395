#include "bitshapley/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "bitshapley/errors.hpp"

namespace bitshapley {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'H', 'P'};

void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) {
    throw DataError("checkpoint truncated");
  }
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError("checkpoint truncated");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw DataError("checkpoint truncated");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put_u16(os, kCheckpointVersion);
  for (const auto& [name, t] : entries) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (const std::size_t d : t.shape()) {
      put_u32(os, static_cast<std::uint32_t>(d));
    }
    for (const double v : t.vec()) put_f64(os, v);
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad checkpoint magic in " + path);
  }
  const std::uint16_t version = get_u16(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<std::pair<std::string, Tensor>> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw DataError("checkpoint truncated");
    const std::uint32_t rank = get_u32(is);
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = get_u32(is);
      numel *= shape[d];
    }
    std::vector<double> data(numel);
    for (double& v : data) v = get_f64(is);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace bitshapley
