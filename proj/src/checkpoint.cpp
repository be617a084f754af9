#include "skelreid/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace skelreid {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'K', 'R', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw ParseError("checkpoint: truncated file", 0);
  return value;
}

std::string get_string(std::istream& in, std::uint64_t size) {
  if (size > (std::uint64_t{1} << 32)) throw ParseError("checkpoint: implausible string length", 0);
  std::string s(size, '\0');
  if (size && !in.read(s.data(), static_cast<std::streamsize>(size))) {
    throw ParseError("checkpoint: truncated file", 0);
  }
  return s;
}

}  // namespace

const Tensor<Real>& Checkpoint::at(const std::string& name) const {
  for (const auto& [key, tensor] : tensors) {
    if (key == name) return tensor;
  }
  throw SchemaError("checkpoint: missing tensor '" + name + "'");
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  put<std::uint64_t>(out, ckpt.metadata.size());
  out.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (Index extent : tensor.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(extent));
    out.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * sizeof(Real)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw ParseError("checkpoint: bad magic", 0);
  const auto version = get<std::uint32_t>(in);
  if (version != Checkpoint::kVersion) {
    throw SchemaError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in);
  Checkpoint ckpt;
  ckpt.metadata = get_string(in, get<std::uint64_t>(in));
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in, get<std::uint32_t>(in));
    const auto rank = get<std::uint32_t>(in);
    if (rank > 8) throw ParseError("checkpoint: implausible tensor rank", 0);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(get<std::uint64_t>(in)));
    Tensor<Real> tensor(shape);
    if (tensor.size() &&
        !in.read(reinterpret_cast<char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * sizeof(Real)))) {
      throw ParseError("checkpoint: truncated tensor '" + name + "'", 0);
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(tensor));
  }
  return ckpt;
}

}  // namespace skelreid
