#pragma once

#include "skelreid/skeleton.hpp"
#include "skelreid/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace skelreid {

/// Named tensors plus a free-form JSON metadata string.
///
/// On-disk layout (all integers little-endian):
///
///   char[8]   magic "SKRCKPT\0"
///   u32       format version (1)
///   u32       tensor count N
///   u64       metadata byte length, then the UTF-8 JSON metadata
///   N times:  u32 name length, name bytes,
///             u32 rank, u64 extents[rank],
///             f64 values[product of extents], row-major
///
/// Tensors are written in insertion order, so identical parameter sets
/// produce identical files.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string metadata = "{}";
  std::vector<std::pair<std::string, Tensor<Real>>> tensors;

  const Tensor<Real>& at(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

}  // namespace skelreid
