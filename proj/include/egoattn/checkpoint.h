#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "egoattn/tensor.h"

namespace egoattn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

// Checkpoint byte layout, all integers and floats little-endian:
//
//   "EGOATTN1"                      8-byte magic
//   u64 record_count
//   record_count x {
//     u32 name_length, name bytes (UTF-8, no terminator)
//     u32 rank, rank x u64 dims
//     prod(dims) x f64 values, row-major
//   }
//
// Round-trips are bit-exact.
void save_checkpoint(const std::filesystem::path& path, const ParamList& params);
ParamList load_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` into the same-named tensors of `target`.
/// Throws ConfigError on a missing name or a shape mismatch.
void assign_params(const ParamList& target, const ParamList& source);

/// FNV-1a over names, shapes and raw value bytes; equal iff bit-identical.
std::uint64_t param_checksum(const ParamList& params);

ParamList with_prefix(const std::string& prefix, ParamList params);

}  // namespace egoattn
