#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "alike/tensor.hpp"

namespace alike {

/// Leading bytes of every weight checkpoint.
inline constexpr char kCheckpointMagic[] = "ALIKEKIT1";

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

/// Binary layout after the magic, repeated until end of file:
///   u32 name length, name bytes, u32 rank, rank x i64 extents, f32 data
/// All integers and floats little-endian.
void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors);
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);

/// Throws InputError naming the byte offset of the first malformed record.
std::vector<NamedTensor> read_checkpoint(std::istream& in, const std::string& source = "<stream>");
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

}  // namespace alike
