#pragma once

#include <map>
#include <string>

#include "wdgda/binary_io.hpp"
#include "wdgda/tensor.hpp"

namespace wdgda {

// Tensor snapshot record: "WDGT1", u8 dtype, u8 rank, u32 extents, raw values.
void write_tensor(ByteWriter& out, const Tensor& t);
Tensor read_tensor(ByteReader& in);

// Named-tensor container: "WDGC1", u32 count, then per entry u32 name
// length, name bytes and one tensor record.
using NamedTensors = std::map<std::string, Tensor>;
std::vector<std::uint8_t> encode_named_tensors(const NamedTensors& tensors);
NamedTensors decode_named_tensors(const std::vector<std::uint8_t>& bytes);

}  // namespace wdgda
