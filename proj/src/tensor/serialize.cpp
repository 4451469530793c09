#include "wdgda/serialize.hpp"

#include <fstream>
#include <iterator>

namespace wdgda {

namespace {
constexpr std::string_view kTensorMagic = "WDGT1";
constexpr std::string_view kContainerMagic = "WDGC1";
}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

void write_tensor(ByteWriter& out, const Tensor& t) {
  out.magic(kTensorMagic);
  out.u8(static_cast<std::uint8_t>(t.dtype()));
  out.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) out.u32(static_cast<std::uint32_t>(e));
  if (t.dtype() == DType::F32) {
    for (double v : t.data()) out.f32(static_cast<float>(v));
  } else {
    for (double v : t.data()) out.f64(v);
  }
}

Tensor read_tensor(ByteReader& in) {
  in.expect_magic(kTensorMagic);
  const auto code_at = in.offset();
  const auto code = in.u8("dtype code");
  if (code > 1) throw ParseError("unknown dtype code " + std::to_string(code), code_at);
  const auto dtype = static_cast<DType>(code);
  const auto rank = in.u8("rank");
  Shape shape;
  std::uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const auto at = in.offset();
    const auto e = in.u32("extent");
    if (e == 0) throw ParseError("zero extent", at);
    count *= e;
    if (count > (1ull << 34)) throw ParseError("tensor extents overflow", at);
    shape.push_back(e);
  }
  const std::uint64_t width = dtype == DType::F32 ? 4 : 8;
  in.need(count * width, "tensor values");
  std::vector<double> values(count);
  for (auto& v : values) {
    v = dtype == DType::F32 ? static_cast<double>(in.scalar<float>("value"))
                            : in.scalar<double>("value");
  }
  return Tensor::from_data(std::move(shape), std::move(values), dtype);
}

std::vector<std::uint8_t> encode_named_tensors(const NamedTensors& tensors) {
  ByteWriter out;
  out.magic(kContainerMagic);
  out.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    out.u32(static_cast<std::uint32_t>(name.size()));
    out.bytes(name.data(), name.size());
    write_tensor(out, t);
  }
  return out.release();
}

NamedTensors decode_named_tensors(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  in.expect_magic(kContainerMagic);
  const auto count = in.u32("entry count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.u32("name length");
    const auto at = in.offset();
    auto name = in.string(len, "name");
    if (out.count(name)) throw ParseError("duplicate tensor name '" + name + "'", at);
    out.emplace(std::move(name), read_tensor(in));
  }
  if (in.remaining() != 0) {
    throw ParseError(std::to_string(in.remaining()) + " trailing bytes after last entry",
                     in.offset());
  }
  return out;
}

}  // namespace wdgda
