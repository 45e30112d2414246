#include "mgpu/array_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mgpu/error.hpp"

namespace mgpu::io {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::size_t at, std::uint16_t v) {
  out[at] = static_cast<std::uint8_t>(v);
  out[at + 1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(std::vector<std::uint8_t>& out, std::size_t at, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out[at + b] = static_cast<std::uint8_t>(v >> (8 * b));
}

std::uint16_t get_u16(const std::vector<std::uint8_t>& in, std::size_t at) {
  return static_cast<std::uint16_t>(in[at] | (in[at + 1] << 8));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in[at + b]) << (8 * b);
  return v;
}

std::size_t scalars_per_element(DType t) { return t == DType::Complex32 ? 2 : 1; }

void check_dims(const ArrayInfo& info) {
  if (info.dims.empty() || info.dims.size() > 4) throw ConfigError("array rank must be 1..4");
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open array file " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write array file " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("short write to " + path);
}

}  // namespace

std::size_t ArrayInfo::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> encode(const ArrayInfo& info, const float* values, std::size_t scalar_count) {
  check_dims(info);
  if (scalar_count != info.element_count() * scalars_per_element(info.dtype)) {
    throw UsageError("array size does not match its dimensions");
  }
  std::vector<std::uint8_t> out(header_bytes + 4 * scalar_count, 0);
  std::memcpy(out.data(), "SEGV", 4);
  put_u16(out, 4, format_version);
  put_u16(out, 6, static_cast<std::uint16_t>(info.dtype));
  put_u32(out, 8, static_cast<std::uint32_t>(info.dims.size()));
  for (std::size_t i = 0; i < info.dims.size(); ++i) put_u32(out, 12 + 4 * i, info.dims[i]);
  for (std::size_t i = 0; i < scalar_count; ++i) {
    put_u32(out, header_bytes + 4 * i, std::bit_cast<std::uint32_t>(values[i]));
  }
  return out;
}

ArrayInfo decode(const std::vector<std::uint8_t>& bytes, std::vector<float>& scalars) {
  if (bytes.size() < header_bytes || std::memcmp(bytes.data(), "SEGV", 4) != 0) {
    throw ConfigError("not a SEGV array");
  }
  if (get_u16(bytes, 4) != format_version) throw ConfigError("unsupported SEGV version");
  const auto code = get_u16(bytes, 6);
  if (code != 1 && code != 2) throw ConfigError("unknown SEGV dtype " + std::to_string(code));
  ArrayInfo info;
  info.dtype = static_cast<DType>(code);
  const auto ndim = get_u32(bytes, 8);
  if (ndim < 1 || ndim > 4) throw ConfigError("SEGV rank must be 1..4");
  for (std::uint32_t i = 0; i < ndim; ++i) info.dims.push_back(get_u32(bytes, 12 + 4 * i));
  const auto count = info.element_count() * scalars_per_element(info.dtype);
  if (bytes.size() != header_bytes + 4 * count) throw ConfigError("SEGV payload size mismatch");
  scalars.resize(count);
  for (std::size_t i = 0; i < count; ++i) scalars[i] = std::bit_cast<float>(get_u32(bytes, header_bytes + 4 * i));
  return info;
}

void write_array(const std::string& path, const std::vector<float>& data, const std::vector<std::uint32_t>& dims) {
  write_bytes(path, encode({DType::Real32, dims}, data.data(), data.size()));
}

void write_array(const std::string& path, const std::vector<cfloat>& data, const std::vector<std::uint32_t>& dims) {
  write_bytes(path, encode({DType::Complex32, dims}, reinterpret_cast<const float*>(data.data()), 2 * data.size()));
}

ArrayInfo read_info(const std::string& path) {
  std::vector<float> scalars;
  return decode(read_bytes(path), scalars);
}

std::vector<float> read_real(const std::string& path, ArrayInfo* info) {
  std::vector<float> scalars;
  const auto i = decode(read_bytes(path), scalars);
  if (i.dtype != DType::Real32) throw ConfigError(path + " is not a real32 array");
  if (info) *info = i;
  return scalars;
}

std::vector<cfloat> read_complex(const std::string& path, ArrayInfo* info) {
  std::vector<float> scalars;
  const auto i = decode(read_bytes(path), scalars);
  if (i.dtype != DType::Complex32) throw ConfigError(path + " is not a complex32 array");
  if (info) *info = i;
  std::vector<cfloat> out(scalars.size() / 2);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = {scalars[2 * k], scalars[2 * k + 1]};
  return out;
}

}  // namespace mgpu::io
