#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgpu/segvec.hpp"

namespace mgpu::io {

/// Array file layout: a 32-byte header followed by little-endian values.
///   0  char[4] magic "SEGV"
///   4  u16     version (1)
///   6  u16     dtype (1 = real32, 2 = complex32 interleaved re, im)
///   8  u32     ndim (1..4)
///  12  u32[4]  dims, slowest varying first, unused entries 0
///  28  u8[4]   reserved, zero
enum class DType : std::uint16_t { Real32 = 1, Complex32 = 2 };

inline constexpr std::uint16_t format_version = 1;
inline constexpr std::size_t header_bytes = 32;

struct ArrayInfo {
  DType dtype = DType::Real32;
  std::vector<std::uint32_t> dims;

  std::size_t element_count() const;
};

void write_array(const std::string& path, const std::vector<float>& data, const std::vector<std::uint32_t>& dims);
void write_array(const std::string& path, const std::vector<cfloat>& data, const std::vector<std::uint32_t>& dims);

ArrayInfo read_info(const std::string& path);
/// Throws ConfigError if the file is not a real32 array.
std::vector<float> read_real(const std::string& path, ArrayInfo* info = nullptr);
/// Throws ConfigError if the file is not a complex32 array.
std::vector<cfloat> read_complex(const std::string& path, ArrayInfo* info = nullptr);

/// In-memory encoding, used by the file functions.
std::vector<std::uint8_t> encode(const ArrayInfo& info, const float* values, std::size_t scalar_count);
ArrayInfo decode(const std::vector<std::uint8_t>& bytes, std::vector<float>& scalars);

}  // namespace mgpu::io
