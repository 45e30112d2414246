#include <cstdio>
#include <filesystem>

#include "mgpu/array_io.hpp"

// Overwrites every kspace_*.segv in a directory with zeros.
int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: zero_kspace DIR\n");
    return 2;
  }
  int count = 0;
  for (const auto& e : std::filesystem::directory_iterator(argv[1])) {
    const auto name = e.path().filename().string();
    if (!name.starts_with("kspace_")) continue;
    mgpu::io::ArrayInfo info;
    auto data = mgpu::io::read_complex(e.path().string(), &info);
    std::fill(data.begin(), data.end(), mgpu::cfloat{});
    mgpu::io::write_array(e.path().string(), data, info.dims);
    ++count;
  }
  return count > 0 ? 0 : 1;
}
