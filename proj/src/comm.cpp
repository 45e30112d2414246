#include "mgpu/comm.hpp"

namespace mgpu::detail {

std::vector<std::pair<std::size_t, std::size_t>> window_runs(const Window2D& w, std::size_t len) {
  if (w.pitch == 0 || w.cols == 0 || w.rows == 0 || w.col + w.cols > w.pitch ||
      (w.row + w.rows) * w.pitch > len) {
    throw UsageError("all_reduce: window outside the buffer");
  }
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  runs.reserve(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const auto b = (w.row + r) * w.pitch + w.col;
    runs.emplace_back(b, b + w.cols);
  }
  return runs;
}

std::vector<std::pair<std::size_t, std::size_t>> slice_runs(
    const std::vector<std::pair<std::size_t, std::size_t>>& runs, std::size_t lo, std::size_t hi) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t pos = 0;
  for (const auto& [b, e] : runs) {
    const auto n = e - b;
    const auto s = std::max(lo, pos);
    const auto t = std::min(hi, pos + n);
    if (s < t) out.emplace_back(b + (s - pos), b + (t - pos));
    pos += n;
    if (pos >= hi) break;
  }
  return out;
}

}  // namespace mgpu::detail
