#include "mgpu/segvec.hpp"

#include <algorithm>

namespace mgpu {

namespace {

// Splits `count` items over `parts`, remainder to the lowest indices.
std::vector<std::size_t> natural_counts(std::size_t count, std::size_t parts) {
  std::vector<std::size_t> out(parts, count / parts);
  for (std::size_t i = 0; i < count % parts; ++i) ++out[i];
  return out;
}

}  // namespace

std::string to_string(const SplitPolicy& p) {
  struct V {
    std::string operator()(const Natural&) const { return "natural"; }
    std::string operator()(const Blockwise& b) const { return "blockwise(" + std::to_string(b.block_len) + ")"; }
    std::string operator()(const Clone&) const { return "clone"; }
    std::string operator()(const Overlap2D& o) const {
      return "overlap2d(" + std::to_string(o.rows) + "x" + std::to_string(o.cols) + ",halo=" +
             std::to_string(o.halo) + ")";
    }
  };
  return std::visit(V{}, p);
}

std::vector<SegmentDescriptor> plan_segments(std::size_t logical_len, const SplitPolicy& policy,
                                             int devices) {
  if (devices < 1) throw UsageError("no devices");
  const auto g = static_cast<std::size_t>(devices);
  std::vector<SegmentDescriptor> out;

  if (std::holds_alternative<Clone>(policy)) {
    if (logical_len == 0) throw UsageError("empty clone vector");
    for (int r = 0; r < devices; ++r) out.push_back({r, 0, logical_len, 0, 0});
    return out;
  }

  if (std::holds_alternative<Natural>(policy)) {
    if (logical_len < g) {
      throw UsageError("natural split of " + std::to_string(logical_len) + " elements over " +
                       std::to_string(devices) + " devices leaves a device empty");
    }
    std::size_t off = 0;
    const auto counts = natural_counts(logical_len, g);
    for (int r = 0; r < devices; ++r) {
      out.push_back({r, off, counts[static_cast<std::size_t>(r)], 0, 0});
      off += counts[static_cast<std::size_t>(r)];
    }
    return out;
  }

  if (const auto* b = std::get_if<Blockwise>(&policy)) {
    if (b->block_len == 0) throw UsageError("block length must be positive");
    if (logical_len == 0) throw UsageError("empty blockwise vector");
    const std::size_t blocks = (logical_len + b->block_len - 1) / b->block_len;
    const auto counts = natural_counts(blocks, g);
    std::size_t off = 0;
    for (int r = 0; r < devices; ++r) {
      const auto n = std::min(counts[static_cast<std::size_t>(r)] * b->block_len, logical_len - off);
      if (n == 0) continue;
      out.push_back({r, off, n, 0, 0});
      off += n;
    }
    return out;
  }

  const auto& o = std::get<Overlap2D>(policy);
  if (o.rows * o.cols != logical_len || logical_len == 0) {
    throw UsageError("overlap2d shape " + std::to_string(o.rows) + "x" + std::to_string(o.cols) +
                     " does not match length " + std::to_string(logical_len));
  }
  if (o.rows < g) throw UsageError("overlap2d needs at least one row per device");
  const auto rows = natural_counts(o.rows, g);
  std::size_t row = 0;
  for (int r = 0; r < devices; ++r) {
    const auto n = rows[static_cast<std::size_t>(r)];
    SegmentDescriptor d{r, row * o.cols, n * o.cols, 0, 0};
    d.halo_lo = std::min(o.halo, row);
    d.halo_hi = std::min(o.halo, o.rows - row - n);
    out.push_back(d);
    row += n;
  }
  return out;
}

std::size_t local_extent(const SegmentDescriptor& d, const SplitPolicy& policy) {
  if (const auto* o = std::get_if<Overlap2D>(&policy)) return d.len + (d.halo_lo + d.halo_hi) * o->cols;
  return d.len;
}

}  // namespace mgpu
