#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mgpu/nlinv.hpp"
#include "mgpu/segvec.hpp"

namespace mgpu::phantom {

/// Coordinates are normalized so the field of view spans [-1, 1] on both
/// axes, y pointing up. `angle` is in degrees, intensities add up.
struct Ellipse {
  double cx = 0.0;
  double cy = 0.0;
  double ax = 1.0;
  double ay = 1.0;
  double angle = 0.0;
  double intensity = 1.0;
};

/// Per-frame rigid translation and isotropic dilation, applied t times in
/// frame t.
struct Motion {
  double dx = 0.0;
  double dy = 0.0;
  double dilation = 0.0;
};

struct PhantomSpec {
  std::size_t n = 32;
  std::vector<Ellipse> ellipses;
  Motion motion;

  /// Modified Shepp-Logan head.
  static PhantomSpec shepp_logan(std::size_t n);
};

/// n x n real image of frame `frame`. Throws if an ellipse leaves the field
/// of view.
std::vector<float> make_phantom(const PhantomSpec& spec, int frame = 0);

enum class CoilModel { GaussianRing, Uniform };

/// Complex Gaussian lobes centered on a ring around the field of view.
struct CoilSpec {
  std::size_t channels = 4;
  CoilModel model = CoilModel::GaussianRing;
  double ring_radius = 1.3;  // field-of-view half widths
  double lobe_width = 0.9;   // Gaussian sigma, same units
  double phase_slope = 0.5;  // radians per unit, along the coil direction
  std::uint64_t seed = 1;
};

/// channels x ng x ng sensitivities on the doubled grid, scaled so the
/// largest root-sum-of-squares value is 1.
std::vector<cfloat> make_coils(const CoilSpec& spec, const nlinv::ReconGrid& grid);

/// Root-sum-of-squares over channels, ng x ng.
std::vector<float> coil_rss(const std::vector<cfloat>& coils, std::size_t channels);

/// Largest absolute finite difference between neighboring pixels of one map.
double max_gradient(std::span<const cfloat> map, std::size_t ng);

/// Cartesian column mask on the unshifted ng x ng k-space grid: the
/// `center_band` lowest frequencies are always sampled, the remaining
/// columns are drawn with a density falling off with |k| until
/// round(density * ng) columns are set.
std::vector<float> make_mask(std::size_t ng, double density, std::size_t center_band, std::uint64_t seed);

/// Fraction of sampled columns of a column mask.
double column_fraction(const std::vector<float>& mask, std::size_t ng);

/// y_j = P FFT(M (image c_j)) + sigma n_j on sampled entries, where n_j is
/// unit-variance circular complex Gaussian noise. `image` is n x n.
std::vector<cfloat> simulate_acquisition(const std::vector<float>& image, const std::vector<cfloat>& coils,
                                         const std::vector<float>& mask, const nlinv::ReconGrid& grid,
                                         std::size_t channels, double sigma, std::uint64_t seed);

/// Weighted-domain representation chat_j = w FFT(c_j) of given coil maps, so
/// that W^-1 chat_j = c_j. Double precision.
std::vector<cfloat> to_weighted_domain(const std::vector<cfloat>& coils, const nlinv::ReconGrid& grid,
                                       std::size_t channels, const nlinv::WeightParams& weights);

}  // namespace mgpu::phantom
