#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vpetabc {

/// One in-plane slice, x fastest. Out-of-mask or undefined values are NaN.
struct Map2d {
    std::size_t nx = 0, ny = 0;
    std::vector<double> values;

    std::size_t size() const noexcept { return nx * ny; }
    double at(std::size_t x, std::size_t y) const { return values[y * nx + x]; }
};

struct MoranConfig {
    double fwhm_mm = 40.0;
    double spacing_x_mm = 1.0;
    double spacing_y_mm = 1.0;

    /// Throws config_error unless FWHM and spacings are positive.
    void validate() const;
};

/// Per-axis Gaussian σ in voxels for the detrending kernel.
double detrend_sigma_voxels(double fwhm_mm, double spacing_mm);

/// Normalised separable Gaussian smoothing restricted to the mask
/// (kernel mass renormalised over in-mask support, truncated at 4σ).
Map2d masked_gaussian_smooth(const Map2d& map, std::span<const std::uint8_t> mask, const MoranConfig& cfg);

/// Subtract the masked Gaussian trend, then z-score in the mask (population
/// std). Throws data_error for an empty mask, non-finite in-mask values or a
/// zero-variance residual.
Map2d detrend_zscore(const Map2d& map, std::span<const std::uint8_t> mask, const MoranConfig& cfg);

/// Row-standardised inverse-distance weights of the 8 in-plane neighbours
/// inside the mask; `offsets` are (dx, dy) of each neighbour.
struct NeighbourWeights {
    std::vector<std::int8_t> dx, dy;
    std::vector<double> weights;   // 8 per voxel; 0 for absent neighbours
    std::vector<std::uint8_t> has_neighbours;
};

NeighbourWeights moran_weights(std::size_t nx, std::size_t ny, std::span<const std::uint8_t> mask,
                               const MoranConfig& cfg);

/// I_j = z_j · Σ_k w_jk z_k. NaN out of mask and where no in-mask neighbour exists.
Map2d local_morans_i(const Map2d& z, std::span<const std::uint8_t> mask, const MoranConfig& cfg);

/// Global Moran's I under the same weights.
double global_morans_i(const Map2d& z, std::span<const std::uint8_t> mask, const MoranConfig& cfg);

/// Pearson correlation over voxels finite in both maps; NaN when undefined.
double pearson(std::span<const double> a, std::span<const double> b);

struct MoranReport {
    std::vector<std::string> names;
    std::vector<Map2d> local_i;
    std::vector<double> q75, median;
    std::vector<double> correlation;   // names.size()² row-major

    double corr(std::size_t a, std::size_t b) const { return correlation[a * names.size() + b]; }
};

struct NamedMap {
    std::string name;
    Map2d map;
};

/// detrend_zscore + local_morans_i per map, then q75/median of each I map and
/// all-pairs Pearson correlations. Throws data_error on geometry mismatch.
MoranReport moran_compare(std::span<const NamedMap> maps, std::span<const std::uint8_t> mask, const MoranConfig& cfg);

} // namespace vpetabc
