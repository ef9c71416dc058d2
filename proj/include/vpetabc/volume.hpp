#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vpetabc {

/// Voxel grid shared by datasets and maps. Voxels are stored x-fastest.
struct VolumeGeometry {
    std::array<std::size_t, 3> dims{1, 1, 1};
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> mask;  // empty: every voxel is in the mask

    std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
    bool in_mask(std::size_t v) const { return mask.empty() || mask[v] != 0; }
    /// Linear indices of in-mask voxels, ascending.
    std::vector<std::size_t> masked_indices() const;
    std::array<std::size_t, 3> coords(std::size_t v) const {
        return {v % dims[0], (v / dims[0]) % dims[1], v / (dims[0] * dims[1])};
    }
};

/// Scalar volume; NaN outside the mask.
struct ParametricMap {
    std::array<std::size_t, 3> dims{1, 1, 1};
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::string field;
    std::vector<float> values;
};

/// Scatter one value per in-mask voxel (in masked_indices() order) into a map.
/// Throws data_error if the value count differs from the masked voxel count.
ParametricMap make_map(std::span<const double> masked_values, const VolumeGeometry& geometry, std::string field);

} // namespace vpetabc
