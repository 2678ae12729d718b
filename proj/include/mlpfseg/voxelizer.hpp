#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mlpfseg/types.hpp"

namespace mlpfseg {

// Axis-aligned voxelization over a bounded box, half-open per axis:
// a point is kept when bounds_min[a] <= coord < bounds_max[a] for all axes.
struct VoxelGridConfig {
    double resolution = 0.1;                         // meters per voxel edge
    std::array<double, 3> bounds_min{-50.0, 6.0, -7.0};
    std::array<double, 3> bounds_max{50.0, 106.0, 11.0};
    int max_points_per_voxel = 5;

    void validate() const;
};

using VoxelIndex = std::array<int64_t, 3>;

// Occupied voxels sorted lexicographically by index triple, so the voxel
// ordering does not depend on point order. Member point indices are stored
// ascending; once a voxel reaches max_points_per_voxel, later points drop.
struct VoxelGrid {
    VoxelGridConfig config;
    std::vector<VoxelIndex> voxel_indices;      // N1 triples
    std::vector<std::vector<int>> members;      // per-voxel retained point indices
    std::vector<std::vector<double>> features;  // N1 x c_p, empty until featurized
    int feature_channels = 0;

    size_t occupied_count() const { return voxel_indices.size(); }
    std::array<double, 3> voxel_center(size_t voxel) const {
        const double r = config.resolution;
        const auto& idx = voxel_indices[voxel];
        return {(idx[0] + 0.5) * r, (idx[1] + 0.5) * r, (idx[2] + 0.5) * r};
    }
};

// Maps every in-bounds point i to (floor(x/r), floor(y/r), floor(z/r)).
VoxelGrid assign_voxels(const PointCloud& cloud, const VoxelGridConfig& config);

// Deterministic per-point feature function; must return exactly c_p values.
using PointEncoder = std::function<std::vector<double>(const std::array<double, 4>&)>;

// Fixed sinusoidal embedding of (x, y, z, r); `layer` shifts the frequency
// bank so different encoder layers produce different (but still fixed) maps.
PointEncoder default_point_encoder(int channels, int layer = 0);

// Sets each occupied voxel's feature row to the mean of encoder(point) over
// its retained members. Throws when the encoder emits a row that is not c_p wide.
void featurize_voxels(VoxelGrid& grid, const PointCloud& cloud, const PointEncoder& encoder, int c_p);

// Inverse-distance interpolation from the 3 occupied voxels whose centers are
// nearest the query (all of them when fewer exist): sum of w_hat_i * F[v_i]
// with w_i = 1 / (d(p, v_i) + eps). Ties at equal distance break toward the
// lexicographically smaller voxel triple.
class VoxelFeatureInterpolator {
public:
    explicit VoxelFeatureInterpolator(const VoxelGrid& grid, double eps = 1e-8);
    ~VoxelFeatureInterpolator();
    VoxelFeatureInterpolator(VoxelFeatureInterpolator&&) noexcept;
    VoxelFeatureInterpolator& operator=(VoxelFeatureInterpolator&&) noexcept;

    std::vector<double> operator()(const std::array<double, 3>& query) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// One-shot convenience wrapper around VoxelFeatureInterpolator.
std::vector<double> interpolate_point_features(const VoxelGrid& grid, const std::array<double, 3>& query,
                                               double eps = 1e-8);

}  // namespace mlpfseg
