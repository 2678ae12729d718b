#include "mlpfseg/voxelizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "kdtree.hpp"

namespace mlpfseg {

void VoxelGridConfig::validate() const {
    if (!(resolution > 0.0)) throw validation_error("voxel resolution must be > 0");
    for (int a = 0; a < 3; ++a)
        if (!(bounds_min[a] < bounds_max[a]))
            throw validation_error("voxel bounds must satisfy min < max on axis " + std::to_string(a));
    if (max_points_per_voxel < 1) throw validation_error("max_points_per_voxel must be >= 1");
}

VoxelGrid assign_voxels(const PointCloud& cloud, const VoxelGridConfig& config) {
    config.validate();
    cloud.check_finite();
    // std::map keys are already in lexicographic triple order.
    std::map<VoxelIndex, std::vector<int>> cells;
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        bool inside = true;
        for (int a = 0; a < 3; ++a)
            if (!(p[a] >= config.bounds_min[a] && p[a] < config.bounds_max[a])) inside = false;
        if (!inside) continue;
        const VoxelIndex idx{static_cast<int64_t>(std::floor(p[0] / config.resolution)),
                             static_cast<int64_t>(std::floor(p[1] / config.resolution)),
                             static_cast<int64_t>(std::floor(p[2] / config.resolution))};
        auto& members = cells[idx];
        if (static_cast<int>(members.size()) < config.max_points_per_voxel) members.push_back(static_cast<int>(i));
    }
    VoxelGrid grid;
    grid.config = config;
    grid.voxel_indices.reserve(cells.size());
    grid.members.reserve(cells.size());
    for (auto& [idx, members] : cells) {
        grid.voxel_indices.push_back(idx);
        grid.members.push_back(std::move(members));
    }
    return grid;
}

PointEncoder default_point_encoder(int channels, int layer) {
    if (channels < 1) throw validation_error("encoder channel count must be >= 1");
    return [channels, layer](const std::array<double, 4>& point) {
        std::vector<double> out(channels);
        for (int j = 0; j < channels; ++j) {
            const int coord = j % 4;
            const int band = j / 4;
            const double freq = 0.5 * std::pow(1.37, band + layer);
            const double phase = 0.7 * band + 1.3 * layer + 0.25 * coord;
            out[j] = std::sin(freq * point[coord] + phase);
        }
        return out;
    };
}

void featurize_voxels(VoxelGrid& grid, const PointCloud& cloud, const PointEncoder& encoder, int c_p) {
    if (c_p < 1) throw validation_error("c_p must be >= 1");
    grid.features.assign(grid.occupied_count(), std::vector<double>(c_p, 0.0));
    grid.feature_channels = c_p;
    for (size_t v = 0; v < grid.occupied_count(); ++v) {
        auto& row = grid.features[v];
        const auto& members = grid.members[v];
        for (int point_idx : members) {
            const std::vector<double> enc = encoder(cloud.points[point_idx]);
            if (static_cast<int>(enc.size()) != c_p)
                throw validation_error("encoder produced " + std::to_string(enc.size()) + " channels, expected " +
                                       std::to_string(c_p));
            for (int j = 0; j < c_p; ++j) row[j] += enc[j];
        }
        if (!members.empty())
            for (int j = 0; j < c_p; ++j) row[j] /= static_cast<double>(members.size());
    }
}

struct VoxelFeatureInterpolator::Impl {
    const VoxelGrid* grid;
    double eps;
    detail::KdTree<3> tree;

    static std::vector<detail::KdTree<3>::Entry> entries(const VoxelGrid& g) {
        std::vector<detail::KdTree<3>::Entry> out;
        out.reserve(g.occupied_count());
        for (size_t v = 0; v < g.occupied_count(); ++v) out.push_back({g.voxel_center(v), static_cast<int>(v)});
        return out;
    }

    Impl(const VoxelGrid& g, double e) : grid(&g), eps(e), tree(entries(g)) {}
};

VoxelFeatureInterpolator::VoxelFeatureInterpolator(const VoxelGrid& grid, double eps) {
    if (grid.occupied_count() == 0) throw validation_error("cannot interpolate from an empty voxel grid");
    if (grid.features.size() != grid.occupied_count())
        throw validation_error("voxel grid has no features; call featurize_voxels first");
    impl_ = std::make_unique<Impl>(grid, eps);
}

VoxelFeatureInterpolator::~VoxelFeatureInterpolator() = default;
VoxelFeatureInterpolator::VoxelFeatureInterpolator(VoxelFeatureInterpolator&&) noexcept = default;
VoxelFeatureInterpolator& VoxelFeatureInterpolator::operator=(VoxelFeatureInterpolator&&) noexcept = default;

std::vector<double> VoxelFeatureInterpolator::operator()(const std::array<double, 3>& query) const {
    const VoxelGrid& grid = *impl_->grid;
    const auto neighbors = impl_->tree.nearest(query, 3);
    double weight_sum = 0.0;
    std::vector<double> weights(neighbors.size());
    for (size_t i = 0; i < neighbors.size(); ++i) {
        weights[i] = 1.0 / (std::sqrt(neighbors[i].first) + impl_->eps);
        weight_sum += weights[i];
    }
    std::vector<double> out(grid.feature_channels, 0.0);
    for (size_t i = 0; i < neighbors.size(); ++i) {
        const double w = weights[i] / weight_sum;
        const auto& feat = grid.features[neighbors[i].second];
        for (int j = 0; j < grid.feature_channels; ++j) out[j] += w * feat[j];
    }
    return out;
}

std::vector<double> interpolate_point_features(const VoxelGrid& grid, const std::array<double, 3>& query,
                                               double eps) {
    return VoxelFeatureInterpolator(grid, eps)(query);
}

}  // namespace mlpfseg
