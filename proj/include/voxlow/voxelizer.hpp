#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "voxlow/tensor.hpp"

namespace voxlow {

struct RadarPoint {
    double x = 0.0, y = 0.0, z = 0.0;
    std::vector<double> features; // power first, then any extra columns
};

struct PointCloud {
    std::vector<std::string> feature_names{"power"};
    std::vector<RadarPoint> points;
};

enum class Aggregation { Mean, Max };

struct VoxelGridCfg {
    std::array<double, 3> roi_min{0.0, -16.0, -2.0}; // x, y, z meters
    std::array<double, 3> roi_max{72.0, 16.0, 7.6};
    std::array<double, 3> voxel_size{0.4, 0.4, 0.4};
    std::vector<Aggregation> aggregation{Aggregation::Mean}; // one per point feature
    bool include_occupancy = true;

    /// Grid extents (W, H, D) = round((max - min) / size) per axis.
    std::array<int64_t, 3> extents() const;
    int64_t channels() const;
    /// Throws std::invalid_argument when the ROI or resolution is unusable.
    void check() const;
};

struct VoxelizeStats {
    int64_t mapped = 0;
    int64_t dropped = 0;
};

/// Dense (1, C, D, H, W) grid; x -> W, y -> H, z -> D. Channel 0 is occupancy when enabled.
Tensor voxelize(const PointCloud& cloud, const VoxelGridCfg& cfg, VoxelizeStats* stats = nullptr);

/// CSV with header `x,y,z,power[,extra...]`.
PointCloud load_points(const std::filesystem::path& path);
void save_points(const PointCloud& cloud, const std::filesystem::path& path);

} // namespace voxlow
