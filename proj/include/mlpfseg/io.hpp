#pragma once

#include <string>

#include "mlpfseg/geometry.hpp"
#include "mlpfseg/types.hpp"
#include "mlpfseg/voxelizer.hpp"

namespace mlpfseg {

// All binary formats are little-endian with a 4-byte magic and store reals as
// float32; in-memory values are doubles. Loads validate magic, dimensions,
// and exact payload size, reporting expected vs actual bytes on mismatch.

// "LFPC": u32 count, then count x 4 float32 (x, y, z, reflectance).
// Paths ending in .txt or .xyz use the ASCII variant: one "x y z r" line per
// point.
PointCloud load_point_cloud(const std::string& path);
void save_point_cloud(const std::string& path, const PointCloud& cloud);

// "LFFM": u32 channels, height, width, then channel-major float32 values.
FeatureMap load_feature_map(const std::string& path);
void save_feature_map(const std::string& path, const FeatureMap& map);

// "LFSG": u32 height, width, then h*w float32 values, then h*w u8 mask.
// Masked-out cells store value 0.
SparseGrid load_sparse_grid(const std::string& path);
void save_sparse_grid(const std::string& path, const SparseGrid& grid);

// "LFLM": u32 height, width, then h*w u8 labels (255 = ignore).
LabelMap load_label_map(const std::string& path);
void save_label_map(const std::string& path, const LabelMap& labels);

// Plain text: a "K" line, 3 rows of 4 decimals, a "T" line, 4 rows of 4
// decimals, then "SIZE H W h w". Written with 17 significant digits so a
// save/load cycle reproduces the file byte for byte.
CameraModel load_calibration(const std::string& path);
void save_calibration(const std::string& path, const CameraModel& camera);

// Debug dump: header "N1 c_p r_l", then one "ix iy iz f1 ... f_cp" line per
// occupied voxel.
void save_voxel_grid_dump(const std::string& path, const VoxelGrid& grid);

}  // namespace mlpfseg
