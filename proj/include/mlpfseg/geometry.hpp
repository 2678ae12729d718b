#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "mlpfseg/types.hpp"

namespace mlpfseg {

// Pinhole camera over two grids: the image plane (H x W pixels) and the
// feature plane (h x w cells). K is 3x4, T is the 4x4 rigid transform from
// the LiDAR frame to the camera frame.
struct CameraModel {
    Eigen::Matrix<double, 3, 4> intrinsics = Eigen::Matrix<double, 3, 4>::Zero();  // K
    Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();                      // T, LiDAR -> camera
    int image_height = 0;  // H
    int image_width = 0;   // W
    int grid_height = 0;   // h
    int grid_width = 0;    // w

    void validate() const;

    // Convenience constructor for a pure pinhole K = [[fx,0,cx,0],[0,fy,cy,0],[0,0,1,0]].
    static CameraModel pinhole(double fx, double fy, double cx, double cy, int image_h, int image_w, int grid_h,
                               int grid_w, const Eigen::Matrix4d& extrinsics = Eigen::Matrix4d::Identity());
};

// One in-frustum projection. u is the horizontal pixel coordinate (column),
// v the vertical one (row). The feature-plane coordinates follow the scaling
// uf = u * h/H and vf = v * w/W; uf indexes columns and vf rows of the
// feature grid (for the usual equal-aspect case h/H == w/W the ranges line up).
struct Projection {
    int point_index = -1;
    double u = 0.0;
    double v = 0.0;
    double uf = 0.0;
    double vf = 0.0;
    double depth = 0.0;  // camera-frame z, meters
};

// Depth below which a point counts as behind the camera.
inline constexpr double kMinCameraDepth = 1e-9;

// [u,v,1] = (1/z_cam) * K * T * [x,y,z,1] with z_cam the camera-frame depth.
// Returns nullopt when z_cam <= kMinCameraDepth or (u,v) falls outside
// [0,W) x [0,H).
std::optional<Projection> project_point(const CameraModel& camera, const Eigen::Vector3d& point);

// Inverse of project_point for an in-frustum pixel: recovers the LiDAR-frame
// point from (u, v, depth). Requires the left 3x3 block of K to be invertible.
Eigen::Vector3d unproject_point(const CameraModel& camera, double u, double v, double depth);

// All visible projections of the cloud, in ascending point index order.
std::vector<Projection> project_cloud(const CameraModel& camera, const PointCloud& cloud);

enum class GridPlane { Image, Feature };

// Scatters camera-frame depths at rounded projected coordinates. Collisions
// keep the smaller depth (nearest surface); equal depths keep the earlier
// point index. Coordinates that round off the grid are clamped to the border.
SparseGrid build_sparse_depth_map(const CameraModel& camera, const PointCloud& cloud, GridPlane plane);
SparseGrid build_sparse_depth_map(const CameraModel& camera, const std::vector<Projection>& projections,
                                  GridPlane plane);

// Rounded grid cell of a projection on the chosen plane, clamped to bounds.
// Returns true if clamping was needed.
bool projection_cell(const Projection& p, GridPlane plane, int grid_h, int grid_w, int& row, int& col);

}  // namespace mlpfseg
