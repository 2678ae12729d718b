#include "mlpfseg/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace mlpfseg {

void CameraModel::validate() const {
    if (grid_height < 1 || grid_width < 1 || image_height < grid_height || image_width < grid_width)
        throw validation_error("camera sizes must satisfy H >= h >= 1 and W >= w >= 1, got H=" +
                               std::to_string(image_height) + " W=" + std::to_string(image_width) +
                               " h=" + std::to_string(grid_height) + " w=" + std::to_string(grid_width));
    const Eigen::RowVector4d bottom = extrinsics.row(3);
    const Eigen::RowVector4d expected(0, 0, 0, 1);
    if ((bottom - expected).cwiseAbs().maxCoeff() > 1e-12)
        throw validation_error("extrinsic matrix bottom row must be (0,0,0,1)");
    if (!intrinsics.allFinite() || !extrinsics.allFinite())
        throw validation_error("camera matrices must be finite");
}

CameraModel CameraModel::pinhole(double fx, double fy, double cx, double cy, int image_h, int image_w, int grid_h,
                                 int grid_w, const Eigen::Matrix4d& extrinsics) {
    CameraModel cam;
    cam.intrinsics.setZero();
    cam.intrinsics(0, 0) = fx;
    cam.intrinsics(0, 2) = cx;
    cam.intrinsics(1, 1) = fy;
    cam.intrinsics(1, 2) = cy;
    cam.intrinsics(2, 2) = 1.0;
    cam.extrinsics = extrinsics;
    cam.image_height = image_h;
    cam.image_width = image_w;
    cam.grid_height = grid_h;
    cam.grid_width = grid_w;
    cam.validate();
    return cam;
}

std::optional<Projection> project_point(const CameraModel& camera, const Eigen::Vector3d& point) {
    if (!point.allFinite()) throw validation_error("project_point: point coordinates must be finite");
    const Eigen::Vector4d homog(point.x(), point.y(), point.z(), 1.0);
    const Eigen::Vector4d cam_pt = camera.extrinsics * homog;
    const double depth = cam_pt.z();
    if (depth <= kMinCameraDepth) return std::nullopt;
    // K * T * p, divided by the camera-frame depth
    const Eigen::Vector3d proj = (camera.intrinsics * cam_pt) / depth;
    const double u = proj.x();
    const double v = proj.y();
    if (!(u >= 0.0 && u < camera.image_width && v >= 0.0 && v < camera.image_height)) return std::nullopt;
    Projection out;
    out.u = u;
    out.v = v;
    out.uf = u * static_cast<double>(camera.grid_height) / camera.image_height;
    out.vf = v * static_cast<double>(camera.grid_width) / camera.image_width;
    out.depth = depth;
    return out;
}

Eigen::Vector3d unproject_point(const CameraModel& camera, double u, double v, double depth) {
    const Eigen::Matrix3d k3 = camera.intrinsics.leftCols<3>();
    const Eigen::Vector3d k4 = camera.intrinsics.col(3);
    // K3 * pc + k4 = depth * [u, v, 1]
    const Eigen::Vector3d rhs = depth * Eigen::Vector3d(u, v, 1.0) - k4;
    const Eigen::Vector3d cam_pt = k3.partialPivLu().solve(rhs);
    const Eigen::Vector4d homog(cam_pt.x(), cam_pt.y(), cam_pt.z(), 1.0);
    const Eigen::Vector4d lidar_pt = camera.extrinsics.partialPivLu().solve(homog);
    return lidar_pt.head<3>() / lidar_pt.w();
}

std::vector<Projection> project_cloud(const CameraModel& camera, const PointCloud& cloud) {
    std::vector<Projection> out;
    out.reserve(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        auto proj = project_point(camera, Eigen::Vector3d(p[0], p[1], p[2]));
        if (proj) {
            proj->point_index = static_cast<int>(i);
            out.push_back(*proj);
        }
    }
    return out;
}

bool projection_cell(const Projection& p, GridPlane plane, int grid_h, int grid_w, int& row, int& col) {
    const double cr = plane == GridPlane::Image ? p.v : p.vf;
    const double cc = plane == GridPlane::Image ? p.u : p.uf;
    long r = std::lround(cr);
    long c = std::lround(cc);
    bool clamped = false;
    if (r < 0) { r = 0; clamped = true; }
    if (r >= grid_h) { r = grid_h - 1; clamped = true; }
    if (c < 0) { c = 0; clamped = true; }
    if (c >= grid_w) { c = grid_w - 1; clamped = true; }
    row = static_cast<int>(r);
    col = static_cast<int>(c);
    return clamped;
}

SparseGrid build_sparse_depth_map(const CameraModel& camera, const std::vector<Projection>& projections,
                                  GridPlane plane) {
    const int h = plane == GridPlane::Image ? camera.image_height : camera.grid_height;
    const int w = plane == GridPlane::Image ? camera.image_width : camera.grid_width;
    SparseGrid grid(h, w);
    for (const auto& p : projections) {
        int row, col;
        projection_cell(p, plane, h, w, row, col);
        if (!grid.valid(row, col) || p.depth < grid.value(row, col)) grid.set(row, col, p.depth);
    }
    return grid;
}

SparseGrid build_sparse_depth_map(const CameraModel& camera, const PointCloud& cloud, GridPlane plane) {
    return build_sparse_depth_map(camera, project_cloud(camera, cloud), plane);
}

}  // namespace mlpfseg
