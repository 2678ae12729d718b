#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "mlpfseg/geometry.hpp"
#include "mlpfseg/types.hpp"

namespace mlpfseg {

// World frame: x right, y forward (optical axis of the rig), z up, meters.
// The sensor frame used for point clouds is the world frame translated to the
// sensor origin. Cameras look along +y with x_cam = x, y_cam = -z, z_cam = y.

struct ScenePrimitive {
    enum class Kind { Box, Plane };
    Kind kind = Kind::Box;
    // Box: center and full extents. Plane: horizontal plane z = center[2],
    // extents unused.
    std::array<double, 3> center{0.0, 0.0, 0.0};
    std::array<double, 3> size{1.0, 1.0, 1.0};
    int class_id = 0;
};

struct LidarSpec {
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    double azimuth_start_deg = -45.0;  // from +y toward +x
    double azimuth_end_deg = 45.0;
    int azimuth_steps = 180;
    double elevation_start_deg = -24.0;
    double elevation_end_deg = 8.0;
    int elevation_steps = 48;
    double max_range = 120.0;
};

struct Scene {
    std::vector<ScenePrimitive> primitives;
    std::vector<CameraModel> cameras;
    std::vector<std::array<double, 3>> camera_positions;  // world, parallel to cameras
    LidarSpec lidar;
    int num_classes = 15;

    void validate() const;
};

// Camera whose sensor-to-camera transform composes the fixed look-forward
// rotation with the sensor-origin offset, so projected points and rendered
// views share one geometry.
CameraModel make_scene_camera(double fx, double fy, double cx, double cy, int image_h, int image_w, int grid_h,
                              int grid_w, const std::array<double, 3>& position,
                              const std::array<double, 3>& lidar_origin);

// 3x3 rig centered at `center`, spaced by `baseline` along world x and z.
// Cameras are ordered row-major, top row first; index 4 is the center camera.
std::vector<CameraModel> make_camera_rig(double fx, double fy, double cx, double cy, int image_h, int image_w,
                                         int grid_h, int grid_w, const std::array<double, 3>& center,
                                         double baseline, const std::array<double, 3>& lidar_origin,
                                         std::vector<std::array<double, 3>>* positions = nullptr);

// Line-oriented scene text:
//   BOX cx cy cz sx sy sz class
//   PLANE z class
//   CAMERA fx fy cx cy H W h w px py pz
//   RIG fx fy cx cy H W h w px py pz baseline
//   LIDAR ox oy oz az0 az1 az_steps el0 el1 el_steps max_range
// '#' starts a comment. Cameras are built against the LIDAR origin after the
// whole file is read, so line order does not matter.
Scene parse_scene(std::istream& in, const std::string& origin_name);
Scene load_scene(const std::string& path);

struct RenderedView {
    FeatureMap depth;                      // 1 x h x w camera-frame depth, 0 where no hit
    LabelMap labels;                       // h x w, ignore where no hit
    std::vector<int> primitive_id;         // h*w, -1 where no hit
    std::vector<double> visible_fraction;  // per primitive: seen / would-be-seen cells
    std::vector<uint8_t> occluded;         // visible fraction < 0.5
};

// Casts one ray through each feature-grid cell center; nearest hit wins.
RenderedView render_view(const Scene& scene, const CameraModel& camera);

struct LidarSweep {
    PointCloud cloud;                // sensor-frame points, reflectance = class id
    std::vector<int> primitive_ids;  // parallel to cloud.points
};

// Casts the angular grid from the sensor origin; elevation outer loop,
// azimuth inner. Misses and hits beyond max_range produce no point.
LidarSweep sample_lidar_detailed(const Scene& scene);
PointCloud sample_lidar(const Scene& scene);

// Stand-in for a monocular depth net: where the render hit nothing, depth is
// taken at `background_depth` instead of 0 so every cell carries a positive
// range.
FeatureMap predicted_depth_from_render(const RenderedView& view, double background_depth);

// Analytic plane depth model "base + gx*x + gy*y" over the feature grid with
// optional seeded Gaussian jitter; values clamped to stay >= 1e-3.
FeatureMap plane_depth_model(int grid_h, int grid_w, double base, double gx, double gy, double sigma,
                             uint64_t seed);

// Deterministic stand-in for backbone image features: smooth per-channel
// sinusoids over the grid, seeded per view.
FeatureMap synthesize_image_features(int channels, int grid_h, int grid_w, uint64_t seed);

}  // namespace mlpfseg
