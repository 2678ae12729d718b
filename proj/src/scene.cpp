#include "mlpfseg/scene.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "mlpfseg/errors.hpp"
#include "mlpfseg/rng.hpp"

namespace mlpfseg {

namespace {

constexpr double kRayEps = 1e-9;
constexpr double kPi = 3.14159265358979323846;

// Fixed look-forward rotation: x_cam = x, y_cam = -z, z_cam = y.
Eigen::Matrix3d forward_rotation() {
    Eigen::Matrix3d r;
    r << 1, 0, 0, 0, 0, -1, 0, 1, 0;
    return r;
}

// Smallest positive ray parameter hitting the primitive, with the primitive
// expressed in the same frame as the ray.
std::optional<double> intersect(const ScenePrimitive& prim, const std::array<double, 3>& shift,
                                const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
    if (prim.kind == ScenePrimitive::Kind::Plane) {
        if (std::fabs(dir.z()) < 1e-15) return std::nullopt;
        const double z0 = prim.center[2] - shift[2];
        const double t = (z0 - origin.z()) / dir.z();
        if (t > kRayEps) return t;
        return std::nullopt;
    }
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double c = prim.center[a] - shift[a];
        const double lo = c - 0.5 * prim.size[a];
        const double hi = c + 0.5 * prim.size[a];
        if (std::fabs(dir[a]) < 1e-15) {
            if (origin[a] < lo || origin[a] > hi) return std::nullopt;
            continue;
        }
        double ta = (lo - origin[a]) / dir[a];
        double tb = (hi - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t_near = std::max(t_near, ta);
        t_far = std::min(t_far, tb);
        if (t_near > t_far) return std::nullopt;
    }
    if (t_near > kRayEps) return t_near;
    if (t_far > kRayEps) return t_far;  // ray starts inside the box
    return std::nullopt;
}

double lerp_step(double a, double b, int i, int steps) {
    if (steps == 1) return 0.5 * (a + b);
    return a + (b - a) * static_cast<double>(i) / static_cast<double>(steps - 1);
}

}  // namespace

void Scene::validate() const {
    if (cameras.empty()) throw validation_error("scene: at least one camera is required");
    if (num_classes < 1 || num_classes > 255) {
        throw validation_error("scene: class count must be in [1, 255]");
    }
    for (size_t i = 0; i < primitives.size(); ++i) {
        const ScenePrimitive& p = primitives[i];
        if (p.class_id < 0 || p.class_id >= num_classes) {
            std::ostringstream msg;
            msg << "scene: primitive " << i << " has class " << p.class_id << ", expected [0, " << num_classes
                << ")";
            throw validation_error(msg.str());
        }
        if (p.kind == ScenePrimitive::Kind::Box &&
            (!(p.size[0] > 0.0) || !(p.size[1] > 0.0) || !(p.size[2] > 0.0))) {
            std::ostringstream msg;
            msg << "scene: box " << i << " has non-positive extent";
            throw validation_error(msg.str());
        }
    }
    if (lidar.azimuth_steps < 1 || lidar.elevation_steps < 1 || !(lidar.max_range > 0.0)) {
        throw validation_error("scene: angular sampling needs positive step counts and range");
    }
    for (const CameraModel& cam : cameras) cam.validate();
    if (camera_positions.size() != cameras.size()) {
        throw validation_error("scene: camera positions and cameras disagree in count");
    }
}

CameraModel make_scene_camera(double fx, double fy, double cx, double cy, int image_h, int image_w, int grid_h,
                              int grid_w, const std::array<double, 3>& position,
                              const std::array<double, 3>& lidar_origin) {
    CameraModel cam = CameraModel::pinhole(fx, fy, cx, cy, image_h, image_w, grid_h, grid_w);
    const Eigen::Matrix3d r = forward_rotation();
    const Eigen::Vector3d offset(lidar_origin[0] - position[0], lidar_origin[1] - position[1],
                                 lidar_origin[2] - position[2]);
    cam.extrinsics.setIdentity();
    cam.extrinsics.topLeftCorner<3, 3>() = r;
    cam.extrinsics.topRightCorner<3, 1>() = r * offset;
    cam.validate();
    return cam;
}

std::vector<CameraModel> make_camera_rig(double fx, double fy, double cx, double cy, int image_h, int image_w,
                                         int grid_h, int grid_w, const std::array<double, 3>& center,
                                         double baseline, const std::array<double, 3>& lidar_origin,
                                         std::vector<std::array<double, 3>>* positions) {
    std::vector<CameraModel> rig;
    for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) {
            const std::array<double, 3> pos{center[0] + (col - 1) * baseline, center[1],
                                            center[2] + (1 - row) * baseline};
            rig.push_back(
                make_scene_camera(fx, fy, cx, cy, image_h, image_w, grid_h, grid_w, pos, lidar_origin));
            if (positions != nullptr) positions->push_back(pos);
        }
    }
    return rig;
}

namespace {

struct CameraLine {
    double fx, fy, cx, cy;
    int image_h, image_w, grid_h, grid_w;
    std::array<double, 3> position;
};

struct RigLine : CameraLine {
    double baseline;
};

}  // namespace

Scene parse_scene(std::istream& in, const std::string& origin_name) {
    Scene scene;
    std::vector<CameraLine> camera_lines;
    std::vector<RigLine> rig_lines;
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& detail) -> io_error {
        std::ostringstream msg;
        msg << origin_name << ":" << line_no << ": " << detail;
        return io_error(msg.str());
    };

    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        std::string keyword;
        if (!(fields >> keyword)) continue;

        auto want = [&](int n, double* out) {
            for (int i = 0; i < n; ++i) {
                if (!(fields >> out[i])) {
                    std::ostringstream detail;
                    detail << keyword << " needs " << n << " numeric fields, got \"" << line << "\"";
                    throw fail(detail.str());
                }
            }
            std::string extra;
            if (fields >> extra) {
                throw fail("trailing token \"" + extra + "\" after " + keyword + " fields");
            }
        };

        if (keyword == "BOX") {
            double v[7];
            want(7, v);
            ScenePrimitive p;
            p.kind = ScenePrimitive::Kind::Box;
            p.center = {v[0], v[1], v[2]};
            p.size = {v[3], v[4], v[5]};
            p.class_id = static_cast<int>(v[6]);
            scene.primitives.push_back(p);
        } else if (keyword == "PLANE") {
            double v[2];
            want(2, v);
            ScenePrimitive p;
            p.kind = ScenePrimitive::Kind::Plane;
            p.center = {0.0, 0.0, v[0]};
            p.class_id = static_cast<int>(v[1]);
            scene.primitives.push_back(p);
        } else if (keyword == "CAMERA") {
            double v[11];
            want(11, v);
            CameraLine c{v[0], v[1], v[2], v[3], static_cast<int>(v[4]), static_cast<int>(v[5]),
                         static_cast<int>(v[6]), static_cast<int>(v[7]), {v[8], v[9], v[10]}};
            camera_lines.push_back(c);
        } else if (keyword == "RIG") {
            double v[12];
            want(12, v);
            RigLine r;
            r.fx = v[0];
            r.fy = v[1];
            r.cx = v[2];
            r.cy = v[3];
            r.image_h = static_cast<int>(v[4]);
            r.image_w = static_cast<int>(v[5]);
            r.grid_h = static_cast<int>(v[6]);
            r.grid_w = static_cast<int>(v[7]);
            r.position = {v[8], v[9], v[10]};
            r.baseline = v[11];
            rig_lines.push_back(r);
        } else if (keyword == "LIDAR") {
            double v[10];
            want(10, v);
            scene.lidar.origin = {v[0], v[1], v[2]};
            scene.lidar.azimuth_start_deg = v[3];
            scene.lidar.azimuth_end_deg = v[4];
            scene.lidar.azimuth_steps = static_cast<int>(v[5]);
            scene.lidar.elevation_start_deg = v[6];
            scene.lidar.elevation_end_deg = v[7];
            scene.lidar.elevation_steps = static_cast<int>(v[8]);
            scene.lidar.max_range = v[9];
        } else if (keyword == "CLASSES") {
            double v[1];
            want(1, v);
            scene.num_classes = static_cast<int>(v[0]);
        } else {
            throw fail("unknown keyword \"" + keyword + "\"");
        }
    }

    // Cameras depend on the sensor origin, so they are built after the last
    // line regardless of where LIDAR appeared.
    for (const CameraLine& c : camera_lines) {
        scene.cameras.push_back(make_scene_camera(c.fx, c.fy, c.cx, c.cy, c.image_h, c.image_w, c.grid_h,
                                                  c.grid_w, c.position, scene.lidar.origin));
        scene.camera_positions.push_back(c.position);
    }
    for (const RigLine& r : rig_lines) {
        auto rig = make_camera_rig(r.fx, r.fy, r.cx, r.cy, r.image_h, r.image_w, r.grid_h, r.grid_w, r.position,
                                   r.baseline, scene.lidar.origin, &scene.camera_positions);
        scene.cameras.insert(scene.cameras.end(), rig.begin(), rig.end());
    }
    return scene;
}

Scene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error(path + ": cannot open for reading");
    Scene scene = parse_scene(in, path);
    scene.validate();
    return scene;
}

RenderedView render_view(const Scene& scene, const CameraModel& camera) {
    camera.validate();
    const int h = camera.grid_height;
    const int w = camera.grid_width;

    RenderedView view;
    view.depth = FeatureMap(1, h, w);
    view.labels = LabelMap(h, w);
    view.primitive_id.assign(static_cast<size_t>(h) * w, -1);
    view.visible_fraction.assign(scene.primitives.size(), 1.0);
    view.occluded.assign(scene.primitives.size(), 0);

    // Rays live in the sensor frame that the extrinsics map out of.
    const Eigen::Matrix3d r = camera.extrinsics.topLeftCorner<3, 3>();
    const Eigen::Vector3d t = camera.extrinsics.topRightCorner<3, 1>();
    const Eigen::Vector3d cam_center = -(r.transpose() * t);
    const Eigen::Matrix3d k3 = camera.intrinsics.topLeftCorner<3, 3>();
    const Eigen::Matrix3d k3_inv = k3.inverse();

    std::vector<int64_t> seen(scene.primitives.size(), 0);
    std::vector<int64_t> alone(scene.primitives.size(), 0);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double u = (x + 0.5) * camera.image_width / static_cast<double>(w) - 0.5;
            const double v = (y + 0.5) * camera.image_height / static_cast<double>(h) - 0.5;
            Eigen::Vector3d dir_cam = k3_inv * Eigen::Vector3d(u, v, 1.0);
            if (std::fabs(dir_cam.z()) < 1e-12) continue;
            dir_cam /= dir_cam.z();  // ray parameter == camera-frame depth
            const Eigen::Vector3d dir = r.transpose() * dir_cam;

            double best_t = std::numeric_limits<double>::infinity();
            int best_prim = -1;
            for (size_t p = 0; p < scene.primitives.size(); ++p) {
                const auto hit = intersect(scene.primitives[p], scene.lidar.origin, cam_center, dir);
                if (!hit) continue;
                ++alone[p];
                if (*hit < best_t) {
                    best_t = *hit;
                    best_prim = static_cast<int>(p);
                }
            }
            if (best_prim >= 0) {
                view.depth.at(0, y, x) = best_t;
                view.labels.labels[static_cast<size_t>(y) * w + x] =
                    static_cast<uint8_t>(scene.primitives[best_prim].class_id);
                view.primitive_id[static_cast<size_t>(y) * w + x] = best_prim;
                ++seen[best_prim];
            }
        }
    }

    for (size_t p = 0; p < scene.primitives.size(); ++p) {
        if (alone[p] > 0) {
            view.visible_fraction[p] = static_cast<double>(seen[p]) / static_cast<double>(alone[p]);
        }
        view.occluded[p] = view.visible_fraction[p] < 0.5 ? 1 : 0;
    }
    return view;
}

LidarSweep sample_lidar_detailed(const Scene& scene) {
    LidarSweep sweep;
    const Eigen::Vector3d origin(0.0, 0.0, 0.0);  // sensor frame
    for (int ei = 0; ei < scene.lidar.elevation_steps; ++ei) {
        const double el =
            lerp_step(scene.lidar.elevation_start_deg, scene.lidar.elevation_end_deg, ei,
                      scene.lidar.elevation_steps) *
            kPi / 180.0;
        for (int ai = 0; ai < scene.lidar.azimuth_steps; ++ai) {
            const double az = lerp_step(scene.lidar.azimuth_start_deg, scene.lidar.azimuth_end_deg, ai,
                                        scene.lidar.azimuth_steps) *
                              kPi / 180.0;
            const Eigen::Vector3d dir(std::sin(az) * std::cos(el), std::cos(az) * std::cos(el), std::sin(el));
            double best_t = std::numeric_limits<double>::infinity();
            int best_prim = -1;
            for (size_t p = 0; p < scene.primitives.size(); ++p) {
                const auto hit = intersect(scene.primitives[p], scene.lidar.origin, origin, dir);
                if (!hit) continue;
                if (*hit < best_t) {
                    best_t = *hit;
                    best_prim = static_cast<int>(p);
                }
            }
            if (best_prim < 0 || best_t > scene.lidar.max_range) continue;
            const Eigen::Vector3d hit_point = origin + best_t * dir;
            sweep.cloud.points.push_back({hit_point.x(), hit_point.y(), hit_point.z(),
                                          static_cast<double>(scene.primitives[best_prim].class_id)});
            sweep.primitive_ids.push_back(best_prim);
        }
    }
    return sweep;
}

PointCloud sample_lidar(const Scene& scene) { return sample_lidar_detailed(scene).cloud; }

FeatureMap predicted_depth_from_render(const RenderedView& view, double background_depth) {
    if (!(background_depth > 0.0)) {
        throw validation_error("predicted depth: background depth must be positive");
    }
    FeatureMap out = view.depth;
    for (double& v : out.data) {
        if (v == 0.0) v = background_depth;
    }
    return out;
}

FeatureMap plane_depth_model(int grid_h, int grid_w, double base, double gx, double gy, double sigma,
                             uint64_t seed) {
    FeatureMap out(1, grid_h, grid_w);
    std::mt19937_64 rng(derive_seed(seed, "plane-depth"));
    for (int y = 0; y < grid_h; ++y) {
        for (int x = 0; x < grid_w; ++x) {
            double value = base + gx * ((x + 0.5) / grid_w) + gy * ((y + 0.5) / grid_h);
            if (sigma > 0.0) {
                const double u1 = 1.0 - uniform_unit(rng);  // (0, 1]
                const double u2 = uniform_unit(rng);
                value += sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
            }
            out.at(0, y, x) = std::max(value, 1e-3);
        }
    }
    return out;
}

FeatureMap synthesize_image_features(int channels, int grid_h, int grid_w, uint64_t seed) {
    FeatureMap out(channels, grid_h, grid_w);
    std::mt19937_64 rng(derive_seed(seed, "image-features"));
    for (int c = 0; c < channels; ++c) {
        const double ax = uniform_sym(rng, 0.35);
        const double ay = uniform_sym(rng, 0.35);
        const double phase = uniform_sym(rng, kPi);
        const double amp = 0.5 + 0.5 * uniform_unit(rng);
        for (int y = 0; y < grid_h; ++y) {
            for (int x = 0; x < grid_w; ++x) {
                out.at(c, y, x) = amp * std::sin(ax * x + ay * y + phase);
            }
        }
    }
    return out;
}

}  // namespace mlpfseg
