// Python bindings: numpy in, numpy out. Feature maps cross as (c, h, w)
// float64 arrays, clouds as (n, 4), labels as (h, w) uint8.

#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mlpfseg/geometry.hpp"
#include "mlpfseg/io.hpp"
#include "mlpfseg/losses.hpp"
#include "mlpfseg/pipeline.hpp"
#include "mlpfseg/scene.hpp"
#include "mlpfseg/types.hpp"

namespace py = pybind11;
using namespace mlpfseg;

namespace {

FeatureMap to_feature_map(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 3) throw validation_error("feature arrays are (channels, height, width)");
    FeatureMap map(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
                   static_cast<int>(arr.shape(2)));
    std::copy(arr.data(), arr.data() + arr.size(), map.data.begin());
    return map;
}

py::array_t<double> from_feature_map(const FeatureMap& map) {
    py::array_t<double> arr({map.channels, map.height, map.width});
    std::copy(map.data.begin(), map.data.end(), arr.mutable_data());
    return arr;
}

LabelMap to_label_map(const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw validation_error("label arrays are (height, width)");
    LabelMap labels(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
    std::copy(arr.data(), arr.data() + arr.size(), labels.labels.begin());
    return labels;
}

py::array_t<uint8_t> from_label_map(const LabelMap& labels) {
    py::array_t<uint8_t> arr({labels.height, labels.width});
    std::copy(labels.labels.begin(), labels.labels.end(), arr.mutable_data());
    return arr;
}

PointCloud to_cloud(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2 || arr.shape(1) != 4) throw validation_error("point clouds are (n, 4): x y z reflectance");
    PointCloud cloud;
    cloud.points.resize(static_cast<size_t>(arr.shape(0)));
    const double* src = arr.data();
    for (auto& p : cloud.points) {
        p = {src[0], src[1], src[2], src[3]};
        src += 4;
    }
    return cloud;
}

py::array_t<double> from_cloud(const PointCloud& cloud) {
    py::array_t<double> arr({static_cast<py::ssize_t>(cloud.size()), static_cast<py::ssize_t>(4)});
    double* dst = arr.mutable_data();
    for (const auto& p : cloud.points) {
        dst[0] = p[0];
        dst[1] = p[1];
        dst[2] = p[2];
        dst[3] = p[3];
        dst += 4;
    }
    return arr;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "LiDAR / light-field fusion core";

    py::register_exception<validation_error>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<numeric_error>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<CameraModel>(m, "CameraModel")
        .def_static(
            "pinhole",
            [](double fx, double fy, double cx, double cy, int image_h, int image_w, int grid_h, int grid_w) {
                return CameraModel::pinhole(fx, fy, cx, cy, image_h, image_w, grid_h, grid_w);
            },
            py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("image_h"), py::arg("image_w"),
            py::arg("grid_h"), py::arg("grid_w"))
        .def_readonly("image_height", &CameraModel::image_height)
        .def_readonly("image_width", &CameraModel::image_width)
        .def_readonly("grid_height", &CameraModel::grid_height)
        .def_readonly("grid_width", &CameraModel::grid_width);

    m.def("load_calibration", &load_calibration, py::arg("path"));
    m.def("save_calibration", &save_calibration, py::arg("path"), py::arg("camera"));

    m.def(
        "project_point",
        [](const CameraModel& camera, double x, double y, double z) -> py::object {
            const auto hit = project_point(camera, Eigen::Vector3d(x, y, z));
            if (!hit) return py::none();
            py::dict out;
            out["u"] = hit->u;
            out["v"] = hit->v;
            out["uf"] = hit->uf;
            out["vf"] = hit->vf;
            out["depth"] = hit->depth;
            return out;
        },
        py::arg("camera"), py::arg("x"), py::arg("y"), py::arg("z"),
        "Pixel and feature-grid coordinates of one point, or None outside the frustum");

    m.def(
        "project_cloud",
        [](const CameraModel& camera, const py::array_t<double, py::array::c_style | py::array::forcecast>& cloud) {
            const auto projections = project_cloud(camera, to_cloud(cloud));
            py::array_t<double> arr({static_cast<py::ssize_t>(projections.size()), static_cast<py::ssize_t>(6)});
            double* dst = arr.mutable_data();
            for (const auto& p : projections) {
                dst[0] = static_cast<double>(p.point_index);
                dst[1] = p.u;
                dst[2] = p.v;
                dst[3] = p.uf;
                dst[4] = p.vf;
                dst[5] = p.depth;
                dst += 6;
            }
            return arr;
        },
        py::arg("camera"), py::arg("cloud"),
        "In-frustum projections as rows of (point_index, u, v, uf, vf, depth)");

    m.def(
        "self_attention",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& input, int c_q, int c_k, int c_v,
           uint64_t seed) {
            const FeatureMap map = to_feature_map(input);
            const AttentionParams params = AttentionParams::seeded(map.channels, c_q, c_k, c_v, seed);
            return from_feature_map(self_attention(map, params, nullptr).fused);
        },
        py::arg("input"), py::arg("c_q"), py::arg("c_k"), py::arg("c_v"), py::arg("seed"),
        "Seeded single-head attention over the cells of a (c, h, w) map");

    m.def(
        "cross_entropy",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
           const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& labels) {
            return cross_entropy(to_feature_map(logits), to_label_map(labels)).loss;
        },
        py::arg("logits"), py::arg("labels"));

    m.def(
        "lovasz_softmax",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs,
           const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& labels) {
            return lovasz_softmax(to_feature_map(probs), to_label_map(labels));
        },
        py::arg("probs"), py::arg("labels"));

    m.def(
        "softmax_probs",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits) {
            return from_feature_map(softmax_probs(to_feature_map(logits)));
        },
        py::arg("logits"));

    m.def(
        "mean_iou",
        [](const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& truth, int num_classes) {
            const IouReport report = mean_iou(to_label_map(pred), to_label_map(truth), num_classes);
            py::dict out;
            out["mean"] = report.mean;
            out["per_class"] = report.per_class;
            return out;
        },
        py::arg("pred"), py::arg("truth"), py::arg("num_classes"));

    m.def("load_feature_map", [](const std::string& path) { return from_feature_map(load_feature_map(path)); },
          py::arg("path"));
    m.def(
        "save_feature_map",
        [](const std::string& path, const py::array_t<double, py::array::c_style | py::array::forcecast>& map) {
            save_feature_map(path, to_feature_map(map));
        },
        py::arg("path"), py::arg("map"));
    m.def("load_label_map", [](const std::string& path) { return from_label_map(load_label_map(path)); },
          py::arg("path"));
    m.def(
        "save_label_map",
        [](const std::string& path, const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& labels) {
            save_label_map(path, to_label_map(labels));
        },
        py::arg("path"), py::arg("labels"));
    m.def("load_point_cloud", [](const std::string& path) { return from_cloud(load_point_cloud(path)); },
          py::arg("path"));
    m.def(
        "save_point_cloud",
        [](const std::string& path, const py::array_t<double, py::array::c_style | py::array::forcecast>& cloud) {
            save_point_cloud(path, to_cloud(cloud));
        },
        py::arg("path"), py::arg("cloud"));

    m.def(
        "run_fusion",
        [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& image_features,
           const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& predicted_depth,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& cloud,
           const std::vector<CameraModel>& cameras, const py::dict& config_overrides) {
            if (image_features.size() != predicted_depth.size()) {
                throw validation_error("image_features and predicted_depth must pair up one per view");
            }
            PipelineConfig config;
            config.n_views = static_cast<int>(image_features.size());
            for (const auto& item : config_overrides) {
                config.set_field(py::cast<std::string>(item.first), py::cast<std::string>(py::str(item.second)));
            }
            config.n_views = static_cast<int>(image_features.size());
            std::vector<ViewInput> views(image_features.size());
            for (size_t v = 0; v < image_features.size(); ++v) {
                views[v].image_features = to_feature_map(image_features[v]);
                views[v].predicted_depth = to_feature_map(predicted_depth[v]);
            }
            const FusionResult result = run_fusion(views, to_cloud(cloud), cameras, config, nullptr);
            py::dict out;
            py::list fused, image_logits, fused_logits;
            for (const auto& map : result.fused) fused.append(from_feature_map(map));
            for (const auto& map : result.image_logits) image_logits.append(from_feature_map(map));
            for (const auto& map : result.fused_logits) fused_logits.append(from_feature_map(map));
            out["fused"] = fused;
            out["image_logits"] = image_logits;
            out["fused_logits"] = fused_logits;
            out["point_logits"] = from_feature_map(result.point_logits);
            out["voxel_logits"] = from_feature_map(result.voxel_logits);
            return out;
        },
        py::arg("image_features"), py::arg("predicted_depth"), py::arg("cloud"), py::arg("cameras"),
        py::arg("config") = py::dict(),
        "Full pipeline over numpy inputs; config maps field names to values as in a config file");
}
