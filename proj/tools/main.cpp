// Command-line front end: synthetic data generation, projection, the full
// fusion pipeline, loss reports, IoU evaluation, and oracle self-checks.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mlpfseg/ddpm.hpp"
#include "mlpfseg/errors.hpp"
#include "mlpfseg/geometry.hpp"
#include "mlpfseg/io.hpp"
#include "mlpfseg/losses.hpp"
#include "mlpfseg/pffm.hpp"
#include "mlpfseg/pipeline.hpp"
#include "mlpfseg/rng.hpp"
#include "mlpfseg/scene.hpp"
#include "mlpfseg/types.hpp"
#include "mlpfseg/voxelizer.hpp"
#include "oracle.hpp"

namespace fs = std::filesystem;
using namespace mlpfseg;
using nlohmann::json;

namespace {

// Demo scene used whenever no scene file is given: a ground plane, two
// crates, and the standard 3x3 rig on a 1.8 m mast.
Scene built_in_scene() {
    Scene scene;
    scene.num_classes = 15;
    scene.lidar.origin = {0.0, 0.0, 1.8};
    scene.lidar.azimuth_start_deg = -35.0;
    scene.lidar.azimuth_end_deg = 35.0;
    scene.lidar.azimuth_steps = 48;
    scene.lidar.elevation_start_deg = -30.0;
    scene.lidar.elevation_end_deg = -5.0;
    scene.lidar.elevation_steps = 14;
    scene.lidar.max_range = 80.0;

    ScenePrimitive ground;
    ground.kind = ScenePrimitive::Kind::Plane;
    ground.center = {0.0, 0.0, 0.0};
    ground.class_id = 1;
    scene.primitives.push_back(ground);

    ScenePrimitive near_box;
    near_box.center = {0.0, 8.0, 1.0};
    near_box.size = {3.0, 2.0, 2.0};
    near_box.class_id = 3;
    scene.primitives.push_back(near_box);

    ScenePrimitive far_box;
    far_box.center = {-2.5, 12.0, 1.0};
    far_box.size = {2.0, 2.0, 2.0};
    far_box.class_id = 5;
    scene.primitives.push_back(far_box);

    scene.cameras = make_camera_rig(48.0, 48.0, 23.5, 23.5, 48, 48, 24, 24, {0.0, 0.0, 1.8}, 0.3,
                                    scene.lidar.origin, &scene.camera_positions);
    return scene;
}

// Config defaults sized for the demo scene; a --config file starts from the
// library defaults instead.
PipelineConfig demo_config() {
    PipelineConfig config;
    config.c_img = 8;
    config.c_p = 8;
    config.c_q = 8;
    config.c_k = 8;
    config.c_v = 8;
    config.num_classes = 15;
    config.voxel.resolution = 0.1;
    config.voxel.bounds_min = {-20.0, 0.0, -3.0};
    config.voxel.bounds_max = {20.0, 40.0, 5.0};
    return config;
}

Scene load_or_default_scene(const std::string& scene_path, int views_limit) {
    Scene scene = scene_path.empty() ? built_in_scene() : load_scene(scene_path);
    scene.validate();
    if (views_limit > 0) {
        if (views_limit > static_cast<int>(scene.cameras.size())) {
            std::ostringstream msg;
            msg << "--views " << views_limit << " exceeds the " << scene.cameras.size() << " scene cameras";
            throw validation_error(msg.str());
        }
        scene.cameras.resize(static_cast<size_t>(views_limit));
        if (scene.camera_positions.size() >= static_cast<size_t>(views_limit)) {
            scene.camera_positions.resize(static_cast<size_t>(views_limit));
        }
    }
    return scene;
}

std::vector<int> parse_view_order(const std::string& text, int n_views) {
    std::vector<int> order;
    std::stringstream in(text);
    std::string token;
    while (std::getline(in, token, ',')) {
        try {
            size_t pos = 0;
            const int v = std::stoi(token, &pos);
            if (pos != token.size()) throw std::invalid_argument(token);
            order.push_back(v);
        } catch (const std::exception&) {
            throw validation_error("--view-order: cannot parse \"" + token + "\" as a view index");
        }
    }
    if (static_cast<int>(order.size()) != n_views) {
        std::ostringstream msg;
        msg << "--view-order lists " << order.size() << " views, scene has " << n_views;
        throw validation_error(msg.str());
    }
    std::vector<bool> seen(static_cast<size_t>(n_views), false);
    for (int v : order) {
        if (v < 0 || v >= n_views || seen[static_cast<size_t>(v)]) {
            throw validation_error("--view-order must be a permutation of 0.." + std::to_string(n_views - 1));
        }
        seen[static_cast<size_t>(v)] = true;
    }
    return order;
}

std::array<double, 4> parse_depth_plane(const std::string& text) {
    std::array<double, 4> out{};
    std::stringstream in(text);
    std::string token;
    size_t i = 0;
    while (std::getline(in, token, ',')) {
        if (i >= 4) throw validation_error("--depth-plane wants base,gx,gy,sigma");
        try {
            size_t pos = 0;
            out[i] = std::stod(token, &pos);
            if (pos != token.size()) throw std::invalid_argument(token);
        } catch (const std::exception&) {
            throw validation_error("--depth-plane: cannot parse \"" + token + "\" as a number");
        }
        ++i;
    }
    if (i != 4) throw validation_error("--depth-plane wants base,gx,gy,sigma");
    return out;
}

void apply_set_overrides(PipelineConfig& config, const std::vector<std::string>& pairs) {
    for (const std::string& pair : pairs) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos) {
            throw validation_error("--set wants key=value, got \"" + pair + "\"");
        }
        config.set_field(pair.substr(0, eq), pair.substr(eq + 1));
    }
}

std::string fmt(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    return buffer;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out_dir;
    std::string scene_path;
    uint64_t seed = 42;
    int views = 0;
    int channels = 8;
    double background_depth = 60.0;
};

int run_synth(const SynthArgs& args) {
    const Scene scene = load_or_default_scene(args.scene_path, args.views);
    fs::create_directories(args.out_dir);
    const fs::path out(args.out_dir);

    const PointCloud cloud = sample_lidar(scene);
    save_point_cloud((out / "cloud.lfpc").string(), cloud);

    for (size_t v = 0; v < scene.cameras.size(); ++v) {
        const CameraModel& camera = scene.cameras[v];
        const std::string tag = "_v" + std::to_string(v);
        const RenderedView render = render_view(scene, camera);
        save_feature_map((out / ("image_features" + tag + ".lffm")).string(),
                         synthesize_image_features(args.channels, camera.grid_height, camera.grid_width,
                                                   args.seed * 100 + v));
        save_feature_map((out / ("predicted_depth" + tag + ".lffm")).string(),
                         predicted_depth_from_render(render, args.background_depth));
        save_label_map((out / ("labels" + tag + ".lflm")).string(), render.labels);
        save_calibration((out / ("calib" + tag + ".txt")).string(), camera);
        save_sparse_grid((out / ("sparse_depth" + tag + ".lfsg")).string(),
                         build_sparse_depth_map(camera, cloud, GridPlane::Feature));
    }
    std::cout << "wrote " << cloud.size() << " points and " << scene.cameras.size() << " views to " << args.out_dir
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct ProjectArgs {
    std::string cloud_path;
    std::string calib_path;
    std::string out_path;
    std::string plane = "feature";
};

int run_project(const ProjectArgs& args) {
    const PointCloud cloud = load_point_cloud(args.cloud_path);
    const CameraModel camera = load_calibration(args.calib_path);
    const GridPlane plane = args.plane == "image" ? GridPlane::Image : GridPlane::Feature;
    const SparseGrid depth = build_sparse_depth_map(camera, cloud, plane);
    save_sparse_grid(args.out_path, depth);
    std::cout << "projected " << cloud.size() << " points into a " << depth.height << "x" << depth.width
              << " grid; " << depth.valid_count() << " cells carry depth\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct FuseArgs {
    std::string out_dir;
    std::string scene_path;
    std::string config_path;
    std::vector<std::string> set_pairs;
    std::string view_order;
    std::string depth_plane;
    uint64_t seed = 42;
    bool seed_given = false;
    int views = 0;
    bool no_labels = false;
};

json loss_report_json(const LossReport& report) {
    json j;
    j["has_image"] = report.has_image;
    j["has_point"] = report.has_point;
    j["point_head_skipped"] = report.point_head_skipped;
    j["voxel_head_skipped"] = report.voxel_head_skipped;
    j["center_ce"] = report.center_ce;
    j["center_lovasz"] = report.center_lovasz;
    j["fused_ce"] = report.fused_ce;
    j["align"] = report.align;
    j["side_terms"] = json::array();
    for (const ViewLossTerms& term : report.side_terms) {
        j["side_terms"].push_back({{"ce", term.ce}, {"lovasz", term.lovasz}});
    }
    j["image_total"] = report.image_total;
    j["point_ce"] = report.point_ce;
    j["point_lovasz"] = report.point_lovasz;
    j["voxel_ce"] = report.voxel_ce;
    j["voxel_lovasz"] = report.voxel_lovasz;
    j["point_total"] = report.point_total;
    j["total"] = report.total;
    return j;
}

int run_fuse(const FuseArgs& args) {
    const Scene scene = load_or_default_scene(args.scene_path, args.views);
    const int n_views = static_cast<int>(scene.cameras.size());

    PipelineConfig config = args.config_path.empty() ? demo_config() : PipelineConfig::from_file(args.config_path);
    apply_set_overrides(config, args.set_pairs);
    config.n_views = n_views;
    if (args.seed_given) config.seed = args.seed;
    else if (args.config_path.empty()) config.seed = args.seed;

    const PointCloud cloud = sample_lidar(scene);

    const bool want_labels = !args.no_labels;
    const bool plane_depth = !args.depth_plane.empty();
    std::array<double, 4> plane{};
    if (plane_depth) plane = parse_depth_plane(args.depth_plane);

    std::vector<ViewInput> views(static_cast<size_t>(n_views));
    FusionLabels labels;
    for (int v = 0; v < n_views; ++v) {
        const CameraModel& camera = scene.cameras[static_cast<size_t>(v)];
        views[static_cast<size_t>(v)].image_features = synthesize_image_features(
            config.c_img, camera.grid_height, camera.grid_width, config.seed * 100 + static_cast<uint64_t>(v));
        if (plane_depth && !want_labels) {
            views[static_cast<size_t>(v)].predicted_depth =
                plane_depth_model(camera.grid_height, camera.grid_width, plane[0], plane[1], plane[2], plane[3],
                                  config.seed + static_cast<uint64_t>(v));
            continue;
        }
        const RenderedView render = render_view(scene, camera);
        views[static_cast<size_t>(v)].predicted_depth =
            plane_depth ? plane_depth_model(camera.grid_height, camera.grid_width, plane[0], plane[1], plane[2],
                                            plane[3], config.seed + static_cast<uint64_t>(v))
                        : predicted_depth_from_render(render, 60.0);
        if (want_labels) labels.image_labels.push_back(render.labels);
    }
    if (want_labels) {
        labels.point_labels.reserve(cloud.size());
        for (const auto& p : cloud.points) labels.point_labels.push_back(static_cast<uint8_t>(p[3]));
    }

    // A permutation relabels the view slots; the center follows its view so
    // the same physical computation runs under either labeling.
    std::vector<ViewInput> run_views = std::move(views);
    std::vector<CameraModel> run_cameras = scene.cameras;
    if (!args.view_order.empty()) {
        const std::vector<int> order = parse_view_order(args.view_order, n_views);
        const int original_center = config.center_index();
        std::vector<ViewInput> permuted_views;
        std::vector<CameraModel> permuted_cameras;
        std::vector<LabelMap> permuted_labels;
        for (int slot = 0; slot < n_views; ++slot) {
            const int source = order[static_cast<size_t>(slot)];
            permuted_views.push_back(std::move(run_views[static_cast<size_t>(source)]));
            permuted_cameras.push_back(run_cameras[static_cast<size_t>(source)]);
            if (want_labels) permuted_labels.push_back(labels.image_labels[static_cast<size_t>(source)]);
            if (source == original_center) config.center_view = slot;
        }
        run_views = std::move(permuted_views);
        run_cameras = std::move(permuted_cameras);
        if (want_labels) labels.image_labels = std::move(permuted_labels);
    }

    const FusionResult result =
        run_fusion(run_views, cloud, run_cameras, config, want_labels ? &labels : nullptr);

    fs::create_directories(args.out_dir);
    const fs::path out(args.out_dir);
    save_point_cloud((out / "cloud.lfpc").string(), cloud);
    for (int v = 0; v < n_views; ++v) {
        const std::string tag = "_v" + std::to_string(v) + ".lffm";
        save_feature_map((out / ("fused" + tag)).string(), result.fused[static_cast<size_t>(v)]);
        save_feature_map((out / ("image_logits" + tag)).string(), result.image_logits[static_cast<size_t>(v)]);
        save_feature_map((out / ("fused_logits" + tag)).string(), result.fused_logits[static_cast<size_t>(v)]);
    }
    if (!result.point_logits.data.empty()) {
        save_feature_map((out / "point_logits.lffm").string(), result.point_logits);
    }
    if (!result.voxel_logits.data.empty()) {
        save_feature_map((out / "voxel_logits.lffm").string(), result.voxel_logits);
    }
    if (result.has_voxel_labels) {
        save_label_map((out / "voxel_labels.lflm").string(), result.voxel_labels);
    }
    if (want_labels) {
        std::ofstream json_out((out / "losses.json").string());
        json_out << loss_report_json(result.losses).dump(2) << "\n";
    }

    {
        std::ofstream summary((out / "summary.txt").string());
        summary << "views " << n_views << "\n";
        summary << "cloud_points " << result.point_diagnostics.cloud_points << "\n";
        summary << "retained_points " << result.point_diagnostics.retained_points << "\n";
        summary << "occupied_voxels " << result.point_diagnostics.occupied_voxels << "\n";
        for (int v = 0; v < n_views; ++v) {
            const ViewDiagnostics& diag = result.view_diagnostics[static_cast<size_t>(v)];
            summary << "view " << v << ": projections " << diag.projections_in_frustum << " scattered "
                    << diag.scattered << " clamped " << diag.clamped << " collided " << diag.collided;
            if (diag.empty_projection) {
                summary << " empty_projection";
            } else {
                summary << " rect [" << diag.rect.x_min << "," << diag.rect.x_max << "]x[" << diag.rect.y_min
                        << "," << diag.rect.y_max << "]";
            }
            summary << " align " << fmt(diag.align_loss) << " depth_cells " << diag.depth_cells << "\n";
        }
    }

    std::cout << "fused " << n_views << " views over " << cloud.size() << " points into " << args.out_dir << "\n";
    if (want_labels) {
        std::cout << "total loss " << fmt(result.losses.total) << " (image " << fmt(result.losses.image_total)
                  << ", point " << fmt(result.losses.point_total) << ")\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct LossesArgs {
    std::string logits_path;
    std::string labels_path;
    bool as_json = false;
};

int run_losses(const LossesArgs& args) {
    const FeatureMap logits = load_feature_map(args.logits_path);
    const LabelMap labels = load_label_map(args.labels_path);
    const double ce = cross_entropy(logits, labels).loss;
    const double lovasz = lovasz_softmax(softmax_probs(logits), labels);
    if (args.as_json) {
        json j;
        j["cross_entropy"] = ce;
        j["lovasz"] = lovasz;
        j["total"] = ce + lovasz;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "cross_entropy " << fmt(ce) << "\n";
        std::cout << "lovasz " << fmt(lovasz) << "\n";
        std::cout << "total " << fmt(ce + lovasz) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string pred_path;
    std::string truth_path;
    int classes = 15;
    bool as_json = false;
};

int run_eval(const EvalArgs& args) {
    const LabelMap pred = load_label_map(args.pred_path);
    const LabelMap truth = load_label_map(args.truth_path);
    const IouReport report = mean_iou(pred, truth, args.classes);
    if (args.as_json) {
        json j;
        j["mean_iou"] = report.mean;
        j["per_class"] = json::array();
        for (int c = 0; c < args.classes; ++c) {
            if (!report.present[static_cast<size_t>(c)]) continue;
            j["per_class"].push_back({{"class", c}, {"iou", report.per_class[static_cast<size_t>(c)]}});
        }
        std::cout << j.dump(2) << "\n";
    } else {
        for (int c = 0; c < args.classes; ++c) {
            if (!report.present[static_cast<size_t>(c)]) continue;
            std::cout << "class_" << c << " " << fmt(report.per_class[static_cast<size_t>(c)]) << "\n";
        }
        std::cout << "mean_iou " << fmt(report.mean) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct OracleArgs {
    std::string fixtures_dir;
    int trials = 20;
    uint64_t seed = 1;
};

int run_oracle(const OracleArgs& args) {
    bool all_ok = true;
    auto report = [&](const char* name, double deviation, double tolerance) {
        const bool ok = deviation <= tolerance;
        all_ok = all_ok && ok;
        std::cout << name << " max_deviation " << fmt(deviation) << " tolerance " << fmt(tolerance) << " "
                  << (ok ? "PASS" : "FAIL") << "\n";
    };

    {
        std::mt19937_64 rng(derive_seed(args.seed, "oracle-completion"));
        double worst = 0.0, worst_weight = 0.0;
        for (int t = 0; t < args.trials; ++t) {
            const int h = 12, w = 12, c = 3;
            FeatureMap scattered(c, h, w);
            SparseGrid mask(h, w);
            const double rate = 0.15 + 0.7 * uniform_unit(rng);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (uniform_unit(rng) >= rate) continue;
                    mask.set(y, x, 1.0);
                    for (int ch = 0; ch < c; ++ch) scattered.at(ch, y, x) = uniform_sym(rng, 2.0);
                }
            }
            if (mask.valid_count() == 0) mask.set(0, 0, 1.0);
            BoundingRect rect;
            rect.x_min = 0;
            rect.x_max = w - 1;
            rect.y_min = 0;
            rect.y_max = h - 1;
            const FeatureMap completed = interpolate_missing(scattered, mask, rect);
            const auto expected = oracle::grid_interpolation(scattered, mask, rect, 1e-8);
            worst = std::max(worst, oracle::max_abs_diff(completed, expected.completed));
            worst_weight = std::max(worst_weight, expected.max_weight_sum_error);
        }
        report("completion_vs_oracle", worst, 1e-9);
        report("completion_weight_sums", worst_weight, 1e-12);
    }

    {
        std::mt19937_64 rng(derive_seed(args.seed, "oracle-voxel"));
        double worst = 0.0;
        for (int t = 0; t < args.trials; ++t) {
            PointCloud cloud;
            for (int i = 0; i < 400; ++i) {
                cloud.points.push_back({uniform_sym(rng, 4.9), uniform_sym(rng, 4.9),
                                        -1.9 + uniform_unit(rng) * 3.8, uniform_sym(rng, 1.0)});
            }
            VoxelGridConfig config;
            config.resolution = 0.3;
            config.bounds_min = {-5.0, -5.0, -2.0};
            config.bounds_max = {5.0, 5.0, 2.0};
            VoxelGrid grid = assign_voxels(cloud, config);
            featurize_voxels(grid, cloud, default_point_encoder(6), 6);
            const VoxelFeatureInterpolator interpolate(grid);
            for (int q = 0; q < 10; ++q) {
                const std::array<double, 3> query{uniform_sym(rng, 5.0), uniform_sym(rng, 5.0),
                                                  uniform_sym(rng, 2.0)};
                const std::vector<double> got = interpolate(query);
                const std::vector<double> expected = oracle::voxel_interpolation(grid, query, 1e-8);
                for (size_t j = 0; j < expected.size(); ++j) {
                    worst = std::max(worst, std::fabs(got[j] - expected[j]));
                }
            }
        }
        report("voxel_vs_oracle", worst, 1e-9);
    }

    {
        std::mt19937_64 rng(derive_seed(args.seed, "oracle-attention"));
        double worst = 0.0, worst_row = 0.0;
        for (int t = 0; t < args.trials; ++t) {
            AttentionParams params = AttentionParams::seeded(4, 3, 3, 5, args.seed + static_cast<uint64_t>(t));
            for (double& s : params.ln_scale) s = 0.5 + uniform_unit(rng);
            for (double& s : params.ln_shift) s = uniform_sym(rng, 0.3);
            FeatureMap input(4, 4, 4);
            for (double& v : input.data) v = uniform_sym(rng, 1.5);
            FeatureMap bias(5, 4, 4);
            for (double& v : bias.data) v = uniform_sym(rng, 0.5);
            const FeatureMap* bias_ptr = (t % 2 == 0) ? &bias : nullptr;
            const AttentionResult got = self_attention(input, params, bias_ptr);
            const auto expected = oracle::dense_attention(input, params, bias_ptr);
            worst = std::max(worst, oracle::max_abs_diff(got.fused, expected.fused));
            worst_row = std::max(worst_row, expected.max_row_sum_error);
        }
        report("attention_vs_oracle", worst, 1e-9);
        report("attention_row_sums", worst_row, 1e-12);
    }

    {
        std::mt19937_64 rng(derive_seed(args.seed, "oracle-rect"));
        int mismatches = 0;
        for (int t = 0; t < args.trials; ++t) {
            std::vector<Projection> projections;
            for (int i = 0; i < 30; ++i) {
                Projection p;
                p.point_index = i;
                p.uf = uniform_sym(rng, 10.0) + 8.0;
                p.vf = uniform_sym(rng, 10.0) + 8.0;
                p.depth = 1.0 + uniform_unit(rng) * 20.0;
                projections.push_back(p);
            }
            const BoundingRect got = compute_bounding_rectangle(projections, 16, 16);
            const BoundingRect expected = oracle::bounding_rect_scan(projections, 16, 16);
            if (got.x_min != expected.x_min || got.x_max != expected.x_max || got.y_min != expected.y_min ||
                got.y_max != expected.y_max) {
                ++mismatches;
            }
        }
        report("bounding_rect_vs_oracle", mismatches, 0.0);
    }

    if (!args.fixtures_dir.empty()) {
        // Fixture-directory mode: "NAME.lffm" + "NAME.lfsg" pairs are checked
        // against the completion oracle; each "NAME.lfpc" is voxelized and
        // checked against the brute-force interpolation at seeded queries.
        std::vector<fs::path> entries;
        for (const auto& entry : fs::directory_iterator(args.fixtures_dir)) {
            if (entry.is_regular_file()) entries.push_back(entry.path());
        }
        std::sort(entries.begin(), entries.end());
        int checked = 0;
        for (const fs::path& path : entries) {
            if (path.extension() == ".lffm") {
                fs::path mask_path = path;
                mask_path.replace_extension(".lfsg");
                if (!fs::exists(mask_path)) continue;
                const FeatureMap scattered = load_feature_map(path.string());
                const SparseGrid mask = load_sparse_grid(mask_path.string());
                if (mask.height != scattered.height || mask.width != scattered.width) {
                    throw validation_error(path.filename().string() + ": mask shape does not match the map");
                }
                if (mask.valid_count() == 0) {
                    throw validation_error(path.filename().string() + ": mask holds no valid cell");
                }
                BoundingRect rect;
                rect.x_min = 0;
                rect.x_max = scattered.width - 1;
                rect.y_min = 0;
                rect.y_max = scattered.height - 1;
                const FeatureMap completed = interpolate_missing(scattered, mask, rect);
                const auto expected = oracle::grid_interpolation(scattered, mask, rect, 1e-8);
                const double deviation = oracle::max_abs_diff(completed, expected.completed);
                report(("fixture:" + path.filename().string()).c_str(), deviation, 1e-9);
                ++checked;
            } else if (path.extension() == ".lfpc") {
                const PointCloud cloud = load_point_cloud(path.string());
                VoxelGridConfig config = demo_config().voxel;
                VoxelGrid grid = assign_voxels(cloud, config);
                if (grid.occupied_count() == 0) {
                    throw validation_error(path.filename().string() + ": no point falls inside the voxel bounds");
                }
                featurize_voxels(grid, cloud, default_point_encoder(8), 8);
                const VoxelFeatureInterpolator interpolate(grid);
                std::mt19937_64 rng(derive_seed(args.seed, path.filename().string()));
                double worst = 0.0;
                for (int q = 0; q < std::max(1, args.trials); ++q) {
                    const size_t pick = static_cast<size_t>(uniform_unit(rng) * cloud.size());
                    const auto& p = cloud.points[std::min(pick, cloud.size() - 1)];
                    const std::array<double, 3> query{p[0], p[1], p[2]};
                    const std::vector<double> got = interpolate(query);
                    const std::vector<double> expected = oracle::voxel_interpolation(grid, query, 1e-8);
                    for (size_t j = 0; j < expected.size(); ++j) {
                        worst = std::max(worst, std::fabs(got[j] - expected[j]));
                    }
                }
                report(("fixture:" + path.filename().string()).c_str(), worst, 1e-9);
                ++checked;
            }
        }
        std::cout << "checked " << checked << " fixture file(s) in " << args.fixtures_dir << "\n";
    }

    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LiDAR / light-field fusion toolkit"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "Generate dataset files from a synthetic scene");
    synth->add_option("--out-dir", synth_args.out_dir, "Output directory")->required();
    synth->add_option("--scene", synth_args.scene_path, "Scene description file (defaults to the demo scene)");
    synth->add_option("--seed", synth_args.seed, "Feature synthesis seed");
    synth->add_option("--views", synth_args.views, "Use only the first N scene cameras");
    synth->add_option("--channels", synth_args.channels, "Image feature channels");
    synth->add_option("--background-depth", synth_args.background_depth, "Depth for cells no primitive covers");

    ProjectArgs project_args;
    CLI::App* project = app.add_subcommand("project", "Project a cloud through a calibration into a sparse depth map");
    project->add_option("--cloud", project_args.cloud_path, "Point cloud file")->required();
    project->add_option("--calib", project_args.calib_path, "Calibration file")->required();
    project->add_option("--out", project_args.out_path, "Output sparse grid file")->required();
    project->add_option("--plane", project_args.plane, "Target grid: feature or image")
        ->check(CLI::IsMember({"feature", "image"}));

    FuseArgs fuse_args;
    CLI::App* fuse = app.add_subcommand("fuse", "Run the full fusion pipeline and write its outputs");
    fuse->add_option("--out-dir", fuse_args.out_dir, "Output directory")->required();
    fuse->add_option("--scene", fuse_args.scene_path, "Scene description file (defaults to the demo scene)");
    fuse->add_option("--config", fuse_args.config_path, "key=value config file (starts from library defaults)");
    fuse->add_option("--set", fuse_args.set_pairs, "Config override key=value (repeatable)");
    CLI::Option* seed_opt = fuse->add_option("--seed", fuse_args.seed, "Parameter and feature seed");
    fuse->add_option("--views", fuse_args.views, "Use only the first N scene cameras");
    fuse->add_option("--view-order", fuse_args.view_order,
                     "Comma-separated permutation of view indices; the center view follows its view");
    fuse->add_option("--depth-plane", fuse_args.depth_plane,
                     "Analytic predicted depth base,gx,gy,sigma instead of rendered depth");
    fuse->add_flag("--no-labels", fuse_args.no_labels, "Skip labels and the loss stack");

    LossesArgs losses_args;
    CLI::App* losses = app.add_subcommand("losses", "Loss report for a logits/labels pair");
    losses->add_option("--logits", losses_args.logits_path, "Logits feature map")->required();
    losses->add_option("--labels", losses_args.labels_path, "Label map")->required();
    losses->add_flag("--json", losses_args.as_json, "Emit JSON");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Per-class IoU between predictions and reference labels");
    eval->add_option("--pred", eval_args.pred_path, "Predicted label map")->required();
    eval->add_option("--truth", eval_args.truth_path, "Reference label map")->required();
    eval->add_option("--classes", eval_args.classes, "Number of classes");
    eval->add_flag("--json", eval_args.as_json, "Emit JSON");

    OracleArgs oracle_args;
    CLI::App* oracle_cmd = app.add_subcommand("oracle", "Compare fast paths against brute-force references");
    oracle_cmd->add_option("--fixtures", oracle_args.fixtures_dir, "Also check fixture files in this directory");
    oracle_cmd->add_option("--trials", oracle_args.trials, "Seeded trials per check")->check(CLI::PositiveNumber);
    oracle_cmd->add_option("--seed", oracle_args.seed, "Trial seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        fuse_args.seed_given = seed_opt->count() > 0;
        if (*synth) return run_synth(synth_args);
        if (*project) return run_project(project_args);
        if (*fuse) return run_fuse(fuse_args);
        if (*losses) return run_losses(losses_args);
        if (*eval) return run_eval(eval_args);
        if (*oracle_cmd) return run_oracle(oracle_args);
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const validation_error& e) {  // io_error included
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
