#include "mlpfseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

#include "mlpfseg/errors.hpp"
#include "mlpfseg/rng.hpp"

namespace mlpfseg {

namespace {

// Rethrows component errors with the pipeline stage attached, preserving the
// error category (and with it the CLI exit code).
template <typename Fn>
auto with_context(const std::string& ctx, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const io_error& e) {
        throw io_error(ctx + ": " + e.what());
    } catch (const numeric_error& e) {
        throw numeric_error(ctx + ": " + e.what());
    } catch (const validation_error& e) {
        throw validation_error(ctx + ": " + e.what());
    }
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw validation_error("config " + key + ": cannot parse \"" + value + "\" as an integer");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return static_cast<uint64_t>(v);
    } catch (const std::exception&) {
        throw validation_error("config " + key + ": cannot parse \"" + value + "\" as an unsigned integer");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw validation_error("config " + key + ": cannot parse \"" + value + "\" as a number");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw validation_error("config " + key + ": expected true/false/1/0, got \"" + value + "\"");
}

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void PipelineConfig::validate() const {
    if (n_views < 1) throw validation_error("config: n_views must be >= 1");
    if (c_img < 1 || c_p < 1 || c_q < 1 || c_k < 1 || c_v < 1) {
        throw validation_error("config: channel counts must be positive");
    }
    if (c_img != c_p) {
        std::ostringstream msg;
        msg << "config: c_img (" << c_img << ") must equal c_p (" << c_p
            << ") so the filled point map and the image map are comparable";
        throw validation_error(msg.str());
    }
    if (c_q != c_k) {
        std::ostringstream msg;
        msg << "config: c_q (" << c_q << ") must equal c_k (" << c_k << ")";
        throw validation_error(msg.str());
    }
    if (num_classes < 1 || num_classes > 255) {
        throw validation_error("config: num_classes must be in [1, 255]");
    }
    voxel.validate();
    if (!(eps_interp > 0.0) || !(eps_log > 0.0) || !(ln_eps > 0.0)) {
        throw validation_error("config: epsilon values must be positive");
    }
    weights.validate();
    if (!std::isfinite(align_weight) || align_weight < 0.0) {
        throw validation_error("config: align_weight must be finite and non-negative");
    }
    if (voxel_feature_layer < 0) throw validation_error("config: voxel_feature_layer must be >= 0");
    if (center_view >= n_views) {
        std::ostringstream msg;
        msg << "config: center_view " << center_view << " out of range for " << n_views << " views";
        throw validation_error(msg.str());
    }
}

void PipelineConfig::set_field(const std::string& key, const std::string& value) {
    if (key == "n_views") n_views = parse_int(key, value);
    else if (key == "c_img") c_img = parse_int(key, value);
    else if (key == "c_p") c_p = parse_int(key, value);
    else if (key == "c_q") c_q = parse_int(key, value);
    else if (key == "c_k") c_k = parse_int(key, value);
    else if (key == "c_v") c_v = parse_int(key, value);
    else if (key == "num_classes") num_classes = parse_int(key, value);
    else if (key == "voxel_resolution") voxel.resolution = parse_double(key, value);
    else if (key == "voxel_min_x") voxel.bounds_min[0] = parse_double(key, value);
    else if (key == "voxel_min_y") voxel.bounds_min[1] = parse_double(key, value);
    else if (key == "voxel_min_z") voxel.bounds_min[2] = parse_double(key, value);
    else if (key == "voxel_max_x") voxel.bounds_max[0] = parse_double(key, value);
    else if (key == "voxel_max_y") voxel.bounds_max[1] = parse_double(key, value);
    else if (key == "voxel_max_z") voxel.bounds_max[2] = parse_double(key, value);
    else if (key == "max_points_per_voxel") voxel.max_points_per_voxel = parse_int(key, value);
    else if (key == "voxel_feature_layer") voxel_feature_layer = parse_int(key, value);
    else if (key == "eps_interp") eps_interp = parse_double(key, value);
    else if (key == "eps_log") eps_log = parse_double(key, value);
    else if (key == "ln_eps") ln_eps = parse_double(key, value);
    else if (key == "alpha1") weights.alpha1 = parse_double(key, value);
    else if (key == "alpha2") weights.alpha2 = parse_double(key, value);
    else if (key == "align_weight") align_weight = parse_double(key, value);
    else if (key == "seed") seed = parse_u64(key, value);
    else if (key == "attention_streaming_threshold") {
        attention_streaming_threshold = static_cast<size_t>(parse_u64(key, value));
    } else if (key == "use_depth_bias") use_depth_bias = parse_bool(key, value);
    else if (key == "parallel_views") parallel_views = parse_bool(key, value);
    else if (key == "center_view") center_view = parse_int(key, value);
    else throw validation_error("config: unknown key \"" + key + "\"");
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error(path + ": cannot open for reading");
    PipelineConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string content = trim(line);
        if (content.empty()) continue;
        const auto eq = content.find('=');
        if (eq == std::string::npos) {
            std::ostringstream msg;
            msg << path << ":" << line_no << ": expected key=value, got \"" << content << "\"";
            throw io_error(msg.str());
        }
        const std::string key = trim(content.substr(0, eq));
        const std::string value = trim(content.substr(eq + 1));
        try {
            config.set_field(key, value);
        } catch (const validation_error& e) {
            std::ostringstream msg;
            msg << path << ":" << line_no << ": " << e.what();
            throw io_error(msg.str());
        }
    }
    return config;
}

void LinearHead::validate() const {
    if (in_channels < 1 || out_channels < 1) throw validation_error("classifier head: channel counts must be positive");
    if (weights.size() != static_cast<size_t>(in_channels) * out_channels) {
        std::ostringstream msg;
        msg << "classifier head: " << weights.size() << " weights, expected " << in_channels << "x" << out_channels;
        throw validation_error(msg.str());
    }
    if (bias.size() != static_cast<size_t>(out_channels)) {
        throw validation_error("classifier head: bias width mismatch");
    }
}

FeatureMap LinearHead::apply(const FeatureMap& input) const {
    validate();
    if (input.channels != in_channels) {
        std::ostringstream msg;
        msg << "classifier head: input has " << input.channels << " channels, expected " << in_channels;
        throw validation_error(msg.str());
    }
    FeatureMap out(out_channels, input.height, input.width);
    const size_t hw = static_cast<size_t>(input.height) * input.width;
    for (size_t cell = 0; cell < hw; ++cell) {
        for (int k = 0; k < out_channels; ++k) {
            double acc = bias[k];
            for (int c = 0; c < in_channels; ++c) {
                acc += weights[static_cast<size_t>(c) * out_channels + k] *
                       input.data[static_cast<size_t>(c) * hw + cell];
            }
            out.data[static_cast<size_t>(k) * hw + cell] = acc;
        }
    }
    return out;
}

LinearHead LinearHead::seeded(int in_channels, int out_channels, uint64_t seed, const std::string& role) {
    LinearHead head;
    head.in_channels = in_channels;
    head.out_channels = out_channels;
    std::mt19937_64 rng(derive_seed(seed, role));
    head.weights =
        uniform_vector(rng, static_cast<size_t>(in_channels) * out_channels, 1.0 / std::sqrt(double(in_channels)));
    head.bias.assign(static_cast<size_t>(out_channels), 0.0);
    head.validate();
    return head;
}

namespace {

struct ViewStage {
    FeatureMap fused;
    FeatureMap image_logits;
    FeatureMap fused_logits;
    ViewDiagnostics diag;
    std::vector<int> point_cell;  // per cloud point: flat feature cell or -1
};

struct SharedParams {
    AttentionParams attention;
    ConvStack conv;
    LinearHead image_head;
    LinearHead fused_head;
};

ViewStage run_view(const ViewInput& view, const CameraModel& camera, const PointCloud& cloud,
                   const std::vector<std::vector<double>>& point_features, const SharedParams& shared,
                   const PipelineConfig& config) {
    const int h = camera.grid_height;
    const int w = camera.grid_width;
    ViewStage stage;
    stage.point_cell.assign(cloud.size(), -1);

    const std::vector<Projection> projections = project_cloud(camera, cloud);
    stage.diag.projections_in_frustum = static_cast<int>(projections.size());
    for (const Projection& p : projections) {
        int row = 0, col = 0;
        projection_cell(p, GridPlane::Feature, h, w, row, col);
        stage.point_cell[p.point_index] = row * w + col;
    }

    FeatureMap fill(config.c_p, h, w);
    if (projections.empty()) {
        // Degenerate path: nothing projects, so the whole grid counts as
        // "outside the rectangle" and the filled point map falls back to the
        // image features (alignment cost 0 by construction).
        stage.diag.empty_projection = true;
        fill = view.image_features;
    } else {
        stage.diag.rect = compute_bounding_rectangle(projections, h, w);
        ScatterResult scatter =
            scatter_point_features(projections, point_features, config.c_p, h, w);
        stage.diag.scattered = scatter.scattered;
        stage.diag.clamped = scatter.clamped;
        stage.diag.collided = scatter.collided;
        const FeatureMap completed =
            interpolate_missing(scatter.features, scatter.occupancy, stage.diag.rect, config.eps_interp);
        fill = fill_outside(completed, view.image_features, stage.diag.rect);
    }
    stage.diag.align_loss = alignment_loss(fill, view.image_features).loss;

    const FeatureMap fused_in = fuse_concat(fill, view.image_features);

    const SparseGrid sparse_depth = build_sparse_depth_map(camera, projections, GridPlane::Feature);
    AttentionResult attended;
    if (config.use_depth_bias && sparse_depth.valid_count() > 0) {
        const SparseGrid diff = log_depth_difference({view.predicted_depth, sparse_depth}, config.eps_log);
        double abs_sum = 0.0;
        size_t n = 0;
        for (int y = 0; y < diff.height; ++y) {
            for (int x = 0; x < diff.width; ++x) {
                if (!diff.valid(y, x)) continue;
                abs_sum += std::fabs(diff.value(y, x));
                ++n;
            }
        }
        stage.diag.depth_cells = n;
        stage.diag.mean_abs_depth_diff = n > 0 ? abs_sum / static_cast<double>(n) : 0.0;
        const FeatureMap d_hat = conv2_embed(diff, shared.conv);
        attended = self_attention(fused_in, shared.attention, &d_hat, config.attention_streaming_threshold);
    } else {
        attended = self_attention(fused_in, shared.attention, nullptr, config.attention_streaming_threshold);
    }
    stage.fused = std::move(attended.fused);
    stage.image_logits = shared.image_head.apply(view.image_features);
    stage.fused_logits = shared.fused_head.apply(stage.fused);
    return stage;
}

// Majority class over each voxel's retained member points; ties take the
// smaller class id, voxels with no labeled member stay ignored.
LabelMap vote_voxel_labels(const VoxelGrid& grid, const std::vector<uint8_t>& point_labels, int num_classes) {
    LabelMap out(1, static_cast<int>(grid.occupied_count()));
    std::vector<int> counts(static_cast<size_t>(num_classes), 0);
    for (size_t v = 0; v < grid.members.size(); ++v) {
        std::fill(counts.begin(), counts.end(), 0);
        for (int point : grid.members[v]) {
            const uint8_t label = point_labels[point];
            if (label == LabelMap::kIgnore) continue;
            ++counts[label];
        }
        int best_class = -1;
        int best_count = 0;
        for (int c = 0; c < num_classes; ++c) {
            if (counts[c] > best_count) {
                best_count = counts[c];
                best_class = c;
            }
        }
        out.labels[v] = best_class >= 0 ? static_cast<uint8_t>(best_class) : LabelMap::kIgnore;
    }
    return out;
}

size_t count_labeled(const LabelMap& labels) {
    size_t n = 0;
    for (uint8_t label : labels.labels) n += (label != LabelMap::kIgnore);
    return n;
}

}  // namespace

FusionResult run_fusion(const std::vector<ViewInput>& views, const PointCloud& cloud,
                        const std::vector<CameraModel>& cameras, const PipelineConfig& config,
                        const FusionLabels* labels) {
    config.validate();
    if (static_cast<int>(views.size()) != config.n_views || cameras.size() != views.size()) {
        std::ostringstream msg;
        msg << "fusion: config expects " << config.n_views << " views, got " << views.size() << " inputs and "
            << cameras.size() << " cameras";
        throw validation_error(msg.str());
    }
    cloud.check_finite();
    for (size_t v = 0; v < views.size(); ++v) {
        const std::string ctx = "view " + std::to_string(v);
        with_context(ctx, [&]() {
            cameras[v].validate();
            const CameraModel& cam = cameras[v];
            if (views[v].image_features.channels != config.c_img ||
                views[v].image_features.height != cam.grid_height ||
                views[v].image_features.width != cam.grid_width) {
                throw validation_error("image features are " + views[v].image_features.shape_str() +
                                       ", camera grid wants " + std::to_string(config.c_img) + "x" +
                                       std::to_string(cam.grid_height) + "x" + std::to_string(cam.grid_width));
            }
            if (views[v].predicted_depth.channels != 1 ||
                views[v].predicted_depth.height != cam.grid_height ||
                views[v].predicted_depth.width != cam.grid_width) {
                throw validation_error("predicted depth is " + views[v].predicted_depth.shape_str() +
                                       ", expected 1x" + std::to_string(cam.grid_height) + "x" +
                                       std::to_string(cam.grid_width));
            }
            views[v].image_features.all_finite("image features");
            views[v].predicted_depth.all_finite("predicted depth");
            return 0;
        });
    }
    if (labels != nullptr) {
        if (!labels->image_labels.empty() && labels->image_labels.size() != views.size()) {
            std::ostringstream msg;
            msg << "fusion: " << labels->image_labels.size() << " label maps for " << views.size() << " views";
            throw validation_error(msg.str());
        }
        for (size_t v = 0; v < labels->image_labels.size(); ++v) {
            const LabelMap& lm = labels->image_labels[v];
            if (lm.height != cameras[v].grid_height || lm.width != cameras[v].grid_width) {
                std::ostringstream msg;
                msg << "view " << v << ": label map is " << lm.height << "x" << lm.width << ", grid is "
                    << cameras[v].grid_height << "x" << cameras[v].grid_width;
                throw validation_error(msg.str());
            }
            lm.check_classes(config.num_classes);
        }
        if (!labels->point_labels.empty() && labels->point_labels.size() != cloud.size()) {
            std::ostringstream msg;
            msg << "fusion: " << labels->point_labels.size() << " point labels for " << cloud.size() << " points";
            throw validation_error(msg.str());
        }
        for (size_t i = 0; i < labels->point_labels.size(); ++i) {
            if (labels->point_labels[i] != LabelMap::kIgnore && labels->point_labels[i] >= config.num_classes) {
                std::ostringstream msg;
                msg << "fusion: point label " << int(labels->point_labels[i]) << " at point " << i
                    << " out of range for " << config.num_classes << " classes";
                throw validation_error(msg.str());
            }
        }
    }

    FusionResult result;

    // Point-cloud branch groundwork: voxels and the per-point features that
    // the views scatter.
    result.point_diagnostics.cloud_points = cloud.size();
    result.point_diagnostics.empty_cloud = cloud.empty();
    VoxelGrid grid = with_context("voxelization", [&]() { return assign_voxels(cloud, config.voxel); });
    with_context("voxel features", [&]() {
        featurize_voxels(grid, cloud, default_point_encoder(config.c_p, config.voxel_feature_layer), config.c_p);
        return 0;
    });
    result.point_diagnostics.occupied_voxels = grid.occupied_count();
    for (const auto& members : grid.members) result.point_diagnostics.retained_points += members.size();
    result.point_diagnostics.empty_grid = grid.occupied_count() == 0;

    std::vector<std::vector<double>> point_features(cloud.size());
    if (!cloud.empty()) {
        if (grid.occupied_count() > 0) {
            const VoxelFeatureInterpolator interpolate(grid, config.eps_interp);
            for (size_t i = 0; i < cloud.size(); ++i) {
                point_features[i] =
                    interpolate({cloud.points[i][0], cloud.points[i][1], cloud.points[i][2]});
            }
        } else {
            // No voxel support anywhere: points carry zero features.
            for (auto& row : point_features) row.assign(static_cast<size_t>(config.c_p), 0.0);
        }
    }

    const SharedParams shared{
        [&] {
            AttentionParams p = AttentionParams::seeded(config.c_p + config.c_img, config.c_q, config.c_k,
                                                        config.c_v, config.seed);
            p.ln_eps = config.ln_eps;
            return p;
        }(),
        ConvStack::seeded(config.c_v, config.seed),
        LinearHead::seeded(config.c_img, config.num_classes, config.seed, "image-head"),
        LinearHead::seeded(config.c_v, config.num_classes, config.seed, "fused-head"),
    };

    // Per-view stages, optionally in parallel; outputs land by index so the
    // schedule cannot change the result.
    std::vector<ViewStage> stages(views.size());
    auto stage_task = [&](size_t v) {
        return with_context("view " + std::to_string(v), [&]() {
            return run_view(views[v], cameras[v], cloud, point_features, shared, config);
        });
    };
    if (config.parallel_views && views.size() > 1) {
        std::vector<std::future<ViewStage>> futures;
        futures.reserve(views.size());
        for (size_t v = 0; v < views.size(); ++v) {
            futures.push_back(std::async(std::launch::async, stage_task, v));
        }
        for (size_t v = 0; v < views.size(); ++v) stages[v] = futures[v].get();
    } else {
        for (size_t v = 0; v < views.size(); ++v) stages[v] = stage_task(v);
    }

    result.fused.reserve(views.size());
    result.image_logits.reserve(views.size());
    result.fused_logits.reserve(views.size());
    result.view_diagnostics.reserve(views.size());
    for (ViewStage& stage : stages) {
        result.fused.push_back(std::move(stage.fused));
        result.image_logits.push_back(std::move(stage.image_logits));
        result.fused_logits.push_back(std::move(stage.fused_logits));
        result.view_diagnostics.push_back(stage.diag);
    }

    // Point head: voxel-interpolated features next to the mean of the image
    // features gathered from every view that sees the point.
    if (!cloud.empty()) {
        FeatureMap point_in(config.c_p + config.c_img, 1, static_cast<int>(cloud.size()));
        for (size_t i = 0; i < cloud.size(); ++i) {
            for (int c = 0; c < config.c_p; ++c) point_in.at(c, 0, static_cast<int>(i)) = point_features[i][c];
            int seen = 0;
            std::vector<double> gathered(static_cast<size_t>(config.c_img), 0.0);
            for (size_t v = 0; v < views.size(); ++v) {
                const int cell = stages[v].point_cell[i];
                if (cell < 0) continue;
                ++seen;
                const size_t hw = static_cast<size_t>(cameras[v].grid_height) * cameras[v].grid_width;
                for (int c = 0; c < config.c_img; ++c) {
                    gathered[c] += views[v].image_features.data[static_cast<size_t>(c) * hw + cell];
                }
            }
            for (int c = 0; c < config.c_img; ++c) {
                point_in.at(config.c_p + c, 0, static_cast<int>(i)) =
                    seen > 0 ? gathered[c] / seen : 0.0;
            }
        }
        const LinearHead point_head =
            LinearHead::seeded(config.c_p + config.c_img, config.num_classes, config.seed, "point-head");
        result.point_logits = with_context("point head", [&]() { return point_head.apply(point_in); });
    }

    if (grid.occupied_count() > 0) {
        FeatureMap voxel_in(config.c_p, 1, static_cast<int>(grid.occupied_count()));
        for (size_t v = 0; v < grid.occupied_count(); ++v) {
            for (int c = 0; c < config.c_p; ++c) {
                voxel_in.at(c, 0, static_cast<int>(v)) = grid.features[v][c];
            }
        }
        const LinearHead voxel_head =
            LinearHead::seeded(config.c_p, config.num_classes, config.seed, "voxel-head");
        result.voxel_logits = with_context("voxel head", [&]() { return voxel_head.apply(voxel_in); });
    }

    // Loss stack.
    if (labels != nullptr) {
        LossReport& report = result.losses;
        const int center = config.center_index();
        if (!labels->image_labels.empty()) {
            report.has_image = true;
            std::vector<ViewLossTerms> all_terms(views.size());
            for (size_t v = 0; v < views.size(); ++v) {
                const std::string ctx = "view " + std::to_string(v) + " image loss";
                all_terms[v] = with_context(ctx, [&]() {
                    ViewLossTerms terms;
                    terms.ce = cross_entropy(result.image_logits[v], labels->image_labels[v]).loss;
                    terms.lovasz =
                        lovasz_softmax(softmax_probs(result.image_logits[v]), labels->image_labels[v]);
                    return terms;
                });
            }
            report.center_ce = all_terms[center].ce;
            report.center_lovasz = all_terms[center].lovasz;
            for (size_t v = 0; v < views.size(); ++v) {
                if (static_cast<int>(v) != center) report.side_terms.push_back(all_terms[v]);
            }
            report.fused_ce = with_context("fused loss", [&]() {
                return cross_entropy(result.fused_logits[center], labels->image_labels[center]).loss;
            });
            report.align = config.align_weight * result.view_diagnostics[center].align_loss;
            report.image_total = total_image_loss({report.center_ce, report.center_lovasz}, report.side_terms,
                                                  report.fused_ce, report.align, config.weights);
        }
        if (!labels->point_labels.empty()) {
            report.has_point = true;
            // Non-empty point labels imply a non-empty cloud (counts were
            // checked above).
            LabelMap point_label_map(1, static_cast<int>(cloud.size()));
            std::copy(labels->point_labels.begin(), labels->point_labels.end(), point_label_map.labels.begin());
            const bool point_usable = count_labeled(point_label_map) > 0;
            bool voxel_usable = false;
            if (grid.occupied_count() > 0) {
                result.voxel_labels = vote_voxel_labels(grid, labels->point_labels, config.num_classes);
                result.has_voxel_labels = true;
                voxel_usable = count_labeled(result.voxel_labels) > 0;
            }
            report.point_head_skipped = !point_usable;
            report.voxel_head_skipped = !voxel_usable;
            if (point_usable) {
                report.point_ce = with_context("point loss", [&]() {
                    return cross_entropy(result.point_logits, point_label_map).loss;
                });
                report.point_lovasz = with_context("point loss", [&]() {
                    return lovasz_softmax(softmax_probs(result.point_logits), point_label_map);
                });
            }
            if (voxel_usable) {
                report.voxel_ce = with_context("voxel loss", [&]() {
                    return cross_entropy(result.voxel_logits, result.voxel_labels).loss;
                });
                report.voxel_lovasz = with_context("voxel loss", [&]() {
                    return lovasz_softmax(softmax_probs(result.voxel_logits), result.voxel_labels);
                });
            }
            if (point_usable && voxel_usable) {
                report.point_total = with_context("point loss total", [&]() {
                    return total_point_loss(result.point_logits, point_label_map, result.voxel_logits,
                                            result.voxel_labels);
                });
            } else {
                report.point_total =
                    report.point_ce + report.point_lovasz + report.voxel_ce + report.voxel_lovasz;
            }
        }
        report.total = total_loss(report.image_total, report.point_total);
    }

    return result;
}

}  // namespace mlpfseg
