#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlpfseg/ddpm.hpp"
#include "mlpfseg/geometry.hpp"
#include "mlpfseg/losses.hpp"
#include "mlpfseg/pffm.hpp"
#include "mlpfseg/types.hpp"
#include "mlpfseg/voxelizer.hpp"

namespace mlpfseg {

struct PipelineConfig {
    int n_views = 1;
    int c_img = 48;  // image feature channels; must equal c_p so the filled
    int c_p = 48;    // point map and the image map are comparable
    int c_q = 96;
    int c_k = 96;
    int c_v = 96;
    int num_classes = 15;
    VoxelGridConfig voxel;
    int voxel_feature_layer = 0;
    double eps_interp = 1e-8;
    double eps_log = 1e-8;
    double ln_eps = 1e-12;
    LossWeights weights;
    double align_weight = 1.0;
    uint64_t seed = 42;
    size_t attention_streaming_threshold = 4096;
    bool use_depth_bias = true;
    bool parallel_views = true;
    int center_view = -1;  // -1 selects n_views / 2

    void validate() const;
    int center_index() const { return center_view < 0 ? n_views / 2 : center_view; }

    // Assigns one "key=value" pair; throws naming the key on unknown keys or
    // unparsable values.
    void set_field(const std::string& key, const std::string& value);

    // Line-oriented "key=value" file, '#' comments.
    static PipelineConfig from_file(const std::string& path);
};

// Untrained deterministic 1x1 classifier.
struct LinearHead {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<double> weights;  // in x out
    std::vector<double> bias;     // out

    void validate() const;
    FeatureMap apply(const FeatureMap& input) const;

    static LinearHead seeded(int in_channels, int out_channels, uint64_t seed, const std::string& role);
};

struct ViewInput {
    FeatureMap image_features;   // c_img x h x w
    FeatureMap predicted_depth;  // 1 x h x w, meters
};

struct FusionLabels {
    std::vector<LabelMap> image_labels;  // one per view, feature-grid resolution
    std::vector<uint8_t> point_labels;   // one per cloud point, 255 = ignore
};

struct ViewDiagnostics {
    int projections_in_frustum = 0;
    int scattered = 0;  // cell owners, in-grid
    int clamped = 0;    // cell owners, clamped to the border
    int collided = 0;   // lost the per-cell depth contest
    bool empty_projection = false;
    BoundingRect rect;  // meaningful only when !empty_projection
    double align_loss = 0.0;
    double mean_abs_depth_diff = 0.0;
    size_t depth_cells = 0;
};

struct PointBranchDiagnostics {
    size_t cloud_points = 0;
    size_t retained_points = 0;  // inside voxel bounds and under the cap
    size_t occupied_voxels = 0;
    bool empty_cloud = false;
    bool empty_grid = false;  // no point fell inside the voxel bounds
};

struct LossReport {
    bool has_image = false;
    bool has_point = false;
    bool point_head_skipped = false;  // empty cloud or all point labels ignored
    bool voxel_head_skipped = false;  // empty grid or all voxel labels ignored
    double center_ce = 0.0;
    double center_lovasz = 0.0;
    std::vector<ViewLossTerms> side_terms;  // input view order, center omitted
    double fused_ce = 0.0;
    double align = 0.0;  // weighted center-view alignment term
    double image_total = 0.0;
    double point_ce = 0.0;
    double point_lovasz = 0.0;
    double voxel_ce = 0.0;
    double voxel_lovasz = 0.0;
    double point_total = 0.0;
    double total = 0.0;
};

struct FusionResult {
    std::vector<FeatureMap> fused;         // per view, c_v x h x w
    std::vector<FeatureMap> image_logits;  // per view, classes x h x w, from image features
    std::vector<FeatureMap> fused_logits;  // per view, classes x h x w, from the fused map
    FeatureMap point_logits;               // classes x 1 x N; default-empty when the cloud is empty
    FeatureMap voxel_logits;               // classes x 1 x N1; default-empty when no voxel is occupied
    LabelMap voxel_labels;                 // 1 x N1 majority vote; meaningful when has_voxel_labels
    bool has_voxel_labels = false;
    LossReport losses;
    std::vector<ViewDiagnostics> view_diagnostics;
    PointBranchDiagnostics point_diagnostics;
};

// Runs the two-branch fusion over n views and one cloud. When labels is
// non-null the full loss stack is evaluated. Component errors are rethrown
// with the view and stage attached.
FusionResult run_fusion(const std::vector<ViewInput>& views, const PointCloud& cloud,
                        const std::vector<CameraModel>& cameras, const PipelineConfig& config,
                        const FusionLabels* labels = nullptr);

}  // namespace mlpfseg
