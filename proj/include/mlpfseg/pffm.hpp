#pragma once

#include <cstdint>
#include <vector>

#include "mlpfseg/geometry.hpp"
#include "mlpfseg/types.hpp"

namespace mlpfseg {

// Inclusive feature-grid rectangle; x indexes columns, y indexes rows.
struct BoundingRect {
    int x_min = 0;
    int x_max = -1;
    int y_min = 0;
    int y_max = -1;

    bool contains(int y, int x) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
    int cell_count() const { return (x_max - x_min + 1) * (y_max - y_min + 1); }
};

// Minimum bounding rectangle of the rounded (clamped) projected coordinates.
// Throws on an empty projection list.
BoundingRect compute_bounding_rectangle(const std::vector<Projection>& projections, int grid_h, int grid_w);

struct ScatterResult {
    FeatureMap features;   // c_p x h x w, zero where unassigned
    SparseGrid occupancy;  // mask true where a point landed; value = owning depth
    int scattered = 0;     // cell owners whose rounded coordinates were in-grid
    int clamped = 0;       // cell owners that needed clamping to the border
    int collided = 0;      // projections that lost a collision
};

// Writes each projected point's feature vector into its rounded feature-grid
// cell. Collisions keep the smaller depth (earlier point index on exact ties).
// per_point_features is indexed by Projection::point_index.
ScatterResult scatter_point_features(const std::vector<Projection>& projections,
                                     const std::vector<std::vector<double>>& per_point_features, int channels,
                                     int grid_h, int grid_w);

// Fills every masked-out cell inside the rectangle with the inverse-distance
// weighted average of its 3 nearest valid cells (w_i = 1/(d_i + eps), ties by
// row-major cell order; all valid cells when fewer than 3 exist). Valid cells
// and cells outside the rectangle pass through bit-exact. Throws when the
// rectangle holds no valid cell.
FeatureMap interpolate_missing(const FeatureMap& scattered, const SparseGrid& mask, const BoundingRect& rect,
                               double eps = 1e-8);

// completed inside the rectangle, image_features outside.
FeatureMap fill_outside(const FeatureMap& completed, const FeatureMap& image_features, const BoundingRect& rect);

struct LossGrad {
    double loss = 0.0;
    FeatureMap grad;
};

// Mean squared error over cells, L2 summed over channels, normalized by h*w.
LossGrad alignment_loss(const FeatureMap& fill_point, const FeatureMap& image_features);

// Channel-wise concatenation, point-cloud channels first.
FeatureMap fuse_concat(const FeatureMap& point_map, const FeatureMap& image_map);

// Single-head attention parameters. Projection matrices are stored row-major
// with the input channel as the row: w_q[c * c_q + a] is W_Q(c, a).
struct AttentionParams {
    int c_in = 0;
    int c_q = 0;
    int c_k = 0;
    int c_v = 0;
    std::vector<double> w_q;
    std::vector<double> w_k;
    std::vector<double> w_v;
    std::vector<double> ln_scale;  // c_v
    std::vector<double> ln_shift;  // c_v
    double ln_eps = 1e-12;

    void validate() const;

    // Deterministic initialization: uniform in [-1/sqrt(c_in), 1/sqrt(c_in)),
    // LayerNorm scale 1 and shift 0.
    static AttentionParams seeded(int c_in, int c_q, int c_k, int c_v, uint64_t seed);
};

struct AttentionResult {
    FeatureMap fused;                      // c_v x h x w, after LayerNorm
    std::vector<double> attention_output;  // (h*w) x c_v row-major, pre-bias, pre-LayerNorm
};

// Q = W_Q^T * flat, K = W_K^T * flat, V = W_V^T * flat over the flattened
// c x (h*w) map; scores = Q^T K / sqrt(c_k) with a row-wise softmax; the
// attention output is softmax * V^T. When bias is non-null it is added to the
// attention output per cell before the per-cell LayerNorm over channels.
// Score rows are streamed one at a time once h*w exceeds streaming_threshold,
// so the (h*w)^2 matrix is never resident for large grids.
AttentionResult self_attention(const FeatureMap& fused_input, const AttentionParams& params,
                               const FeatureMap* bias = nullptr, size_t streaming_threshold = 4096);

}  // namespace mlpfseg
