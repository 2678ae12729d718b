#include "mlpfseg/pffm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kdtree.hpp"
#include "mlpfseg/errors.hpp"
#include "mlpfseg/rng.hpp"

namespace mlpfseg {

BoundingRect compute_bounding_rectangle(const std::vector<Projection>& projections, int grid_h, int grid_w) {
    if (projections.empty()) {
        throw validation_error("bounding rectangle undefined: no points project into the view");
    }
    BoundingRect rect;
    rect.x_min = grid_w;
    rect.y_min = grid_h;
    rect.x_max = -1;
    rect.y_max = -1;
    for (const Projection& p : projections) {
        int row = 0, col = 0;
        projection_cell(p, GridPlane::Feature, grid_h, grid_w, row, col);
        rect.x_min = std::min(rect.x_min, col);
        rect.x_max = std::max(rect.x_max, col);
        rect.y_min = std::min(rect.y_min, row);
        rect.y_max = std::max(rect.y_max, row);
    }
    return rect;
}

ScatterResult scatter_point_features(const std::vector<Projection>& projections,
                                     const std::vector<std::vector<double>>& per_point_features, int channels,
                                     int grid_h, int grid_w) {
    ScatterResult out{FeatureMap(channels, grid_h, grid_w), SparseGrid(grid_h, grid_w), 0, 0, 0};

    // Owner pass: smallest depth wins a cell, earlier point index on exact ties.
    struct Owner {
        double depth;
        size_t proj_index;
    };
    std::vector<Owner> owners(static_cast<size_t>(grid_h) * grid_w, Owner{0.0, SIZE_MAX});
    std::vector<uint8_t> was_clamped(projections.size(), 0);
    std::vector<size_t> cell_of(projections.size(), 0);
    for (size_t i = 0; i < projections.size(); ++i) {
        const Projection& p = projections[i];
        if (p.point_index < 0 || static_cast<size_t>(p.point_index) >= per_point_features.size()) {
            std::ostringstream msg;
            msg << "scatter: projection references point " << p.point_index << " but only "
                << per_point_features.size() << " feature rows were given";
            throw validation_error(msg.str());
        }
        if (static_cast<int>(per_point_features[p.point_index].size()) != channels) {
            std::ostringstream msg;
            msg << "scatter: point " << p.point_index << " carries "
                << per_point_features[p.point_index].size() << " channels, expected " << channels;
            throw validation_error(msg.str());
        }
        int row = 0, col = 0;
        was_clamped[i] = projection_cell(p, GridPlane::Feature, grid_h, grid_w, row, col) ? 1 : 0;
        const size_t cell = static_cast<size_t>(row) * grid_w + col;
        cell_of[i] = cell;
        Owner& o = owners[cell];
        if (o.proj_index == SIZE_MAX || p.depth < o.depth) {
            o = Owner{p.depth, i};
        }
    }

    for (size_t i = 0; i < projections.size(); ++i) {
        const size_t cell = cell_of[i];
        if (owners[cell].proj_index != i) {
            ++out.collided;
            continue;
        }
        if (was_clamped[i]) {
            ++out.clamped;
        } else {
            ++out.scattered;
        }
        const int row = static_cast<int>(cell) / grid_w;
        const int col = static_cast<int>(cell) % grid_w;
        const std::vector<double>& feat = per_point_features[projections[i].point_index];
        for (int c = 0; c < channels; ++c) {
            out.features.at(c, row, col) = feat[c];
        }
        out.occupancy.set(row, col, projections[i].depth);
    }
    return out;
}

FeatureMap interpolate_missing(const FeatureMap& scattered, const SparseGrid& mask, const BoundingRect& rect,
                               double eps) {
    if (mask.height != scattered.height || mask.width != scattered.width) {
        throw validation_error("interpolation mask shape does not match the feature map");
    }
    if (rect.x_min < 0 || rect.y_min < 0 || rect.x_max >= scattered.width || rect.y_max >= scattered.height ||
        rect.x_min > rect.x_max || rect.y_min > rect.y_max) {
        throw validation_error("interpolation rectangle lies outside the feature grid");
    }

    // Valid cells seed the estimator; row-major ids give the deterministic
    // tie order for equidistant neighbours.
    std::vector<detail::KdTree<2>::Entry> entries;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.valid(y, x)) {
                entries.push_back({{static_cast<double>(x), static_cast<double>(y)}, y * mask.width + x});
            }
        }
    }
    if (entries.empty()) {
        throw validation_error("feature completion needs at least one occupied cell, found none");
    }
    detail::KdTree<2> tree(std::move(entries));

    FeatureMap out = scattered;
    const int channels = scattered.channels;
    for (int y = rect.y_min; y <= rect.y_max; ++y) {
        for (int x = rect.x_min; x <= rect.x_max; ++x) {
            if (mask.valid(y, x)) continue;
            const auto hits = tree.nearest({static_cast<double>(x), static_cast<double>(y)}, 3);
            double weight_sum = 0.0;
            std::vector<double> weights(hits.size());
            for (size_t i = 0; i < hits.size(); ++i) {
                weights[i] = 1.0 / (std::sqrt(hits[i].first) + eps);
                weight_sum += weights[i];
            }
            for (int c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (size_t i = 0; i < hits.size(); ++i) {
                    const int sy = hits[i].second / mask.width;
                    const int sx = hits[i].second % mask.width;
                    acc += (weights[i] / weight_sum) * scattered.at(c, sy, sx);
                }
                out.at(c, y, x) = acc;
            }
        }
    }
    return out;
}

FeatureMap fill_outside(const FeatureMap& completed, const FeatureMap& image_features, const BoundingRect& rect) {
    if (!completed.same_shape(image_features)) {
        throw validation_error("fill: completed map " + completed.shape_str() + " vs image map " +
                               image_features.shape_str());
    }
    FeatureMap out = image_features;
    for (int c = 0; c < completed.channels; ++c) {
        for (int y = rect.y_min; y <= rect.y_max; ++y) {
            for (int x = rect.x_min; x <= rect.x_max; ++x) {
                out.at(c, y, x) = completed.at(c, y, x);
            }
        }
    }
    return out;
}

LossGrad alignment_loss(const FeatureMap& fill_point, const FeatureMap& image_features) {
    if (!fill_point.same_shape(image_features)) {
        throw validation_error("alignment loss: shape mismatch " + fill_point.shape_str() + " vs " +
                               image_features.shape_str());
    }
    const double n = static_cast<double>(fill_point.height) * fill_point.width;
    LossGrad out;
    out.grad = FeatureMap(fill_point.channels, fill_point.height, fill_point.width);
    double acc = 0.0;
    for (size_t i = 0; i < fill_point.data.size(); ++i) {
        const double diff = fill_point.data[i] - image_features.data[i];
        acc += diff * diff;
        out.grad.data[i] = (2.0 / n) * diff;
    }
    out.loss = acc / n;
    return out;
}

FeatureMap fuse_concat(const FeatureMap& point_map, const FeatureMap& image_map) {
    if (point_map.height != image_map.height || point_map.width != image_map.width) {
        throw validation_error("concat: grid mismatch " + point_map.shape_str() + " vs " + image_map.shape_str());
    }
    FeatureMap out(point_map.channels + image_map.channels, point_map.height, point_map.width);
    std::copy(point_map.data.begin(), point_map.data.end(), out.data.begin());
    std::copy(image_map.data.begin(), image_map.data.end(), out.data.begin() + point_map.data.size());
    return out;
}

void AttentionParams::validate() const {
    if (c_in < 1 || c_q < 1 || c_k < 1 || c_v < 1) {
        throw validation_error("attention: channel counts must be positive");
    }
    if (c_q != c_k) {
        std::ostringstream msg;
        msg << "attention: query width " << c_q << " must equal key width " << c_k;
        throw validation_error(msg.str());
    }
    const auto expect = [](const std::vector<double>& v, size_t n, const char* name) {
        if (v.size() != n) {
            std::ostringstream msg;
            msg << "attention: " << name << " holds " << v.size() << " values, expected " << n;
            throw validation_error(msg.str());
        }
        for (double x : v) {
            if (!std::isfinite(x)) throw validation_error(std::string("attention: non-finite value in ") + name);
        }
    };
    expect(w_q, static_cast<size_t>(c_in) * c_q, "query weights");
    expect(w_k, static_cast<size_t>(c_in) * c_k, "key weights");
    expect(w_v, static_cast<size_t>(c_in) * c_v, "value weights");
    expect(ln_scale, static_cast<size_t>(c_v), "norm scale");
    expect(ln_shift, static_cast<size_t>(c_v), "norm shift");
}

AttentionParams AttentionParams::seeded(int c_in, int c_q, int c_k, int c_v, uint64_t seed) {
    AttentionParams p;
    p.c_in = c_in;
    p.c_q = c_q;
    p.c_k = c_k;
    p.c_v = c_v;
    const double scale = 1.0 / std::sqrt(static_cast<double>(c_in));
    std::mt19937_64 rng(derive_seed(seed, "attention"));
    p.w_q = uniform_vector(rng, static_cast<size_t>(c_in) * c_q, scale);
    p.w_k = uniform_vector(rng, static_cast<size_t>(c_in) * c_k, scale);
    p.w_v = uniform_vector(rng, static_cast<size_t>(c_in) * c_v, scale);
    p.ln_scale.assign(static_cast<size_t>(c_v), 1.0);
    p.ln_shift.assign(static_cast<size_t>(c_v), 0.0);
    p.validate();
    return p;
}

namespace {

// q/k/v laid out one row per cell so a score row is a plain dot-product sweep.
struct ProjectedRows {
    std::vector<double> q, k, v;
};

ProjectedRows project_rows(const FeatureMap& in, const AttentionParams& p) {
    const size_t hw = static_cast<size_t>(in.height) * in.width;
    ProjectedRows rows;
    rows.q.assign(hw * p.c_q, 0.0);
    rows.k.assign(hw * p.c_k, 0.0);
    rows.v.assign(hw * p.c_v, 0.0);
    for (size_t cell = 0; cell < hw; ++cell) {
        for (int c = 0; c < p.c_in; ++c) {
            const double x = in.data[static_cast<size_t>(c) * hw + cell];
            if (x == 0.0) continue;
            const double* wq = &p.w_q[static_cast<size_t>(c) * p.c_q];
            const double* wk = &p.w_k[static_cast<size_t>(c) * p.c_k];
            const double* wv = &p.w_v[static_cast<size_t>(c) * p.c_v];
            double* qr = &rows.q[cell * p.c_q];
            double* kr = &rows.k[cell * p.c_k];
            double* vr = &rows.v[cell * p.c_v];
            for (int a = 0; a < p.c_q; ++a) qr[a] += wq[a] * x;
            for (int a = 0; a < p.c_k; ++a) kr[a] += wk[a] * x;
            for (int a = 0; a < p.c_v; ++a) vr[a] += wv[a] * x;
        }
    }
    return rows;
}

// One attention row: scores against every cell, stabilized softmax, then the
// weighted sum of value rows. Both execution paths funnel through here so the
// streamed result is bit-identical to the dense one.
void attention_row(const ProjectedRows& rows, const AttentionParams& p, size_t hw, size_t i,
                   std::vector<double>& scores, double* out_row) {
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(p.c_k));
    const double* qi = &rows.q[i * p.c_q];
    double max_score = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < hw; ++j) {
        const double* kj = &rows.k[j * p.c_k];
        double s = 0.0;
        for (int a = 0; a < p.c_k; ++a) s += qi[a] * kj[a];
        s *= inv_sqrt;
        if (!std::isfinite(s)) {
            std::ostringstream msg;
            msg << "attention: non-finite score at row " << i << ", column " << j;
            throw numeric_error(msg.str());
        }
        scores[j] = s;
        max_score = std::max(max_score, s);
    }
    double denom = 0.0;
    for (size_t j = 0; j < hw; ++j) {
        scores[j] = std::exp(scores[j] - max_score);
        denom += scores[j];
    }
    std::fill(out_row, out_row + p.c_v, 0.0);
    for (size_t j = 0; j < hw; ++j) {
        const double weight = scores[j] / denom;
        const double* vj = &rows.v[j * p.c_v];
        for (int a = 0; a < p.c_v; ++a) out_row[a] += weight * vj[a];
    }
}

}  // namespace

AttentionResult self_attention(const FeatureMap& fused_input, const AttentionParams& params,
                               const FeatureMap* bias, size_t streaming_threshold) {
    params.validate();
    if (fused_input.channels != params.c_in) {
        std::ostringstream msg;
        msg << "attention: input has " << fused_input.channels << " channels, parameters expect " << params.c_in;
        throw validation_error(msg.str());
    }
    if (bias != nullptr &&
        (bias->channels != params.c_v || bias->height != fused_input.height || bias->width != fused_input.width)) {
        throw validation_error("attention: bias map " + bias->shape_str() + " does not match the value shape");
    }
    fused_input.all_finite("attention input");

    const int h = fused_input.height;
    const int w = fused_input.width;
    const size_t hw = static_cast<size_t>(h) * w;
    const ProjectedRows rows = project_rows(fused_input, params);

    AttentionResult result;
    result.attention_output.assign(hw * params.c_v, 0.0);
    if (hw <= streaming_threshold) {
        // Small grids: keep every score row resident, then reduce.
        std::vector<std::vector<double>> all_scores(hw, std::vector<double>(hw));
        for (size_t i = 0; i < hw; ++i) {
            attention_row(rows, params, hw, i, all_scores[i], &result.attention_output[i * params.c_v]);
        }
    } else {
        std::vector<double> scores(hw);
        for (size_t i = 0; i < hw; ++i) {
            attention_row(rows, params, hw, i, scores, &result.attention_output[i * params.c_v]);
        }
    }

    // Optional additive bias, then a per-cell LayerNorm over the channels.
    result.fused = FeatureMap(params.c_v, h, w);
    std::vector<double> cell(params.c_v);
    for (size_t i = 0; i < hw; ++i) {
        const int y = static_cast<int>(i) / w;
        const int x = static_cast<int>(i) % w;
        double mean = 0.0;
        for (int a = 0; a < params.c_v; ++a) {
            cell[a] = result.attention_output[i * params.c_v + a];
            if (bias != nullptr) cell[a] += bias->at(a, y, x);
            mean += cell[a];
        }
        mean /= params.c_v;
        double var = 0.0;
        for (int a = 0; a < params.c_v; ++a) {
            const double d = cell[a] - mean;
            var += d * d;
        }
        var /= params.c_v;
        const double inv = 1.0 / std::sqrt(var + params.ln_eps);
        for (int a = 0; a < params.c_v; ++a) {
            result.fused.at(a, y, x) = params.ln_scale[a] * ((cell[a] - mean) * inv) + params.ln_shift[a];
        }
    }
    return result;
}

}  // namespace mlpfseg
