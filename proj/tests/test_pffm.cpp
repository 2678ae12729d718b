#include <random>

#include "doctest.h"
#include "mlpfseg/pffm.hpp"
#include "mlpfseg/rng.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace mlpfseg;

namespace {

Projection feat_proj(int index, double uf, double vf, double depth) {
    Projection p;
    p.point_index = index;
    p.uf = uf;
    p.vf = vf;
    p.depth = depth;
    return p;
}

std::vector<Projection> random_projections(int n, int grid_h, int grid_w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Projection> out;
    for (int i = 0; i < n; ++i)
        out.push_back(feat_proj(i, uniform_unit(rng) * grid_w, uniform_unit(rng) * grid_h,
                                0.5 + uniform_unit(rng) * 20.0));
    return out;
}

AttentionParams random_params(int c_in, int c_q, int c_v, uint64_t seed) {
    AttentionParams p = AttentionParams::seeded(c_in, c_q, c_q, c_v, seed);
    std::mt19937_64 rng(seed ^ 0xabcd);
    for (auto& v : p.ln_scale) v = 0.5 + uniform_unit(rng);
    for (auto& v : p.ln_shift) v = uniform_sym(rng, 0.3);
    return p;
}

}  // namespace

TEST_CASE("bounding rectangle basics") {
    SUBCASE("single projection shrinks to a cell") {
        auto rect = compute_bounding_rectangle({feat_proj(0, 5.0, 7.0, 1.0)}, 12, 12);
        CHECK(rect.x_min == 5);
        CHECK(rect.x_max == 5);
        CHECK(rect.y_min == 7);
        CHECK(rect.y_max == 7);
        CHECK(rect.cell_count() == 1);
    }

    SUBCASE("opposite corners span the full grid") {
        const int h = 9, w = 13;
        auto rect = compute_bounding_rectangle(
            {feat_proj(0, 0.0, 0.0, 1.0), feat_proj(1, double(w - 1), double(h - 1), 1.0)}, h, w);
        CHECK(rect.x_min == 0);
        CHECK(rect.x_max == w - 1);
        CHECK(rect.y_min == 0);
        CHECK(rect.y_max == h - 1);
    }

    SUBCASE("random projections match the exhaustive scan") {
        auto projs = random_projections(200, 16, 16, 3);
        auto rect = compute_bounding_rectangle(projs, 16, 16);
        auto expect = oracle::bounding_rect_scan(projs, 16, 16);
        CHECK(rect.x_min == expect.x_min);
        CHECK(rect.x_max == expect.x_max);
        CHECK(rect.y_min == expect.y_min);
        CHECK(rect.y_max == expect.y_max);
    }

    SUBCASE("rounded coordinates clamp to the grid") {
        auto rect = compute_bounding_rectangle({feat_proj(0, -0.4, 15.8, 1.0)}, 16, 16);
        CHECK(rect.x_min == 0);  // -0.4 rounds to 0
        CHECK(rect.y_max == 15);  // 15.8 rounds to 16, clamps to 15
    }

    SUBCASE("an empty projection list is rejected") {
        CHECK_THROWS_AS(compute_bounding_rectangle({}, 8, 8), validation_error);
    }
}

TEST_CASE("scatter places features at rounded cells") {
    SUBCASE("no projections give a zero map and empty mask") {
        auto r = scatter_point_features({}, {}, 3, 6, 6);
        CHECK(r.occupancy.valid_count() == 0);
        CHECK(r.scattered == 0);
        CHECK(r.clamped == 0);
        CHECK(r.collided == 0);
        for (double v : r.features.data) CHECK(v == 0.0);
    }

    SUBCASE("one projection writes exactly its feature vector") {
        std::vector<std::vector<double>> feats{{0.0, 1.0, 0.0}};
        auto r = scatter_point_features({feat_proj(0, 2.2, 4.6, 3.0)}, feats, 3, 6, 6);
        CHECK(r.scattered == 1);
        CHECK(r.occupancy.valid_count() == 1);
        REQUIRE(r.occupancy.valid(5, 2));  // vf 4.6 rounds to row 5, uf 2.2 to col 2
        CHECK(r.occupancy.value(5, 2) == 3.0);
        for (int c = 0; c < 3; ++c) CHECK(r.features.at(c, 5, 2) == feats[0][c]);
        int nonzero = 0;
        for (double v : r.features.data) nonzero += (v != 0.0);
        CHECK(nonzero == 1);
    }

    SUBCASE("collisions keep the smaller depth") {
        std::vector<std::vector<double>> feats{{1.0}, {2.0}};
        auto near_first = scatter_point_features(
            {feat_proj(0, 2.0, 2.0, 3.0), feat_proj(1, 2.1, 1.9, 8.0)}, feats, 1, 6, 6);
        CHECK(near_first.features.at(0, 2, 2) == 1.0);
        CHECK(near_first.collided == 1);
        CHECK(near_first.scattered == 1);

        auto near_second = scatter_point_features(
            {feat_proj(0, 2.0, 2.0, 8.0), feat_proj(1, 2.1, 1.9, 3.0)}, feats, 1, 6, 6);
        CHECK(near_second.features.at(0, 2, 2) == 2.0);
        CHECK(near_second.occupancy.value(2, 2) == 3.0);
    }

    SUBCASE("equal-depth collisions keep the earlier projection") {
        std::vector<std::vector<double>> feats{{1.0}, {2.0}};
        auto r = scatter_point_features({feat_proj(0, 2.0, 2.0, 5.0), feat_proj(1, 2.1, 1.9, 5.0)}, feats, 1, 6,
                                        6);
        CHECK(r.features.at(0, 2, 2) == 1.0);
    }

    SUBCASE("off-grid rounds are clamped and counted") {
        std::vector<std::vector<double>> feats{{1.0}};
        auto r = scatter_point_features({feat_proj(0, 5.8, 0.0, 2.0)}, feats, 1, 6, 6);
        CHECK(r.clamped == 1);
        CHECK(r.scattered == 0);
        CHECK(r.occupancy.valid(0, 5));
    }
}

TEST_CASE("missing-cell interpolation") {
    SUBCASE("an all-valid map passes through bit-exact") {
        FeatureMap m = testutil::random_map(2, 5, 5, 11);
        SparseGrid mask(5, 5);
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) mask.set(y, x, 1.0);
        BoundingRect rect{0, 4, 0, 4};
        FeatureMap out = interpolate_missing(m, mask, rect);
        CHECK(out.data == m.data);
    }

    SUBCASE("a cell equidistant from exactly three valid cells averages them") {
        FeatureMap m(1, 3, 3);
        SparseGrid mask(3, 3);
        const double a = 0.3, b = -1.1, c = 2.4;
        m.at(0, 0, 1) = a;
        mask.set(0, 1, 1.0);
        m.at(0, 1, 0) = b;
        mask.set(1, 0, 1.0);
        m.at(0, 1, 2) = c;
        mask.set(1, 2, 1.0);
        BoundingRect rect{0, 2, 0, 2};
        FeatureMap out = interpolate_missing(m, mask, rect);
        CHECK(std::fabs(out.at(0, 1, 1) - (a + b + c) / 3.0) <= 1e-12);
    }

    SUBCASE("random sparse maps match the exhaustive oracle") {
        std::mt19937_64 rng(2025);
        for (int trial = 0; trial < 5; ++trial) {
            FeatureMap m(3, 16, 16);
            SparseGrid mask(16, 16);
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    if (uniform_unit(rng) < 0.3) {
                        mask.set(y, x, 1.0);
                        for (int c = 0; c < 3; ++c) m.at(c, y, x) = uniform_sym(rng, 2.0);
                    }
            if (mask.valid_count() == 0) mask.set(7, 7, 1.0);
            BoundingRect rect{1, 14, 1, 14};
            bool rect_has_valid = false;
            for (int y = rect.y_min; y <= rect.y_max && !rect_has_valid; ++y)
                for (int x = rect.x_min; x <= rect.x_max; ++x)
                    if (mask.valid(y, x)) {
                        rect_has_valid = true;
                        break;
                    }
            if (!rect_has_valid) continue;

            FeatureMap got = interpolate_missing(m, mask, rect);
            auto expect = oracle::grid_interpolation(m, mask, rect, 1e-8);
            CHECK(oracle::max_abs_diff(got, expect.completed) <= 1e-9);
            CHECK(expect.max_weight_sum_error <= 1e-12);

            // Valid cells and cells outside the rectangle are untouched.
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    if (mask.valid(y, x) || !rect.contains(y, x))
                        for (int c = 0; c < 3; ++c) CHECK(got.at(c, y, x) == m.at(c, y, x));
        }
    }

    SUBCASE("filled values stay inside the valid value range") {
        std::mt19937_64 rng(77);
        FeatureMap m(1, 10, 10);
        SparseGrid mask(10, 10);
        double lo = 1e300, hi = -1e300;
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x)
                if (uniform_unit(rng) < 0.25) {
                    const double v = uniform_sym(rng, 3.0);
                    m.at(0, y, x) = v;
                    mask.set(y, x, 1.0);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
        REQUIRE(mask.valid_count() >= 3);
        BoundingRect rect{0, 9, 0, 9};
        FeatureMap out = interpolate_missing(m, mask, rect);
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) {
                CHECK(out.at(0, y, x) >= lo - 1e-9);
                CHECK(out.at(0, y, x) <= hi + 1e-9);
            }
    }

    SUBCASE("a fully empty mask is rejected") {
        FeatureMap m(1, 4, 4);
        SparseGrid mask(4, 4);
        BoundingRect rect{0, 3, 0, 3};
        CHECK_THROWS_AS(interpolate_missing(m, mask, rect), validation_error);
    }

    SUBCASE("a valid cell outside the rectangle still seeds cells inside it") {
        FeatureMap m(1, 4, 4);
        m.at(0, 0, 0) = 7.5;
        SparseGrid mask(4, 4);
        mask.set(0, 0, 1.0);
        BoundingRect rect{2, 3, 2, 3};
        FeatureMap out = interpolate_missing(m, mask, rect);
        for (int y = 2; y <= 3; ++y)
            for (int x = 2; x <= 3; ++x) CHECK(out.at(0, y, x) == doctest::Approx(7.5).epsilon(1e-12));
    }
}

TEST_CASE("fill_outside is a piecewise selection") {
    FeatureMap completed = testutil::random_map(2, 6, 8, 5);
    FeatureMap image = testutil::random_map(2, 6, 8, 6);

    SUBCASE("full-grid rectangle keeps the completed map") {
        BoundingRect rect{0, 7, 0, 5};
        FeatureMap out = fill_outside(completed, image, rect);
        CHECK(out.data == completed.data);
    }

    SUBCASE("single-cell rectangle changes exactly one cell") {
        BoundingRect rect{3, 3, 2, 2};
        FeatureMap out = fill_outside(completed, image, rect);
        int differing_cells = 0;
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 8; ++x) {
                bool differs = false;
                for (int c = 0; c < 2; ++c)
                    if (out.at(c, y, x) != image.at(c, y, x)) differs = true;
                differing_cells += differs;
            }
        CHECK(differing_cells == 1);
        CHECK(out.at(0, 2, 3) == completed.at(0, 2, 3));
    }

    SUBCASE("random rectangle matches a conditional scan") {
        BoundingRect rect{2, 5, 1, 4};
        FeatureMap out = fill_outside(completed, image, rect);
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < 6; ++y)
                for (int x = 0; x < 8; ++x) {
                    const double expect = rect.contains(y, x) ? completed.at(c, y, x) : image.at(c, y, x);
                    CHECK(out.at(c, y, x) == expect);
                }
    }

    SUBCASE("channel mismatch is rejected") {
        FeatureMap narrow(1, 6, 8);
        CHECK_THROWS_AS(fill_outside(completed, narrow, BoundingRect{0, 7, 0, 5}), validation_error);
    }
}

TEST_CASE("alignment loss and gradient") {
    SUBCASE("identical maps give zero loss and gradient") {
        FeatureMap m = testutil::random_map(3, 4, 4, 21);
        auto lg = alignment_loss(m, m);
        CHECK(lg.loss == 0.0);
        for (double g : lg.grad.data) CHECK(g == 0.0);
    }

    SUBCASE("1x1x1 example") {
        FeatureMap a(1, 1, 1), b(1, 1, 1);
        a.at(0, 0, 0) = 3.0;
        b.at(0, 0, 0) = 1.0;
        auto lg = alignment_loss(a, b);
        CHECK(lg.loss == 4.0);
        CHECK(lg.grad.at(0, 0, 0) == 4.0);
    }

    SUBCASE("gradient matches central finite differences") {
        FeatureMap x = testutil::random_map(4, 8, 8, 31);
        FeatureMap img = testutil::random_map(4, 8, 8, 32);
        auto lg = alignment_loss(x, img);
        auto fd = oracle::finite_difference_gradient(
            [&](const FeatureMap& m) { return alignment_loss(m, img).loss; }, x, 1e-4);
        CHECK(oracle::max_rel_diff(lg.grad, fd, 1e-6) <= 1e-5);
    }

    SUBCASE("loss is positive whenever the maps differ") {
        FeatureMap a = testutil::random_map(2, 3, 3, 41);
        FeatureMap b = a;
        b.at(1, 2, 2) += 1e-3;
        CHECK(alignment_loss(a, b).loss > 0.0);
    }

    SUBCASE("shape mismatch is rejected") {
        FeatureMap a(1, 2, 2), b(1, 2, 3);
        CHECK_THROWS_AS(alignment_loss(a, b), validation_error);
    }
}

TEST_CASE("concatenation keeps point channels first and splits back") {
    FeatureMap point = testutil::random_map(3, 4, 5, 51);
    FeatureMap image = testutil::random_map(2, 4, 5, 52);
    FeatureMap fused = fuse_concat(point, image);
    REQUIRE(fused.channels == 5);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) {
            for (int c = 0; c < 3; ++c) CHECK(fused.at(c, y, x) == point.at(c, y, x));
            for (int c = 0; c < 2; ++c) CHECK(fused.at(3 + c, y, x) == image.at(c, y, x));
        }

    FeatureMap zero(3, 4, 5);
    FeatureMap fused2 = fuse_concat(zero, image);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x) CHECK(fused2.at(c, y, x) == 0.0);

    FeatureMap mismatched(1, 3, 5);
    CHECK_THROWS_AS(fuse_concat(point, mismatched), validation_error);
}

TEST_CASE("single-cell attention returns the value projection exactly") {
    const int c_in = 2, c_v = 3;
    AttentionParams p = random_params(c_in, 2, c_v, 9);
    FeatureMap input(c_in, 1, 1);
    input.at(0, 0, 0) = 0.7;
    input.at(1, 0, 0) = -1.3;
    auto r = self_attention(input, p);
    REQUIRE(r.attention_output.size() == size_t(c_v));
    for (int a = 0; a < c_v; ++a) {
        double v = 0.0;
        for (int c = 0; c < c_in; ++c) v += p.w_v[c * c_v + a] * input.at(c, 0, 0);
        CHECK(r.attention_output[a] == v);
    }
}

TEST_CASE("zero query and key weights give uniform attention") {
    const int c_in = 2, c_v = 3;
    AttentionParams p = random_params(c_in, 2, c_v, 10);
    std::fill(p.w_q.begin(), p.w_q.end(), 0.0);
    std::fill(p.w_k.begin(), p.w_k.end(), 0.0);
    FeatureMap input = testutil::random_map(c_in, 2, 2, 11);
    auto r = self_attention(input, p);

    // Every output row should be the mean over cells of the value rows.
    std::vector<double> v_rows(4 * c_v, 0.0);
    for (int cell = 0; cell < 4; ++cell) {
        const int y = cell / 2, x = cell % 2;
        for (int a = 0; a < c_v; ++a)
            for (int c = 0; c < c_in; ++c) v_rows[cell * c_v + a] += p.w_v[c * c_v + a] * input.at(c, y, x);
    }
    for (int cell = 0; cell < 4; ++cell)
        for (int a = 0; a < c_v; ++a) {
            double mean = 0.0;
            for (int other = 0; other < 4; ++other) mean += v_rows[other * c_v + a];
            mean /= 4.0;
            CHECK(std::fabs(r.attention_output[cell * c_v + a] - mean) <= 1e-12);
        }
}

TEST_CASE("attention matches the dense oracle") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        AttentionParams p = random_params(2, 3, 4, seed);
        FeatureMap input = testutil::random_map(2, 3, 3, seed + 100);
        FeatureMap bias = testutil::random_map(4, 3, 3, seed + 200);

        auto got = self_attention(input, p, &bias);
        auto expect = oracle::dense_attention(input, p, &bias);
        CHECK(oracle::max_abs_diff(got.fused, expect.fused) <= 1e-9);
        CHECK(testutil::max_abs(got.attention_output, expect.attention_output) <= 1e-9);
        CHECK(expect.max_row_sum_error <= 1e-12);
    }
}

TEST_CASE("a null bias behaves like a zero bias") {
    AttentionParams p = random_params(3, 2, 3, 77);
    FeatureMap input = testutil::random_map(3, 4, 4, 78);
    FeatureMap zero_bias(3, 4, 4);
    auto without = self_attention(input, p, nullptr);
    auto with_zero = self_attention(input, p, &zero_bias);
    CHECK(without.fused.data == with_zero.fused.data);
}

TEST_CASE("streamed and dense attention paths agree bit for bit") {
    AttentionParams p = random_params(3, 4, 5, 123);
    FeatureMap input = testutil::random_map(3, 5, 7, 124);
    auto dense = self_attention(input, p, nullptr, 1 << 20);
    auto streamed = self_attention(input, p, nullptr, 0);
    CHECK(dense.fused.data == streamed.fused.data);
    CHECK(dense.attention_output == streamed.attention_output);
}

TEST_CASE("layer normalization standardizes each cell") {
    AttentionParams p = AttentionParams::seeded(3, 3, 3, 8, 400);
    FeatureMap input = testutil::random_map(3, 4, 4, 401);
    auto r = self_attention(input, p);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double mean = 0.0, var = 0.0;
            for (int c = 0; c < 8; ++c) mean += r.fused.at(c, y, x);
            mean /= 8.0;
            for (int c = 0; c < 8; ++c) {
                const double d = r.fused.at(c, y, x) - mean;
                var += d * d;
            }
            var /= 8.0;
            CHECK(std::fabs(mean) <= 1e-6);
            CHECK(std::fabs(var - 1.0) <= 1e-6);
        }
}

TEST_CASE("attention is deterministic across runs") {
    AttentionParams p = random_params(2, 2, 4, 2718);
    FeatureMap input = testutil::random_map(2, 4, 6, 2719);
    auto a = self_attention(input, p);
    auto b = self_attention(input, p);
    CHECK(a.fused.data == b.fused.data);
    CHECK(a.attention_output == b.attention_output);
}

TEST_CASE("non-finite scores are reported, not clamped") {
    AttentionParams p;
    p.c_in = 1;
    p.c_q = 1;
    p.c_k = 1;
    p.c_v = 1;
    p.w_q = {1.0};
    p.w_k = {1.0};
    p.w_v = {1.0};
    p.ln_scale = {1.0};
    p.ln_shift = {0.0};
    FeatureMap input(1, 1, 2);
    input.at(0, 0, 0) = 1e200;
    input.at(0, 0, 1) = 1e200;  // q*k overflows to inf
    CHECK_THROWS_AS(self_attention(input, p), numeric_error);
}

TEST_CASE("seeded attention parameters are reproducible") {
    auto a = AttentionParams::seeded(4, 3, 3, 5, 99);
    auto b = AttentionParams::seeded(4, 3, 3, 5, 99);
    auto c = AttentionParams::seeded(4, 3, 3, 5, 100);
    CHECK(a.w_q == b.w_q);
    CHECK(a.w_v == b.w_v);
    CHECK(a.w_q != c.w_q);
    const double bound = 1.0 / std::sqrt(4.0);
    for (double v : a.w_q) {
        CHECK(v >= -bound);
        CHECK(v < bound);
    }
}
