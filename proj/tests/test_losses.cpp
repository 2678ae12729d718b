#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mlpfseg/losses.hpp"
#include "mlpfseg/rng.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace mlpfseg;

namespace {

LabelMap random_labels(int h, int w, int classes, uint64_t seed, double ignore_rate = 0.0) {
    std::mt19937_64 rng(seed);
    LabelMap labels(h, w);
    for (auto& l : labels.labels) {
        if (uniform_unit(rng) < ignore_rate)
            l = LabelMap::kIgnore;
        else
            l = static_cast<uint8_t>(uniform_unit(rng) * classes);
    }
    return labels;
}

// Random strictly positive probabilities normalized per cell.
FeatureMap random_probs(int classes, int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    FeatureMap probs(classes, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double total = 0.0;
            for (int c = 0; c < classes; ++c) {
                const double v = 0.05 + uniform_unit(rng);
                probs.at(c, y, x) = v;
                total += v;
            }
            for (int c = 0; c < classes; ++c) probs.at(c, y, x) /= total;
        }
    return probs;
}

}  // namespace

TEST_CASE("softmax rows are normalized and shift-invariant") {
    FeatureMap logits = testutil::random_map(5, 4, 4, 1000, 3.0);
    FeatureMap probs = softmax_probs(logits);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double sum = 0.0;
            for (int c = 0; c < 5; ++c) {
                sum += probs.at(c, y, x);
                CHECK(probs.at(c, y, x) > 0.0);
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }

    FeatureMap shifted = logits;
    for (double& v : shifted.data) v += 1000.0;
    FeatureMap probs2 = softmax_probs(shifted);
    for (size_t i = 0; i < probs.data.size(); ++i) CHECK(std::fabs(probs.data[i] - probs2.data[i]) <= 1e-12);
}

TEST_CASE("cross entropy approaches zero as the true-class margin grows") {
    double previous = 1e300;
    for (double margin : {2.0, 5.0, 10.0, 20.0}) {
        FeatureMap logits(3, 2, 2);
        LabelMap labels(2, 2);
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                labels.at(y, x) = 1;
                logits.at(1, y, x) = margin;
            }
        const double loss = cross_entropy(logits, labels).loss;
        CHECK(loss < previous);
        previous = loss;
    }
    CHECK(previous < 1e-8);
}

TEST_CASE("uniform logits over 15 classes cost ln 15") {
    FeatureMap logits(15, 3, 3);
    LabelMap labels = random_labels(3, 3, 15, 1);
    const double loss = cross_entropy(logits, labels).loss;
    CHECK(std::fabs(loss - std::log(15.0)) <= 1e-12);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
    FeatureMap logits = testutil::random_map(4, 5, 5, 1002, 2.0);
    LabelMap labels = random_labels(5, 5, 4, 1003, 0.2);
    auto lg = cross_entropy(logits, labels);
    auto fd = oracle::finite_difference_gradient(
        [&](const FeatureMap& m) { return cross_entropy(m, labels).loss; }, logits, 1e-4);
    CHECK(oracle::max_rel_diff(lg.grad, fd, 1e-6) <= 1e-5);
}

TEST_CASE("cross-entropy handles the ignore sentinel") {
    FeatureMap logits = testutil::random_map(3, 1, 2, 1004);
    LabelMap labels(1, 2);
    labels.at(0, 0) = 2;
    labels.at(0, 1) = LabelMap::kIgnore;

    // The same instance with the ignored cell removed costs the same.
    FeatureMap solo(3, 1, 1);
    for (int c = 0; c < 3; ++c) solo.at(c, 0, 0) = logits.at(c, 0, 0);
    LabelMap solo_labels(1, 1);
    solo_labels.at(0, 0) = 2;
    CHECK(cross_entropy(logits, labels).loss == doctest::Approx(cross_entropy(solo, solo_labels).loss).epsilon(1e-14));

    // Gradient is zero at the ignored cell.
    auto lg = cross_entropy(logits, labels);
    for (int c = 0; c < 3; ++c) CHECK(lg.grad.at(c, 0, 1) == 0.0);

    // Per-cell gradient sums vanish on labeled cells.
    double colsum = 0.0;
    for (int c = 0; c < 3; ++c) colsum += lg.grad.at(c, 0, 0);
    CHECK(std::fabs(colsum) <= 1e-12);

    LabelMap all_ignored(1, 2);
    CHECK_THROWS_AS(cross_entropy(logits, all_ignored), validation_error);

    LabelMap out_of_range(1, 2);
    out_of_range.at(0, 0) = 7;
    CHECK_THROWS_AS(cross_entropy(logits, out_of_range), validation_error);
}

TEST_CASE("perfect one-hot predictions have zero Jaccard surrogate") {
    LabelMap labels = random_labels(4, 4, 3, 1100);
    FeatureMap probs(3, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) probs.at(labels.at(y, x), y, x) = 1.0;
    CHECK(lovasz_softmax(probs, labels) == 0.0);
}

TEST_CASE("a single pixel at probability 0.3 costs 0.7") {
    FeatureMap probs(2, 1, 1);
    probs.at(0, 0, 0) = 0.3;
    probs.at(1, 0, 0) = 0.7;
    LabelMap labels(1, 1);
    labels.at(0, 0) = 0;
    CHECK(std::fabs(lovasz_softmax(probs, labels) - 0.7) <= 1e-12);
}

TEST_CASE("unnormalized probabilities are rejected") {
    FeatureMap probs(2, 1, 1);
    probs.at(0, 0, 0) = 0.4;
    probs.at(1, 0, 0) = 0.4;
    LabelMap labels(1, 1);
    labels.at(0, 0) = 0;
    CHECK_THROWS_AS(lovasz_softmax(probs, labels), validation_error);
}

TEST_CASE("Jaccard surrogate matches the prefix-delta oracle") {
    std::mt19937_64 rng(1200);
    for (int trial = 0; trial < 60; ++trial) {
        FeatureMap probs = random_probs(3, 1, 6, 1300 + trial);
        LabelMap labels(1, 6);
        for (auto& l : labels.labels) l = static_cast<uint8_t>(uniform_unit(rng) * 3);
        const double got = lovasz_softmax(probs, labels);
        const double expect = oracle::lovasz_prefix_delta(probs, labels);
        CHECK(std::fabs(got - expect) <= 1e-12);
    }
}

TEST_CASE("the Jaccard surrogate ignores pixel order") {
    FeatureMap probs = random_probs(3, 1, 24, 1400);
    LabelMap labels = random_labels(1, 24, 3, 1401, 0.1);
    const double base = lovasz_softmax(probs, labels);

    std::vector<int> order(24);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(1402);
    std::shuffle(order.begin(), order.end(), rng);

    FeatureMap shuffled_probs(3, 1, 24);
    LabelMap shuffled_labels(1, 24);
    for (int i = 0; i < 24; ++i) {
        for (int c = 0; c < 3; ++c) shuffled_probs.at(c, 0, i) = probs.at(c, 0, order[i]);
        shuffled_labels.at(0, i) = labels.at(0, order[i]);
    }
    CHECK(std::fabs(lovasz_softmax(shuffled_probs, shuffled_labels) - base) <= 1e-12);
}

TEST_CASE("hard binary predictions reduce to one minus IoU") {
    std::mt19937_64 rng(1500);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 12;
        FeatureMap probs(2, 1, n);
        LabelMap labels(1, n);
        int inter[2] = {0, 0}, uni[2] = {0, 0};
        for (int i = 0; i < n; ++i) {
            const int pred = uniform_unit(rng) < 0.5 ? 0 : 1;
            const int gt = uniform_unit(rng) < 0.5 ? 0 : 1;
            probs.at(pred, 0, i) = 1.0;
            labels.at(0, i) = static_cast<uint8_t>(gt);
            for (int c = 0; c < 2; ++c) {
                const bool in_pred = pred == c, in_gt = gt == c;
                inter[c] += (in_pred && in_gt);
                uni[c] += (in_pred || in_gt);
            }
        }
        // Mean of (1 - IoU) over the classes present in the labels.
        double expect = 0.0;
        int present = 0;
        for (int c = 0; c < 2; ++c) {
            bool in_labels = false;
            for (int i = 0; i < n; ++i) in_labels |= labels.at(0, i) == c;
            if (!in_labels) continue;
            ++present;
            expect += 1.0 - (uni[c] > 0 ? double(inter[c]) / uni[c] : 1.0);
        }
        expect /= present;
        CHECK(std::fabs(lovasz_softmax(probs, labels) - expect) <= 1e-12);
    }
}

TEST_CASE("image loss aggregation") {
    LossWeights weights;

    SUBCASE("all-zero components sum to zero") {
        CHECK(total_image_loss({0.0, 0.0}, {}, 0.0, 0.0, weights) == 0.0);
    }

    SUBCASE("zero side weights annihilate the side terms") {
        LossWeights off;
        off.alpha1 = 0.0;
        off.alpha2 = 0.0;
        std::vector<ViewLossTerms> sides{{10.0, 20.0}, {30.0, 40.0}};
        const double total = total_image_loss({1.5, 2.5}, sides, 0.75, 0.25, off);
        CHECK(total == 1.5 + 2.5 + 0.75 + 0.25);
    }

    SUBCASE("weighted side sums match hand arithmetic") {
        std::vector<ViewLossTerms> sides{{0.4, 0.6}, {1.2, 0.1}, {0.3, 0.9}};
        const double total = total_image_loss({1.1, 0.7}, sides, 0.5, 0.2, weights);
        const double expect = 1.1 + 0.7 + 0.5 + 0.2 + 0.5 * (0.4 + 1.2 + 0.3) + 0.5 * (0.6 + 0.1 + 0.9);
        CHECK(std::fabs(total - expect) <= 1e-12);
    }

    SUBCASE("no side views reduces to the four-term sum") {
        CHECK(total_image_loss({1.0, 2.0}, {}, 3.0, 4.0, weights) == 10.0);
    }

    SUBCASE("negative weights are rejected") {
        LossWeights bad;
        bad.alpha1 = -0.5;
        CHECK_THROWS_AS(bad.validate(), validation_error);
    }
}

TEST_CASE("point-branch loss composes from its four parts") {
    SUBCASE("perfect heads cost nothing") {
        FeatureMap point_logits(3, 1, 4);
        LabelMap point_labels(1, 4);
        FeatureMap voxel_logits(3, 1, 2);
        LabelMap voxel_labels(1, 2);
        for (int i = 0; i < 4; ++i) {
            point_labels.at(0, i) = uint8_t(i % 3);
            point_logits.at(i % 3, 0, i) = 80.0;
        }
        for (int i = 0; i < 2; ++i) {
            voxel_labels.at(0, i) = uint8_t(i);
            voxel_logits.at(i, 0, i) = 80.0;
        }
        CHECK(total_point_loss(point_logits, point_labels, voxel_logits, voxel_labels) <= 1e-12);
    }

    SUBCASE("uniform point head over 15 classes adds ln 15 plus its surrogate") {
        FeatureMap point_logits(15, 1, 6);
        LabelMap point_labels = random_labels(1, 6, 15, 1600);
        FeatureMap voxel_logits(15, 1, 3);
        LabelMap voxel_labels(1, 3);
        for (int i = 0; i < 3; ++i) {
            voxel_labels.at(0, i) = uint8_t(i);
            voxel_logits.at(i, 0, i) = 80.0;
        }
        const double voxel_part = cross_entropy(voxel_logits, voxel_labels).loss +
                                  lovasz_softmax(softmax_probs(voxel_logits), voxel_labels);
        const double point_lovasz = lovasz_softmax(softmax_probs(point_logits), point_labels);
        const double total = total_point_loss(point_logits, point_labels, voxel_logits, voxel_labels);
        CHECK(std::fabs(total - (std::log(15.0) + point_lovasz + voxel_part)) <= 1e-12);
    }

    SUBCASE("random instance equals the independent component sum") {
        FeatureMap point_logits = testutil::random_map(4, 1, 9, 1601, 2.0);
        LabelMap point_labels = random_labels(1, 9, 4, 1602);
        FeatureMap voxel_logits = testutil::random_map(4, 1, 5, 1603, 2.0);
        LabelMap voxel_labels = random_labels(1, 5, 4, 1604);
        const double expect = cross_entropy(point_logits, point_labels).loss +
                              lovasz_softmax(softmax_probs(point_logits), point_labels) +
                              cross_entropy(voxel_logits, voxel_labels).loss +
                              lovasz_softmax(softmax_probs(voxel_logits), voxel_labels);
        CHECK(std::fabs(total_point_loss(point_logits, point_labels, voxel_logits, voxel_labels) - expect) <=
              1e-12);
    }
}

TEST_CASE("grand total is the plain sum") {
    CHECK(total_loss(0.0, 0.0) == 0.0);
    CHECK(total_loss(1.25, 0.0) == 1.25);
    CHECK(total_loss(1.25, 2.5) == 3.75);
}

TEST_CASE("mean IoU") {
    SUBCASE("a perfect prediction scores one everywhere") {
        LabelMap labels = random_labels(4, 4, 3, 1700);
        auto report = mean_iou(labels, labels, 3);
        CHECK(report.mean == 1.0);
        for (int c = 0; c < 3; ++c)
            if (report.present[c]) CHECK(report.per_class[c] == 1.0);
    }

    SUBCASE("disjoint single-class predictions score zero") {
        LabelMap pred(2, 2), labels(2, 2);
        for (auto& l : pred.labels) l = 0;
        for (auto& l : labels.labels) l = 1;
        auto report = mean_iou(pred, labels, 3);
        CHECK(report.mean == 0.0);
        CHECK(report.per_class[0] == 0.0);
        CHECK(report.per_class[1] == 0.0);
        CHECK_FALSE(report.present[2]);
    }

    SUBCASE("random instance matches a confusion-matrix recount") {
        LabelMap pred = random_labels(8, 8, 3, 1701);
        LabelMap labels = random_labels(8, 8, 3, 1702, 0.15);
        auto report = mean_iou(pred, labels, 3);

        double mean = 0.0;
        int present = 0;
        for (int c = 0; c < 3; ++c) {
            int64_t tp = 0, fp = 0, fn = 0;
            for (size_t i = 0; i < labels.labels.size(); ++i) {
                if (labels.labels[i] == LabelMap::kIgnore) continue;
                const bool in_pred = pred.labels[i] == c;
                const bool in_gt = labels.labels[i] == c;
                tp += (in_pred && in_gt);
                fp += (in_pred && !in_gt);
                fn += (!in_pred && in_gt);
            }
            if (tp + fp + fn == 0) {
                CHECK_FALSE(report.present[c]);
                continue;
            }
            ++present;
            CHECK(report.present[c]);
            CHECK(std::fabs(report.per_class[c] - double(tp) / double(tp + fp + fn)) <= 1e-12);
            mean += double(tp) / double(tp + fp + fn);
        }
        CHECK(std::fabs(report.mean - mean / present) <= 1e-12);
    }

    SUBCASE("an ignore prediction counts as a miss") {
        LabelMap pred(1, 2), labels(1, 2);
        pred.at(0, 0) = LabelMap::kIgnore;
        pred.at(0, 1) = 1;
        labels.at(0, 0) = 1;
        labels.at(0, 1) = 1;
        auto report = mean_iou(pred, labels, 2);
        // Class 1: one hit, one miss -> IoU 1/2.
        CHECK(report.per_class[1] == doctest::Approx(0.5));
    }
}
