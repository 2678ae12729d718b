#include "mlpfseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mlpfseg/errors.hpp"

namespace mlpfseg {

namespace {

void check_label_shape(const FeatureMap& logits, const LabelMap& labels, const char* what) {
    if (logits.height != labels.height || logits.width != labels.width) {
        std::ostringstream msg;
        msg << what << ": logits are " << logits.shape_str() << " but labels are " << labels.height << "x"
            << labels.width;
        throw validation_error(msg.str());
    }
    labels.check_classes(logits.channels);
}

}  // namespace

void LossWeights::validate() const {
    if (!std::isfinite(alpha1) || !std::isfinite(alpha2) || alpha1 < 0.0 || alpha2 < 0.0) {
        throw validation_error("loss weights must be finite and non-negative");
    }
}

FeatureMap softmax_probs(const FeatureMap& logits) {
    logits.all_finite("softmax input");
    FeatureMap probs(logits.channels, logits.height, logits.width);
    const size_t hw = static_cast<size_t>(logits.height) * logits.width;
    for (size_t cell = 0; cell < hw; ++cell) {
        double max_logit = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < logits.channels; ++c) {
            max_logit = std::max(max_logit, logits.data[static_cast<size_t>(c) * hw + cell]);
        }
        double denom = 0.0;
        for (int c = 0; c < logits.channels; ++c) {
            const double e = std::exp(logits.data[static_cast<size_t>(c) * hw + cell] - max_logit);
            probs.data[static_cast<size_t>(c) * hw + cell] = e;
            denom += e;
        }
        for (int c = 0; c < logits.channels; ++c) {
            probs.data[static_cast<size_t>(c) * hw + cell] /= denom;
        }
    }
    return probs;
}

LossGrad cross_entropy(const FeatureMap& logits, const LabelMap& labels) {
    check_label_shape(logits, labels, "cross entropy");
    logits.all_finite("cross entropy logits");

    const size_t hw = static_cast<size_t>(logits.height) * logits.width;
    size_t count = 0;
    for (uint16_t label : labels.labels) {
        if (label != LabelMap::kIgnore) ++count;
    }
    if (count == 0) {
        throw validation_error("cross entropy: every cell is ignored, nothing to average");
    }

    LossGrad out;
    out.grad = FeatureMap(logits.channels, logits.height, logits.width);
    double acc = 0.0;
    for (size_t cell = 0; cell < hw; ++cell) {
        const uint16_t label = labels.labels[cell];
        if (label == LabelMap::kIgnore) continue;
        double max_logit = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < logits.channels; ++c) {
            max_logit = std::max(max_logit, logits.data[static_cast<size_t>(c) * hw + cell]);
        }
        double denom = 0.0;
        for (int c = 0; c < logits.channels; ++c) {
            denom += std::exp(logits.data[static_cast<size_t>(c) * hw + cell] - max_logit);
        }
        const double log_denom = std::log(denom);
        acc += log_denom + max_logit - logits.data[static_cast<size_t>(label) * hw + cell];
        for (int c = 0; c < logits.channels; ++c) {
            const double p = std::exp(logits.data[static_cast<size_t>(c) * hw + cell] - max_logit) / denom;
            const double target = (c == static_cast<int>(label)) ? 1.0 : 0.0;
            out.grad.data[static_cast<size_t>(c) * hw + cell] = (p - target) / static_cast<double>(count);
        }
    }
    out.loss = acc / static_cast<double>(count);
    return out;
}

double lovasz_softmax(const FeatureMap& probs, const LabelMap& labels) {
    check_label_shape(probs, labels, "jaccard surrogate");
    const size_t hw = static_cast<size_t>(probs.height) * probs.width;

    for (size_t cell = 0; cell < hw; ++cell) {
        double sum = 0.0;
        for (int c = 0; c < probs.channels; ++c) {
            sum += probs.data[static_cast<size_t>(c) * hw + cell];
        }
        if (std::fabs(sum - 1.0) > 1e-6) {
            std::ostringstream msg;
            msg << "jaccard surrogate: cell " << cell << " probabilities sum to " << sum
                << ", expected 1 within 1e-6";
            throw validation_error(msg.str());
        }
    }

    std::vector<size_t> cells;
    cells.reserve(hw);
    std::vector<uint8_t> class_present(static_cast<size_t>(probs.channels), 0);
    for (size_t cell = 0; cell < hw; ++cell) {
        const uint16_t label = labels.labels[cell];
        if (label == LabelMap::kIgnore) continue;
        cells.push_back(cell);
        class_present[label] = 1;
    }
    if (cells.empty()) {
        throw validation_error("jaccard surrogate: every cell is ignored, nothing to average");
    }

    double total = 0.0;
    int present_count = 0;
    std::vector<double> errors(cells.size());
    std::vector<uint8_t> foreground(cells.size());
    std::vector<size_t> order(cells.size());
    for (int c = 0; c < probs.channels; ++c) {
        if (!class_present[c]) continue;
        ++present_count;
        double fg_total = 0.0;
        for (size_t i = 0; i < cells.size(); ++i) {
            const double p = probs.data[static_cast<size_t>(c) * hw + cells[i]];
            foreground[i] = (labels.labels[cells[i]] == c) ? 1 : 0;
            errors[i] = foreground[i] ? 1.0 - p : p;
            fg_total += foreground[i];
        }
        std::iota(order.begin(), order.end(), size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](size_t a, size_t b) { return errors[a] > errors[b]; });

        // Lovasz extension gradient of the Jaccard index along the sorted
        // errors: differences of 1 - intersection/union prefix values.
        double cum_fg = 0.0;
        double cum_bg = 0.0;
        double prev_jaccard = 0.0;
        double loss_c = 0.0;
        for (size_t i = 0; i < order.size(); ++i) {
            cum_fg += foreground[order[i]];
            cum_bg += 1.0 - foreground[order[i]];
            const double jaccard = 1.0 - (fg_total - cum_fg) / (fg_total + cum_bg);
            loss_c += errors[order[i]] * (jaccard - prev_jaccard);
            prev_jaccard = jaccard;
        }
        total += loss_c;
    }
    return total / present_count;
}

double total_image_loss(const ViewLossTerms& center, const std::vector<ViewLossTerms>& sides, double fused_loss,
                        double align_loss, const LossWeights& weights) {
    weights.validate();
    double side_ce = 0.0;
    double side_lovasz = 0.0;
    for (const ViewLossTerms& side : sides) {
        side_ce += side.ce;
        side_lovasz += side.lovasz;
    }
    return center.ce + center.lovasz + fused_loss + align_loss + weights.alpha1 * side_ce +
           weights.alpha2 * side_lovasz;
}

double total_point_loss(const FeatureMap& point_logits, const LabelMap& point_labels,
                        const FeatureMap& voxel_logits, const LabelMap& voxel_labels) {
    const double point_part =
        cross_entropy(point_logits, point_labels).loss + lovasz_softmax(softmax_probs(point_logits), point_labels);
    const double voxel_part =
        cross_entropy(voxel_logits, voxel_labels).loss + lovasz_softmax(softmax_probs(voxel_logits), voxel_labels);
    return point_part + voxel_part;
}

double total_loss(double image_total, double point_total) { return image_total + point_total; }

IouReport mean_iou(const LabelMap& predictions, const LabelMap& labels, int num_classes) {
    if (predictions.height != labels.height || predictions.width != labels.width) {
        std::ostringstream msg;
        msg << "iou: prediction map " << predictions.height << "x" << predictions.width << " vs labels "
            << labels.height << "x" << labels.width;
        throw validation_error(msg.str());
    }
    if (num_classes < 1) throw validation_error("iou: class count must be positive");
    predictions.check_classes(num_classes);
    labels.check_classes(num_classes);

    std::vector<int64_t> tp(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> fp(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> fn(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < labels.labels.size(); ++i) {
        const uint16_t truth = labels.labels[i];
        const uint16_t pred = predictions.labels[i];
        if (truth == LabelMap::kIgnore) continue;
        if (pred == LabelMap::kIgnore) {
            ++fn[truth];  // an abstained prediction can never match
            continue;
        }
        if (pred == truth) {
            ++tp[truth];
        } else {
            ++fp[pred];
            ++fn[truth];
        }
    }

    IouReport report;
    report.per_class.assign(static_cast<size_t>(num_classes), 0.0);
    report.present.assign(static_cast<size_t>(num_classes), 0);
    double acc = 0.0;
    int present_count = 0;
    for (int c = 0; c < num_classes; ++c) {
        const int64_t denom = tp[c] + fp[c] + fn[c];
        if (denom == 0) continue;
        report.present[c] = 1;
        report.per_class[c] = static_cast<double>(tp[c]) / static_cast<double>(denom);
        acc += report.per_class[c];
        ++present_count;
    }
    report.mean = present_count > 0 ? acc / present_count : 0.0;
    return report;
}

}  // namespace mlpfseg
