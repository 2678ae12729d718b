#pragma once

#include <vector>

#include "mlpfseg/pffm.hpp"
#include "mlpfseg/types.hpp"

namespace mlpfseg {

// Side-view weighting for the aggregated image loss.
struct LossWeights {
    double alpha1 = 0.5;
    double alpha2 = 0.5;

    void validate() const;
};

// Numerically stable per-cell softmax over the channel axis.
FeatureMap softmax_probs(const FeatureMap& logits);

// Mean negative log-likelihood over non-ignored cells; the gradient is
// (softmax - onehot) / count there and zero on ignored cells. Throws when no
// cell carries a usable label.
LossGrad cross_entropy(const FeatureMap& logits, const LabelMap& labels);

// Sorted-error Jaccard surrogate (standard Lovasz-Softmax), averaged over the
// classes present in the labels. Expects probabilities: channel sums within
// 1e-6 of one per cell.
double lovasz_softmax(const FeatureMap& probs, const LabelMap& labels);

// Per-view cross-entropy / Jaccard-surrogate pair.
struct ViewLossTerms {
    double ce = 0.0;
    double lovasz = 0.0;
};

// Aggregated image-branch loss: center CE + center Lovasz + fused map loss +
// alignment loss, plus alpha1-weighted side CE and alpha2-weighted side
// Lovasz sums. With no side views this is the plain four-term sum.
double total_image_loss(const ViewLossTerms& center, const std::vector<ViewLossTerms>& sides, double fused_loss,
                        double align_loss, const LossWeights& weights);

// (CE + Lovasz) on the point head plus (CE + Lovasz) on the voxel head.
double total_point_loss(const FeatureMap& point_logits, const LabelMap& point_labels,
                        const FeatureMap& voxel_logits, const LabelMap& voxel_labels);

double total_loss(double image_total, double point_total);

struct IouReport {
    std::vector<double> per_class;    // 0 for classes that never appear
    std::vector<uint8_t> present;     // class appears in prediction or label
    double mean = 0.0;                // over present classes only
};

IouReport mean_iou(const LabelMap& predictions, const LabelMap& labels, int num_classes);

}  // namespace mlpfseg
