#pragma once

#include <cstdint>
#include <vector>

#include "mlpfseg/pffm.hpp"
#include "mlpfseg/types.hpp"

namespace mlpfseg {

// Predicted dense depth (1 x h x w, meters) next to the sparse projected
// depth it is compared against.
struct DepthPair {
    FeatureMap predicted;
    SparseGrid sparse;
};

// Log-smoothed residual at each cell carrying a projected depth:
// log(predicted + eps) - log(sparse + eps). Cells without a projection stay
// masked out. Depths at compared cells must be positive.
SparseGrid log_depth_difference(const DepthPair& pair, double eps = 1e-8);

struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<double> weights;  // out x in x 3 x 3
    std::vector<double> bias;     // out

    void validate() const;
    FeatureMap apply(const FeatureMap& input) const;  // 3x3, stride 1, same padding
};

// Two 3x3 convolutions, 1 -> 8 -> out_channels, no activation in between.
struct ConvStack {
    ConvLayer first;
    ConvLayer second;

    void validate() const;

    // Deterministic init: weights uniform in [-1/sqrt(9*in), 1/sqrt(9*in)),
    // biases zero.
    static ConvStack seeded(int out_channels, uint64_t seed);
};

// Embeds the depth residual for attention injection. Masked-out cells enter
// the convolution as zero.
FeatureMap conv2_embed(const SparseGrid& diff, const ConvStack& stack);

// Fusion attention with the embedded depth residual added onto the attention
// output ahead of the per-cell normalization.
FeatureMap attend_with_depth(const FeatureMap& fused_input, const AttentionParams& params, const FeatureMap& d_hat,
                             size_t streaming_threshold = 4096);

}  // namespace mlpfseg
