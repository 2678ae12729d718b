#include "mlpfseg/ddpm.hpp"

#include <cmath>
#include <sstream>

#include "mlpfseg/errors.hpp"
#include "mlpfseg/rng.hpp"

namespace mlpfseg {

SparseGrid log_depth_difference(const DepthPair& pair, double eps) {
    if (pair.predicted.channels != 1 || pair.predicted.height != pair.sparse.height ||
        pair.predicted.width != pair.sparse.width) {
        std::ostringstream msg;
        msg << "depth difference: predicted map is " << pair.predicted.shape_str() << ", sparse grid is 1x"
            << pair.sparse.height << "x" << pair.sparse.width;
        throw validation_error(msg.str());
    }
    SparseGrid out(pair.sparse.height, pair.sparse.width);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            if (!pair.sparse.valid(y, x)) continue;
            const double pred = pair.predicted.at(0, y, x);
            const double sparse = pair.sparse.value(y, x);
            if (!(pred > 0.0)) {
                std::ostringstream msg;
                msg << "depth difference: predicted depth " << pred << " at cell (" << y << ", " << x
                    << ") must be positive";
                throw validation_error(msg.str());
            }
            if (!(sparse > 0.0)) {
                std::ostringstream msg;
                msg << "depth difference: projected depth " << sparse << " at cell (" << y << ", " << x
                    << ") must be positive";
                throw validation_error(msg.str());
            }
            out.set(y, x, std::log(pred + eps) - std::log(sparse + eps));
        }
    }
    return out;
}

void ConvLayer::validate() const {
    if (in_channels < 1 || out_channels < 1) {
        throw validation_error("convolution layer: channel counts must be positive");
    }
    const size_t want = static_cast<size_t>(out_channels) * in_channels * 9;
    if (weights.size() != want) {
        std::ostringstream msg;
        msg << "convolution layer: " << weights.size() << " weights, expected " << want << " (3x3 kernels)";
        throw validation_error(msg.str());
    }
    if (bias.size() != static_cast<size_t>(out_channels)) {
        std::ostringstream msg;
        msg << "convolution layer: " << bias.size() << " bias terms, expected " << out_channels;
        throw validation_error(msg.str());
    }
}

FeatureMap ConvLayer::apply(const FeatureMap& input) const {
    validate();
    if (input.channels != in_channels) {
        std::ostringstream msg;
        msg << "convolution layer: input has " << input.channels << " channels, expected " << in_channels;
        throw validation_error(msg.str());
    }
    const int h = input.height;
    const int w = input.width;
    FeatureMap out(out_channels, h, w);
    for (int oc = 0; oc < out_channels; ++oc) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = bias[oc];
                for (int ic = 0; ic < in_channels; ++ic) {
                    const double* kernel = &weights[(static_cast<size_t>(oc) * in_channels + ic) * 9];
                    for (int ky = -1; ky <= 1; ++ky) {
                        const int sy = y + ky;
                        if (sy < 0 || sy >= h) continue;
                        for (int kx = -1; kx <= 1; ++kx) {
                            const int sx = x + kx;
                            if (sx < 0 || sx >= w) continue;
                            acc += kernel[(ky + 1) * 3 + (kx + 1)] * input.at(ic, sy, sx);
                        }
                    }
                }
                out.at(oc, y, x) = acc;
            }
        }
    }
    return out;
}

void ConvStack::validate() const {
    first.validate();
    second.validate();
    if (first.in_channels != 1) {
        throw validation_error("depth embedding: first convolution must take a single channel");
    }
    if (second.in_channels != first.out_channels) {
        std::ostringstream msg;
        msg << "depth embedding: layer widths disagree (" << first.out_channels << " out vs "
            << second.in_channels << " in)";
        throw validation_error(msg.str());
    }
}

ConvStack ConvStack::seeded(int out_channels, uint64_t seed) {
    if (out_channels < 1) {
        throw validation_error("depth embedding: output channel count must be positive");
    }
    ConvStack stack;
    std::mt19937_64 rng(derive_seed(seed, "depth-conv"));
    stack.first.in_channels = 1;
    stack.first.out_channels = 8;
    stack.first.weights = uniform_vector(rng, 8u * 1u * 9u, 1.0 / 3.0);
    stack.first.bias.assign(8, 0.0);
    stack.second.in_channels = 8;
    stack.second.out_channels = out_channels;
    stack.second.weights =
        uniform_vector(rng, static_cast<size_t>(out_channels) * 8u * 9u, 1.0 / std::sqrt(72.0));
    stack.second.bias.assign(static_cast<size_t>(out_channels), 0.0);
    stack.validate();
    return stack;
}

FeatureMap conv2_embed(const SparseGrid& diff, const ConvStack& stack) {
    stack.validate();
    FeatureMap dense(1, diff.height, diff.width);
    for (int y = 0; y < diff.height; ++y) {
        for (int x = 0; x < diff.width; ++x) {
            dense.at(0, y, x) = diff.valid(y, x) ? diff.value(y, x) : 0.0;
        }
    }
    return stack.second.apply(stack.first.apply(dense));
}

FeatureMap attend_with_depth(const FeatureMap& fused_input, const AttentionParams& params, const FeatureMap& d_hat,
                             size_t streaming_threshold) {
    return self_attention(fused_input, params, &d_hat, streaming_threshold).fused;
}

}  // namespace mlpfseg
