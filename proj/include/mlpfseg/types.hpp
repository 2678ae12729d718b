#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mlpfseg/errors.hpp"

namespace mlpfseg {

// Dense c x h x w grid of doubles, channel-major row-major storage:
// index = (c * height + y) * width + x. Serialized as float32 ("LFFM").
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, 0.0) {
        if (c < 1 || h < 1 || w < 1) throw validation_error("FeatureMap dimensions must be >= 1, got " + shape_str());
    }

    double& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }

    size_t size() const { return data.size(); }
    bool same_shape(const FeatureMap& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }
    std::string shape_str() const {
        return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
    }
    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Throwing variant; `what` names the map in the diagnostic.
    void all_finite(const char* what) const {
        for (size_t i = 0; i < data.size(); ++i)
            if (!std::isfinite(data[i]))
                throw validation_error(std::string(what) + ": non-finite value at flat index " + std::to_string(i));
    }
};

// h x w grid of optional scalars: mask(y,x) true <=> value present.
// Absent cells hold 0 and serialize as 0 with mask false ("LFSG").
struct SparseGrid {
    int height = 0;
    int width = 0;
    std::vector<double> values;
    std::vector<uint8_t> mask;

    SparseGrid() = default;
    SparseGrid(int h, int w)
        : height(h), width(w), values(static_cast<size_t>(h) * w, 0.0), mask(static_cast<size_t>(h) * w, 0) {
        if (h < 1 || w < 1)
            throw validation_error("SparseGrid dimensions must be >= 1, got " + std::to_string(h) + "x" +
                                   std::to_string(w));
    }

    size_t idx(int y, int x) const { return static_cast<size_t>(y) * width + x; }
    bool valid(int y, int x) const { return mask[idx(y, x)] != 0; }
    double value(int y, int x) const { return values[idx(y, x)]; }
    void set(int y, int x, double v) {
        values[idx(y, x)] = v;
        mask[idx(y, x)] = 1;
    }
    void clear(int y, int x) {
        values[idx(y, x)] = 0.0;
        mask[idx(y, x)] = 0;
    }
    size_t valid_count() const {
        size_t n = 0;
        for (uint8_t m : mask) n += (m != 0);
        return n;
    }
};

// Per-cell (or per-point, with height 1) class ids. 255 is the ignore sentinel.
struct LabelMap {
    static constexpr uint8_t kIgnore = 255;

    int height = 0;
    int width = 0;
    std::vector<uint8_t> labels;

    LabelMap() = default;
    LabelMap(int h, int w) : height(h), width(w), labels(static_cast<size_t>(h) * w, kIgnore) {
        if (h < 1 || w < 1)
            throw validation_error("LabelMap dimensions must be >= 1, got " + std::to_string(h) + "x" +
                                   std::to_string(w));
    }

    uint8_t& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return labels.size(); }

    void check_classes(int num_classes) const {
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] != kIgnore && labels[i] >= num_classes)
                throw validation_error("label " + std::to_string(int(labels[i])) + " at flat index " +
                                       std::to_string(i) + " out of range for " + std::to_string(num_classes) +
                                       " classes");
    }
};

// N x 4 LiDAR returns: x, y, z in meters, r reflectance. Serialized as "LFPC".
struct PointCloud {
    std::vector<std::array<double, 4>> points;

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    void check_finite() const {
        for (size_t i = 0; i < points.size(); ++i)
            for (double v : points[i])
                if (!std::isfinite(v))
                    throw validation_error("non-finite coordinate in point " + std::to_string(i));
    }
};

}  // namespace mlpfseg
