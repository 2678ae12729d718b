#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <utility>
#include <vector>

namespace mlpfseg::detail {

// Exact k-nearest-neighbour search over a static point set. Neighbours are
// ordered by (squared distance, id): ties at equal distance resolve to the
// smaller id, which is how both the voxel and the pixel interpolators pin
// their deterministic tie-breaking. Ids are caller-assigned.
template <int Dim>
class KdTree {
public:
    struct Entry {
        std::array<double, Dim> p;
        int id;
    };

    explicit KdTree(std::vector<Entry> points) : pts_(std::move(points)) {
        index_.resize(pts_.size());
        for (size_t i = 0; i < index_.size(); ++i) index_[i] = static_cast<int>(i);
        if (!pts_.empty()) build(0, static_cast<int>(pts_.size()), 0);
    }

    bool empty() const { return pts_.empty(); }
    size_t size() const { return pts_.size(); }

    // k nearest entries, ascending by (squared distance, id).
    std::vector<std::pair<double, int>> nearest(const std::array<double, Dim>& query, int k) const {
        std::vector<std::pair<double, int>> best;
        if (pts_.empty() || k <= 0) return best;
        best.reserve(static_cast<size_t>(k) + 1);
        search(0, static_cast<int>(pts_.size()), 0, query, k, best);
        return best;
    }

private:
    static double sq_dist(const std::array<double, Dim>& a, const std::array<double, Dim>& b) {
        double d = 0.0;
        for (int i = 0; i < Dim; ++i) {
            const double diff = a[i] - b[i];
            d += diff * diff;
        }
        return d;
    }

    void build(int lo, int hi, int depth) {
        if (hi - lo <= 1) return;
        const int axis = depth % Dim;
        const int mid = (lo + hi) / 2;
        std::nth_element(index_.begin() + lo, index_.begin() + mid, index_.begin() + hi,
                         [&](int a, int b) { return pts_[a].p[axis] < pts_[b].p[axis]; });
        build(lo, mid, depth + 1);
        build(mid + 1, hi, depth + 1);
    }

    static bool better(const std::pair<double, int>& a, const std::pair<double, int>& b) {
        return a.first < b.first || (a.first == b.first && a.second < b.second);
    }

    void offer(std::vector<std::pair<double, int>>& best, int k, double d2, int id) const {
        const std::pair<double, int> cand{d2, id};
        if (static_cast<int>(best.size()) == k && !better(cand, best.back())) return;
        auto pos = std::upper_bound(best.begin(), best.end(), cand, better);
        best.insert(pos, cand);
        if (static_cast<int>(best.size()) > k) best.pop_back();
    }

    void search(int lo, int hi, int depth, const std::array<double, Dim>& query, int k,
                std::vector<std::pair<double, int>>& best) const {
        if (lo >= hi) return;
        const int axis = depth % Dim;
        const int mid = (lo + hi) / 2;
        const Entry& e = pts_[index_[mid]];
        offer(best, k, sq_dist(e.p, query), e.id);
        const double delta = query[axis] - e.p[axis];
        const bool left_first = delta < 0.0;
        const int near_lo = left_first ? lo : mid + 1;
        const int near_hi = left_first ? mid : hi;
        const int far_lo = left_first ? mid + 1 : lo;
        const int far_hi = left_first ? hi : mid;
        search(near_lo, near_hi, depth + 1, query, k, best);
        // Visit the far side unless the splitting plane is strictly farther
        // than the current worst; equality must recurse so id ties are found.
        if (static_cast<int>(best.size()) < k || delta * delta <= best.back().first)
            search(far_lo, far_hi, depth + 1, query, k, best);
    }

    std::vector<Entry> pts_;
    std::vector<int> index_;
};

}  // namespace mlpfseg::detail
