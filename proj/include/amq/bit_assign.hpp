#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace amq {

// Partition of N items into one bucket per precision level. Levels are listed
// ascending (lowest bit-width first); items with the smallest complexity
// weights land in the lowest-precision bucket. buckets[k] holds the item
// indices of level levels[k] in ascending index order; level_of is the
// inverse map.
struct Assignment {
    std::vector<int> levels;
    std::vector<std::vector<int>> buckets;
    std::vector<int> level_of;

    int bits_of(int item) const { return levels[level_of[item]]; }
    int n_levels() const { return static_cast<int>(levels.size()); }
    int n_items() const { return static_cast<int>(level_of.size()); }
};

// Stable argsort by (weight, index) ascending. Ties resolve to the smaller
// index so the split is reproducible across platforms.
inline std::vector<int> argsort_stable(const std::vector<double>& w) {
    std::vector<int> order(w.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (w[a] != w[b]) return w[a] < w[b];
        return a < b;
    });
    return order;
}

// Budgeted assignment: slice the sorted order into contiguous chunks of size
// floor(N * alpha_k) per level, ascending. Whatever flooring leaves over goes
// to the final (highest-precision) bucket.
inline Assignment assign_buckets(const std::vector<double>& w, const std::vector<int>& levels,
                                 const std::vector<double>& alphas) {
    const int n = static_cast<int>(w.size());
    const int k = static_cast<int>(levels.size());
    if (k == 0) throw std::invalid_argument("assign_buckets: no levels");
    if (alphas.size() != levels.size())
        throw std::invalid_argument("assign_buckets: levels/alphas size mismatch");
    for (int i = 1; i < k; ++i)
        if (levels[i] <= levels[i - 1])
            throw std::invalid_argument("assign_buckets: levels must be strictly ascending");
    double alpha_sum = 0.0;
    for (double a : alphas) {
        if (!(a >= 0.0) || !std::isfinite(a))
            throw std::invalid_argument("assign_buckets: alphas must be finite and >= 0");
        alpha_sum += a;
    }
    if (std::abs(alpha_sum - 1.0) > 1e-9)
        throw std::invalid_argument("assign_buckets: alphas must sum to 1");
    for (double x : w)
        if (!std::isfinite(x)) throw std::invalid_argument("assign_buckets: non-finite weight");

    const std::vector<int> order = argsort_stable(w);

    Assignment a;
    a.levels = levels;
    a.buckets.resize(k);
    a.level_of.assign(n, k - 1);

    int pos = 0;
    for (int lvl = 0; lvl < k; ++lvl) {
        int take = lvl + 1 < k ? static_cast<int>(std::floor(double(n) * alphas[lvl]))
                               : n - pos;  // remainder sticks to the top bucket
        take = std::min(take, n - pos);
        for (int j = 0; j < take; ++j) {
            const int item = order[pos + j];
            a.level_of[item] = lvl;
            a.buckets[lvl].push_back(item);
        }
        pos += take;
    }
    for (auto& b : a.buckets) std::sort(b.begin(), b.end());
    return a;
}

// Edges inherit the complexity weight of the node they point into, so an
// edge feeding a hard node is kept at that node's precision.
inline std::vector<double> edge_weights(const std::vector<double>& node_w,
                                        const std::vector<int>& edge_dst) {
    std::vector<double> w(edge_dst.size());
    for (size_t e = 0; e < edge_dst.size(); ++e) {
        const int d = edge_dst[e];
        if (d < 0 || d >= static_cast<int>(node_w.size()))
            throw std::out_of_range("edge_weights: dst index out of range");
        w[e] = node_w[d];
    }
    return w;
}

// A cluster's weight is the mean over its member nodes.
inline std::vector<double> cluster_weights(const std::vector<double>& node_w,
                                           const std::vector<std::vector<int>>& clusters) {
    std::vector<double> w(clusters.size(), 0.0);
    for (size_t c = 0; c < clusters.size(); ++c) {
        if (clusters[c].empty()) throw std::invalid_argument("cluster_weights: empty cluster");
        double acc = 0.0;
        for (int i : clusters[c]) {
            if (i < 0 || i >= static_cast<int>(node_w.size()))
                throw std::out_of_range("cluster_weights: member index out of range");
            acc += node_w[i];
        }
        w[c] = acc / double(clusters[c].size());
    }
    return w;
}

}  // namespace amq
