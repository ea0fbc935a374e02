#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "amq/matrix.hpp"

namespace amq {

// Directed graph over mesh nodes. Edge e carries a message from src[e] into
// dst[e]; in_edge lists edge ids grouped by destination (CSR), which is the
// layout aggregation and diffusion walk.
struct Graph {
    int n_nodes = 0;
    std::vector<int> src;
    std::vector<int> dst;
    std::vector<int> in_off;
    std::vector<int> in_edge;

    int n_edges() const { return static_cast<int>(src.size()); }

    void build_csr() {
        if (src.size() != dst.size()) throw std::invalid_argument("Graph: src/dst length mismatch");
        in_off.assign(n_nodes + 1, 0);
        for (int d : dst) {
            if (d < 0 || d >= n_nodes) throw std::out_of_range("Graph: dst out of range");
            ++in_off[d + 1];
        }
        for (int s : src)
            if (s < 0 || s >= n_nodes) throw std::out_of_range("Graph: src out of range");
        for (int i = 0; i < n_nodes; ++i) in_off[i + 1] += in_off[i];
        in_edge.assign(src.size(), 0);
        std::vector<int> cur(in_off.begin(), in_off.end() - 1);
        for (int e = 0; e < n_edges(); ++e) in_edge[cur[dst[e]]++] = e;
    }
};

// k nearest neighbours by Euclidean distance, ties broken toward the smaller
// node index. Each node receives one edge from each of its k neighbours plus,
// optionally, a self-loop; the in-edge list of a node is ordered by ascending
// source index. Requires k < n_nodes.
template <typename T>
Graph knn_graph(const Matrix<T>& pos, int k, bool self_loops) {
    const int n = pos.rows();
    if (k < 1 || k >= n) throw std::invalid_argument("knn_graph: need 1 <= k < n_nodes");
    Graph g;
    g.n_nodes = n;
    std::vector<std::pair<double, int>> cand(n - 1);
    std::vector<int> nbr;
    for (int i = 0; i < n; ++i) {
        cand.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = 0.0;
            for (int c = 0; c < pos.cols(); ++c) {
                const double diff = double(pos(i, c)) - double(pos(j, c));
                d2 += diff * diff;
            }
            cand.emplace_back(d2, j);
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        nbr.clear();
        for (int m = 0; m < k; ++m) nbr.push_back(cand[m].second);
        if (self_loops) nbr.push_back(i);
        std::sort(nbr.begin(), nbr.end());
        for (int j : nbr) {
            g.src.push_back(j);
            g.dst.push_back(i);
        }
    }
    g.build_csr();
    return g;
}

// Mean of incoming messages per node; a node with no in-edges aggregates to
// the zero vector.
template <typename T>
Matrix<T> mean_aggregate(const Matrix<T>& messages, const Graph& g) {
    if (messages.rows() != g.n_edges())
        throw std::invalid_argument("mean_aggregate: one message row per edge required");
    Matrix<T> out(g.n_nodes, messages.cols());
    for (int i = 0; i < g.n_nodes; ++i) {
        const int lo = g.in_off[i], hi = g.in_off[i + 1];
        if (lo == hi) continue;
        T* orow = out.row(i);
        for (int p = lo; p < hi; ++p) {
            const T* mrow = messages.row(g.in_edge[p]);
            for (int c = 0; c < messages.cols(); ++c) orow[c] += mrow[c];
        }
        const T inv = T(1) / T(hi - lo);
        for (int c = 0; c < messages.cols(); ++c) orow[c] *= inv;
    }
    return out;
}

// Rescale a nonnegative signal to [0, 1] by its max; an all-zero signal stays
// all zero.
inline std::vector<double> normalize_loss(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) {
        if (!(x >= 0.0)) throw std::invalid_argument("normalize_loss: negative or NaN entry");
        m = std::max(m, x);
    }
    if (m <= 0.0) return std::vector<double>(v.size(), 0.0);
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] / m;
    return out;
}

// Smoothing pass: v_i <- v_i / 2 + mean of the neighbouring values / 2, where
// the neighbourhood is the in-edges excluding self-loops. A node with no such
// neighbours keeps its value.
inline std::vector<double> diffuse_loss(const std::vector<double>& v, const Graph& g, int steps) {
    if (static_cast<int>(v.size()) != g.n_nodes)
        throw std::invalid_argument("diffuse_loss: one value per node required");
    std::vector<double> cur = v, next(v.size());
    for (int t = 0; t < steps; ++t) {
        for (int i = 0; i < g.n_nodes; ++i) {
            double acc = 0.0;
            int deg = 0;
            for (int p = g.in_off[i]; p < g.in_off[i + 1]; ++p) {
                const int j = g.src[g.in_edge[p]];
                if (j == i) continue;
                acc += cur[j];
                ++deg;
            }
            next[i] = deg > 0 ? 0.5 * cur[i] + 0.5 * (acc / double(deg)) : cur[i];
        }
        cur.swap(next);
    }
    return cur;
}

}  // namespace amq
