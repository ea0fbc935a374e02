#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "amq/bit_assign.hpp"
#include "amq/dataset.hpp"
#include "amq/graph.hpp"
#include "amq/matrix.hpp"
#include "amq/quantizer.hpp"
#include "amq/rng.hpp"
#include "amq/tape.hpp"

namespace amq {

struct MPNNConfig {
    int in_dim = 3;   // [coefficient, x, y]
    int out_dim = 1;
    int hidden = 24;
    int layers = 2;   // processor depth
    std::vector<int> levels{4, 8};
    int b0 = 4;
    int w_bits = 8;
    double ema_decay = 0.99;
    bool sigmoid_head = false;

    void validate() const {
        if (in_dim < 1 || out_dim < 1 || hidden < 1 || layers < 1)
            throw std::invalid_argument("MPNNConfig: dims must be >= 1");
        if (levels.empty()) throw std::invalid_argument("MPNNConfig: no quant levels");
        for (size_t i = 1; i < levels.size(); ++i)
            if (levels[i] <= levels[i - 1])
                throw std::invalid_argument("MPNNConfig: levels must be strictly ascending");
    }
};

template <typename T>
struct LinearLayer {
    Matrix<T> w;  // d_out x d_in
    Matrix<T> b;  // 1 x d_out
    std::vector<Quantizer> act_q;  // one per precision level

    void init(int d_in, int d_out, const MPNNConfig& cfg, Rng& rng) {
        w = Matrix<T>(d_out, d_in);
        b = Matrix<T>(1, d_out);
        const double bound = 1.0 / std::sqrt(double(d_in));
        for (size_t i = 0; i < w.size(); ++i)
            w.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
        for (size_t i = 0; i < b.size(); ++i)
            b.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
        act_q.clear();
        for (int lvl : cfg.levels) act_q.push_back(Quantizer::with_ema(lvl, cfg.ema_decay));
    }
};

template <typename T>
struct MLP2 {
    LinearLayer<T> l1, l2;
    void init(int d_in, int d_hidden, int d_out, const MPNNConfig& cfg, Rng& rng) {
        l1.init(d_in, d_hidden, cfg, rng);
        l2.init(d_hidden, d_out, cfg, rng);
    }
};

template <typename T>
struct ProcessorLayer {
    MLP2<T> msg;  // input (x_i, u_i - u_j, x_j, p_i - p_j)
    MLP2<T> upd;  // input (x_i, m_i), residual output
};

// Node and edge bucket partitions for one sample.
struct Allocation {
    Assignment nodes;
    Assignment edges;
};

inline Assignment uniform_assignment(int n_items, int bits) {
    Assignment a;
    a.levels = {bits};
    a.buckets.resize(1);
    a.level_of.assign(n_items, 0);
    a.buckets[0].resize(n_items);
    for (int i = 0; i < n_items; ++i) a.buckets[0][i] = i;
    return a;
}

// Model inputs precomputed per sample: encoder features and the constant
// per-edge differences feeding the message MLP.
template <typename T>
struct PreparedSample {
    const Graph* graph = nullptr;
    Matrix<T> x0;       // n x in_dim: [feat_norm, pos]
    Matrix<T> target;   // n x out_dim, normalized
    Matrix<T> edge_du;  // E x 1: u_i - u_j (i = dst)
    Matrix<T> edge_dp;  // E x 2: p_i - p_j
};

// feat_shift/feat_scale standardize the input field; target_scale divides the
// solution. The message u-differences use the standardized field.
template <typename T>
PreparedSample<T> prepare_sample(const MeshSample& s, double feat_shift, double feat_scale,
                                 double target_scale) {
    if (feat_scale <= 0.0 || target_scale <= 0.0)
        throw std::invalid_argument("prepare_sample: scales must be positive");
    const int n = s.graph.n_nodes;
    const int e = s.graph.n_edges();
    PreparedSample<T> p;
    p.graph = &s.graph;
    p.x0 = Matrix<T>(n, 1 + s.pos.cols());
    p.target = Matrix<T>(n, 1);
    std::vector<double> u(n);
    for (int i = 0; i < n; ++i) {
        u[i] = (s.feat(i, 0) - feat_shift) / feat_scale;
        p.x0(i, 0) = static_cast<T>(u[i]);
        for (int c = 0; c < s.pos.cols(); ++c) p.x0(i, 1 + c) = static_cast<T>(s.pos(i, c));
        p.target(i, 0) = static_cast<T>(s.target(i, 0) / target_scale);
    }
    p.edge_du = Matrix<T>(e, 1);
    p.edge_dp = Matrix<T>(e, s.pos.cols());
    for (int k = 0; k < e; ++k) {
        const int i = s.graph.dst[k], j = s.graph.src[k];
        p.edge_du(k, 0) = static_cast<T>(u[i] - u[j]);
        for (int c = 0; c < s.pos.cols(); ++c)
            p.edge_dp(k, c) = static_cast<T>(s.pos(i, c) - s.pos(j, c));
    }
    return p;
}

struct ForwardOpts {
    bool quant = true;
    bool calibrate = false;
    bool use_segments = false;
};

template <typename T>
struct ForwardResult {
    int pred = -1;
    std::vector<int> param_leaves;  // aligned with MPNNModel::params()
};

// Encode-process-decode message-passing network. The processor message MLP
// receives (x_i, u_i - u_j, x_j, p_i - p_j) with i the receiving node; the
// update MLP receives (x_i, m_i) and its output is added residually. Message
// MLP inputs are quantized by the edge buckets, all other linear inputs by the
// node buckets.
template <typename T>
class MPNNModel {
public:
    MPNNConfig cfg;
    MLP2<T> encoder;
    std::vector<ProcessorLayer<T>> procs;
    MLP2<T> decoder;

    void init(uint64_t seed) {
        cfg.validate();
        Rng rng(seed);
        const int d = cfg.hidden;
        encoder.init(cfg.in_dim, d, d, cfg, rng);
        procs.assign(cfg.layers, {});
        for (auto& p : procs) {
            p.msg.init(2 * d + 3, d, d, cfg, rng);
            p.upd.init(2 * d, d, d, cfg, rng);
        }
        decoder.init(d, d, cfg.out_dim, cfg, rng);
    }

    template <typename F>
    void for_each_layer(F&& f) {
        f(encoder.l1);
        f(encoder.l2);
        for (auto& p : procs) {
            f(p.msg.l1);
            f(p.msg.l2);
            f(p.upd.l1);
            f(p.upd.l2);
        }
        f(decoder.l1);
        f(decoder.l2);
    }

    std::vector<Matrix<T>*> params() {
        std::vector<Matrix<T>*> out;
        for_each_layer([&](LinearLayer<T>& l) {
            out.push_back(&l.w);
            out.push_back(&l.b);
        });
        return out;
    }

    std::vector<Quantizer*> quantizers() {
        std::vector<Quantizer*> out;
        for_each_layer([&](LinearLayer<T>& l) {
            for (auto& q : l.act_q) out.push_back(&q);
        });
        return out;
    }

    void freeze_quantizers() {
        for (Quantizer* q : quantizers()) q->freeze();
    }

    ForwardResult<T> forward(Tape<T>& tape, const PreparedSample<T>& s, const Allocation& alloc,
                             const ForwardOpts& opts) {
        if (s.x0.cols() != cfg.in_dim)
            throw std::invalid_argument("forward: sample width does not match in_dim");
        if (opts.quant) {
            if (alloc.nodes.n_items() != s.graph->n_nodes ||
                alloc.edges.n_items() != s.graph->n_edges())
                throw std::invalid_argument("forward: allocation does not match graph");
        }
        ForwardResult<T> res;
        const int x0 = tape.leaf(s.x0, false);
        const int du = tape.leaf(s.edge_du, false);
        const int dp = tape.leaf(s.edge_dp, false);

        int h = mlp2(tape, encoder, x0, alloc.nodes, opts, res);
        for (auto& p : procs) {
            const int xi = tape.gather_rows(h, s.graph->dst);
            const int xj = tape.gather_rows(h, s.graph->src);
            const int min = tape.concat_cols({xi, du, xj, dp});
            const int m = mlp2(tape, p.msg, min, alloc.edges, opts, res);
            const int mi = tape.mean_agg(m, *s.graph);
            const int uin = tape.concat_cols({h, mi});
            const int delta = mlp2(tape, p.upd, uin, alloc.nodes, opts, res);
            h = tape.add(h, delta);
        }
        int out = mlp2(tape, decoder, h, alloc.nodes, opts, res);
        if (cfg.sigmoid_head) out = tape.sigmoid(out);
        res.pred = out;
        return res;
    }

private:
    int apply_linear(Tape<T>& tape, LinearLayer<T>& l, int x, const Assignment& assign,
                     const ForwardOpts& opts, ForwardResult<T>& res) {
        const int w = tape.leaf(l.w, true);
        const int b = tape.leaf(l.b, true);
        res.param_leaves.push_back(w);
        res.param_leaves.push_back(b);
        if (!opts.quant) return tape.linear(x, w, b);
        return tape.quant_linear(x, w, b, assign, l.act_q, cfg.w_bits, opts.calibrate,
                                 opts.use_segments, cfg.b0);
    }

    int mlp2(Tape<T>& tape, MLP2<T>& mlp, int x, const Assignment& assign,
             const ForwardOpts& opts, ForwardResult<T>& res) {
        int h = apply_linear(tape, mlp.l1, x, assign, opts, res);
        h = tape.gelu(h);
        return apply_linear(tape, mlp.l2, h, assign, opts, res);
    }
};

// Per-node mean squared error over output channels; the scalar loss is its
// mean over nodes.
template <typename T>
std::vector<double> per_node_loss(const Matrix<T>& pred, const Matrix<T>& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("per_node_loss: shape mismatch");
    std::vector<double> out(pred.rows());
    for (int r = 0; r < pred.rows(); ++r) {
        double acc = 0.0;
        for (int c = 0; c < pred.cols(); ++c) {
            const double d = double(pred(r, c)) - double(target(r, c));
            acc += d * d;
        }
        out[r] = acc / double(pred.cols());
    }
    return out;
}

template <typename T>
double rel_l2(const Matrix<T>& pred, const Matrix<T>& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("rel_l2: shape mismatch");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = double(pred.data()[i]) - double(target.data()[i]);
        num += d * d;
        den += double(target.data()[i]) * double(target.data()[i]);
    }
    if (den <= 0.0) throw std::invalid_argument("rel_l2: zero-norm target");
    return std::sqrt(num / den);
}

}  // namespace amq
