#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "amq/graph.hpp"
#include "amq/matrix.hpp"
#include "amq/mixed_gemm.hpp"
#include "amq/quantizer.hpp"

namespace amq {

// Dynamic reverse-mode tape over dense matrices. A forward pass appends nodes
// in evaluation order; backward() walks them in reverse. Gradients follow the
// straight-through convention for quantized layers: the round-and-clamp is
// treated as identity inside the clamp range and blocked outside it.
template <typename T>
class Tape {
public:
    enum class Op { Leaf, Linear, QuantLinear, Gelu, Sigmoid, Add, Concat, Gather, MeanAgg, Mse };

    struct Node {
        Op op = Op::Leaf;
        std::array<int, 4> in{-1, -1, -1, -1};
        int n_in = 0;
        bool needs = false;
        Matrix<T> val;
        Matrix<T> grad;
        // Saved context, used only by the ops that need it.
        Matrix<T> fq_x, fq_w;
        Matrix<uint8_t> mask_x, mask_w;
        Matrix<T> diff;
        std::vector<int> idx;
        const Graph* graph = nullptr;
    };

    int size() const { return static_cast<int>(nodes_.size()); }
    const Matrix<T>& value(int id) const { return nodes_[id].val; }
    const Matrix<T>& grad(int id) const { return nodes_[id].grad; }

    int leaf(Matrix<T> v, bool needs_grad) {
        Node n;
        n.op = Op::Leaf;
        n.needs = needs_grad;
        n.val = std::move(v);
        return push(std::move(n));
    }

    // Y = X * W^T + b, W: d_out x d_in, b: 1 x d_out.
    int linear(int x, int w, int b) {
        Node n;
        n.op = Op::Linear;
        set_in(n, {x, w, b});
        n.val = matmul_nt(nodes_[x].val, nodes_[w].val);
        add_bias(n.val, nodes_[b].val);
        return push(std::move(n));
    }

    // Integer-kernel linear layer. The forward output comes from the
    // mixed-precision kernel; the saved fake-quant views and clip masks drive
    // the straight-through backward. act_q entries are calibrated in place
    // (EMA on each populated bucket's max-abs) when calibrate is set.
    int quant_linear(int x, int w, int b, const Assignment& assign,
                     std::vector<Quantizer>& act_q, int w_bits, bool calibrate,
                     bool use_segments, int b0) {
        const Matrix<T>& xv = nodes_[x].val;
        const Matrix<T>& wv = nodes_[w].val;
        if (calibrate) {
            for (int k = 0; k < assign.n_levels(); ++k) {
                double m = 0.0;
                bool any = false;
                for (int r : assign.buckets[k]) {
                    any = true;
                    const T* row = xv.row(r);
                    for (int c = 0; c < xv.cols(); ++c)
                        m = std::max(m, std::abs(double(row[c])));
                }
                if (any) act_q[k].ema_step(m);
            }
        }
        const Quantizer wq = calibrate_maxabs(wv, w_bits, ScaleAxis::PerRow);
        Node n;
        n.op = Op::QuantLinear;
        set_in(n, {x, w, b});
        n.val = use_segments
                    ? mp_linear_segmented(xv, assign, act_q, wv, wq, nodes_[b].val, b0)
                    : mp_linear_basic(xv, assign, act_q, wv, wq, nodes_[b].val);
        BucketedFQ<T> fx = bucketed_fake_quant(xv, assign, act_q);
        n.fq_x = std::move(fx.xhat);
        n.mask_x = std::move(fx.mask);
        n.fq_w = dequantize<T>(quantize(wv, wq), wq);
        n.mask_w = ste_mask(wv, wq);
        return push(std::move(n));
    }

    int gelu(int x) {
        Node n;
        n.op = Op::Gelu;
        set_in(n, {x});
        const Matrix<T>& xv = nodes_[x].val;
        n.val = Matrix<T>(xv.rows(), xv.cols());
        for (size_t i = 0; i < xv.size(); ++i) n.val.data()[i] = gelu_fn(xv.data()[i]);
        return push(std::move(n));
    }

    int sigmoid(int x) {
        Node n;
        n.op = Op::Sigmoid;
        set_in(n, {x});
        const Matrix<T>& xv = nodes_[x].val;
        n.val = Matrix<T>(xv.rows(), xv.cols());
        for (size_t i = 0; i < xv.size(); ++i)
            n.val.data()[i] = T(1) / (T(1) + std::exp(-xv.data()[i]));
        return push(std::move(n));
    }

    int add(int a, int b) {
        if (!nodes_[a].val.same_shape(nodes_[b].val))
            throw std::invalid_argument("tape add: shape mismatch");
        Node n;
        n.op = Op::Add;
        set_in(n, {a, b});
        n.val = nodes_[a].val;
        for (size_t i = 0; i < n.val.size(); ++i) n.val.data()[i] += nodes_[b].val.data()[i];
        return push(std::move(n));
    }

    int concat_cols(std::initializer_list<int> ids) {
        if (ids.size() < 2 || ids.size() > 4)
            throw std::invalid_argument("tape concat: 2..4 inputs supported");
        int rows = -1, cols = 0;
        for (int id : ids) {
            if (rows < 0) rows = nodes_[id].val.rows();
            if (nodes_[id].val.rows() != rows)
                throw std::invalid_argument("tape concat: row count mismatch");
            cols += nodes_[id].val.cols();
        }
        Node n;
        n.op = Op::Concat;
        set_in(n, ids);
        n.val = Matrix<T>(rows, cols);
        int off = 0;
        for (int id : ids) {
            const Matrix<T>& v = nodes_[id].val;
            for (int r = 0; r < rows; ++r)
                std::copy(v.row(r), v.row(r) + v.cols(), n.val.row(r) + off);
            off += v.cols();
        }
        return push(std::move(n));
    }

    int gather_rows(int x, std::vector<int> idx) {
        const Matrix<T>& xv = nodes_[x].val;
        Node n;
        n.op = Op::Gather;
        set_in(n, {x});
        n.val = Matrix<T>(static_cast<int>(idx.size()), xv.cols());
        for (size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] < 0 || idx[r] >= xv.rows())
                throw std::out_of_range("tape gather: index out of range");
            std::copy(xv.row(idx[r]), xv.row(idx[r]) + xv.cols(),
                      n.val.row(static_cast<int>(r)));
        }
        n.idx = std::move(idx);
        return push(std::move(n));
    }

    int mean_agg(int messages, const Graph& g) {
        Node n;
        n.op = Op::MeanAgg;
        set_in(n, {messages});
        n.val = mean_aggregate(nodes_[messages].val, g);
        n.graph = &g;
        return push(std::move(n));
    }

    // Scalar mean squared error over all entries; target enters as a leaf so
    // shapes are checked once here.
    int mse(int pred, int target) {
        const Matrix<T>& p = nodes_[pred].val;
        const Matrix<T>& t = nodes_[target].val;
        if (!p.same_shape(t)) throw std::invalid_argument("tape mse: shape mismatch");
        Node n;
        n.op = Op::Mse;
        set_in(n, {pred, target});
        n.diff = Matrix<T>(p.rows(), p.cols());
        double acc = 0.0;
        for (size_t i = 0; i < p.size(); ++i) {
            const T d = p.data()[i] - t.data()[i];
            n.diff.data()[i] = d;
            acc += double(d) * double(d);
        }
        n.val = Matrix<T>(1, 1);
        n.val(0, 0) = static_cast<T>(acc / double(p.size()));
        return push(std::move(n));
    }

    void backward(int root) {
        if (nodes_[root].val.rows() != 1 || nodes_[root].val.cols() != 1)
            throw std::invalid_argument("tape backward: root must be scalar");
        for (auto& n : nodes_) n.grad = Matrix<T>();
        ensure_grad(root);
        nodes_[root].grad(0, 0) = T(1);
        for (int id = root; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.needs || n.grad.empty()) continue;
            step_back(n);
        }
    }

    static T gelu_fn(T x) {
        return static_cast<T>(0.5 * double(x) * std::erfc(-double(x) / std::sqrt(2.0)));
    }
    static T gelu_grad(T x) {
        const double xd = double(x);
        const double cdf = 0.5 * std::erfc(-xd / std::sqrt(2.0));
        const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * 3.14159265358979323846);
        return static_cast<T>(cdf + xd * pdf);
    }

private:
    std::vector<Node> nodes_;

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void set_in(Node& n, std::initializer_list<int> ids) {
        n.n_in = 0;
        for (int id : ids) {
            if (id < 0 || id >= size()) throw std::out_of_range("tape: bad input id");
            n.in[n.n_in++] = id;
            n.needs = n.needs || nodes_[id].needs;
        }
    }

    void ensure_grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = Matrix<T>(n.val.rows(), n.val.cols());
    }

    void accum(int id, const Matrix<T>& g) {
        if (!nodes_[id].needs) return;
        ensure_grad(id);
        Matrix<T>& dst = nodes_[id].grad;
        for (size_t i = 0; i < dst.size(); ++i) dst.data()[i] += g.data()[i];
    }

    static void add_bias(Matrix<T>& y, const Matrix<T>& b) {
        if (b.rows() != 1 || b.cols() != y.cols())
            throw std::invalid_argument("tape linear: bias must be 1 x d_out");
        for (int r = 0; r < y.rows(); ++r) {
            T* row = y.row(r);
            for (int c = 0; c < y.cols(); ++c) row[c] += b(0, c);
        }
    }

    void back_linear_common(Node& n, const Matrix<T>& x_for_w, const Matrix<T>& w_for_x,
                            const Matrix<uint8_t>* mx, const Matrix<uint8_t>* mw) {
        const Matrix<T>& gy = n.grad;
        if (nodes_[n.in[0]].needs) {
            Matrix<T> gx = matmul(gy, w_for_x);
            if (mx)
                for (size_t i = 0; i < gx.size(); ++i)
                    if (!mx->data()[i]) gx.data()[i] = T(0);
            accum(n.in[0], gx);
        }
        if (nodes_[n.in[1]].needs) {
            Matrix<T> gw(w_for_x.rows(), w_for_x.cols());
            matmul_tn_acc(gy, x_for_w, gw);
            if (mw)
                for (size_t i = 0; i < gw.size(); ++i)
                    if (!mw->data()[i]) gw.data()[i] = T(0);
            accum(n.in[1], gw);
        }
        if (nodes_[n.in[2]].needs) {
            Matrix<T> gb(1, gy.cols());
            for (int r = 0; r < gy.rows(); ++r) {
                const T* row = gy.row(r);
                for (int c = 0; c < gy.cols(); ++c) gb(0, c) += row[c];
            }
            accum(n.in[2], gb);
        }
    }

    void step_back(Node& n) {
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Linear:
                back_linear_common(n, nodes_[n.in[0]].val, nodes_[n.in[1]].val, nullptr,
                                   nullptr);
                break;
            case Op::QuantLinear:
                back_linear_common(n, n.fq_x, n.fq_w, &n.mask_x, &n.mask_w);
                break;
            case Op::Gelu: {
                const Matrix<T>& x = nodes_[n.in[0]].val;
                Matrix<T> g(x.rows(), x.cols());
                for (size_t i = 0; i < x.size(); ++i)
                    g.data()[i] = n.grad.data()[i] * gelu_grad(x.data()[i]);
                accum(n.in[0], g);
                break;
            }
            case Op::Sigmoid: {
                Matrix<T> g(n.val.rows(), n.val.cols());
                for (size_t i = 0; i < n.val.size(); ++i) {
                    const T s = n.val.data()[i];
                    g.data()[i] = n.grad.data()[i] * s * (T(1) - s);
                }
                accum(n.in[0], g);
                break;
            }
            case Op::Add:
                accum(n.in[0], n.grad);
                accum(n.in[1], n.grad);
                break;
            case Op::Concat: {
                int off = 0;
                for (int i = 0; i < n.n_in; ++i) {
                    const int id = n.in[i];
                    const int w = nodes_[id].val.cols();
                    if (nodes_[id].needs) {
                        Matrix<T> g(n.grad.rows(), w);
                        for (int r = 0; r < g.rows(); ++r)
                            std::copy(n.grad.row(r) + off, n.grad.row(r) + off + w, g.row(r));
                        accum(id, g);
                    }
                    off += w;
                }
                break;
            }
            case Op::Gather: {
                const int src_id = n.in[0];
                if (nodes_[src_id].needs) {
                    Matrix<T> g(nodes_[src_id].val.rows(), nodes_[src_id].val.cols());
                    for (size_t r = 0; r < n.idx.size(); ++r) {
                        const T* grow = n.grad.row(static_cast<int>(r));
                        T* drow = g.row(n.idx[r]);
                        for (int c = 0; c < g.cols(); ++c) drow[c] += grow[c];
                    }
                    accum(src_id, g);
                }
                break;
            }
            case Op::MeanAgg: {
                const Graph& g = *n.graph;
                const int msg_id = n.in[0];
                if (nodes_[msg_id].needs) {
                    Matrix<T> gm(nodes_[msg_id].val.rows(), nodes_[msg_id].val.cols());
                    for (int i = 0; i < g.n_nodes; ++i) {
                        const int lo = g.in_off[i], hi = g.in_off[i + 1];
                        if (lo == hi) continue;
                        const T inv = T(1) / T(hi - lo);
                        const T* grow = n.grad.row(i);
                        for (int p = lo; p < hi; ++p) {
                            T* mrow = gm.row(g.in_edge[p]);
                            for (int c = 0; c < gm.cols(); ++c) mrow[c] += grow[c] * inv;
                        }
                    }
                    accum(msg_id, gm);
                }
                break;
            }
            case Op::Mse: {
                const int pred = n.in[0];
                if (nodes_[pred].needs) {
                    const T coef =
                        n.grad(0, 0) * static_cast<T>(2.0 / double(n.diff.size()));
                    Matrix<T> g(n.diff.rows(), n.diff.cols());
                    for (size_t i = 0; i < n.diff.size(); ++i)
                        g.data()[i] = coef * n.diff.data()[i];
                    accum(pred, g);
                }
                break;
            }
        }
    }
};

}  // namespace amq
