#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "amq/bit_assign.hpp"
#include "amq/matrix.hpp"
#include "amq/quantizer.hpp"

namespace amq {

// Shared dequantization factor for the integer epilogue. Both linear kernels
// must run the identical float expression per output element, so this helper
// is the single place the factor is formed. A degenerate scale on either side
// zeroes the product instead of producing inf * 0.
inline double dequant_inv(double s_act, double s_w) {
    return (s_act > 0.0 && s_w > 0.0) ? 1.0 / (s_act * s_w) : 0.0;
}

namespace detail {

inline void check_mp_args(int n_rows, const Assignment& assign,
                          const std::vector<Quantizer>& act_q, const Quantizer& wq,
                          int d_out, int bias_cols) {
    if (assign.n_items() != n_rows)
        throw std::invalid_argument("mp_linear: assignment covers wrong number of rows");
    if (static_cast<int>(act_q.size()) != assign.n_levels())
        throw std::invalid_argument("mp_linear: one activation quantizer per level required");
    for (int k = 0; k < assign.n_levels(); ++k) {
        if (act_q[k].per_channel())
            throw std::invalid_argument("mp_linear: activation scales are per-tensor");
        if (act_q[k].bits() != assign.levels[k])
            throw std::invalid_argument("mp_linear: quantizer bits disagree with level");
    }
    if (wq.axis() == ScaleAxis::PerColumn)
        throw std::invalid_argument("mp_linear: weight scales are per output channel (row)");
    if (wq.axis() == ScaleAxis::PerRow && wq.channels() != d_out)
        throw std::invalid_argument("mp_linear: weight channel count mismatch");
    if (bias_cols != d_out) throw std::invalid_argument("mp_linear: bias size mismatch");
}

inline double w_scale(const Quantizer& wq, int c) {
    return wq.axis() == ScaleAxis::PerRow ? wq.scale(c) : wq.scale(0);
}

}  // namespace detail

// Reference computation: Y = X * W^T + b with W stored d_out x d_in.
template <typename T>
Matrix<T> linear_ref(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& bias) {
    Matrix<T> y = matmul_nt(x, w);
    for (int r = 0; r < y.rows(); ++r) {
        T* row = y.row(r);
        for (int c = 0; c < y.cols(); ++c) row[c] += bias(0, c);
    }
    return y;
}

// Per-bucket kernel: one integer GEMM per precision level over the rows that
// level owns, epilogue y = acc / (s_k * s_W[c]) + b[c].
template <typename T>
Matrix<T> mp_linear_basic(const Matrix<T>& x, const Assignment& assign,
                          const std::vector<Quantizer>& act_q, const Matrix<T>& w,
                          const Quantizer& wq, const Matrix<T>& bias) {
    const int d_out = w.rows(), d_in = w.cols();
    if (x.cols() != d_in) throw std::invalid_argument("mp_linear: input width mismatch");
    detail::check_mp_args(x.rows(), assign, act_q, wq, d_out, bias.cols());

    const Matrix<int32_t> qw = quantize(w, wq);
    Matrix<T> y(x.rows(), d_out);

    for (int k = 0; k < assign.n_levels(); ++k) {
        const std::vector<int>& rows = assign.buckets[k];
        if (rows.empty()) continue;
        Matrix<T> xs(static_cast<int>(rows.size()), d_in);
        for (size_t i = 0; i < rows.size(); ++i)
            std::copy(x.row(rows[i]), x.row(rows[i]) + d_in, xs.row(static_cast<int>(i)));
        const Matrix<int32_t> qx = quantize(xs, act_q[k]);
        const Matrix<int64_t> acc = imatmul_nt(qx, qw, act_q[k].qmax(), wq.qmax());
        const double s_k = act_q[k].scale(0);
        for (size_t i = 0; i < rows.size(); ++i) {
            const int64_t* arow = acc.row(static_cast<int>(i));
            T* yrow = y.row(rows[i]);
            for (int c = 0; c < d_out; ++c) {
                const double inv = dequant_inv(s_k, detail::w_scale(wq, c));
                yrow[c] = static_cast<T>(double(arow[c]) * inv + double(bias(0, c)));
            }
        }
    }
    return y;
}

// Two's-complement split of a b-bit integer into b/b0 segments of b0 bits:
// lower segments are unsigned in [0, 2^b0 - 1], the top segment is signed in
// [-2^(b0-1), 2^(b0-1) - 1], and q = sum_m seg[m] * 2^(m*b0).
inline std::vector<int32_t> segment_encode(int32_t q, int bits, int b0) {
    if (b0 < 2 || bits % b0 != 0)
        throw std::invalid_argument("segment_encode: b0 must be >= 2 and divide bits");
    const int n_seg = bits / b0;
    std::vector<int32_t> seg(n_seg);
    const int32_t mask = (int32_t(1) << b0) - 1;
    for (int m = 0; m + 1 < n_seg; ++m) seg[m] = (q >> (m * b0)) & mask;
    seg[n_seg - 1] = q >> ((n_seg - 1) * b0);
    return seg;
}

inline int32_t segment_decode(const std::vector<int32_t>& seg, int b0) {
    int32_t q = 0;
    for (size_t m = 0; m < seg.size(); ++m) q += seg[m] << (int(m) * b0);
    return q;
}

// Dequantization factor of segment m in the factored form: the epilogue for a
// level-k row against output channel c scales segment m by 2^(m*b0)/(s_k*s_W).
inline std::vector<double> segment_scales(int b0, int bits, double s_act, double s_w) {
    if (b0 < 2 || bits % b0 != 0)
        throw std::invalid_argument("segment_scales: b0 must be >= 2 and divide bits");
    const double inv = dequant_inv(s_act, s_w);
    std::vector<double> out(bits / b0);
    for (size_t m = 0; m < out.size(); ++m)
        out[m] = double(int64_t(1) << (int(m) * b0)) * inv;
    return out;
}

// Segment kernel: every row is split into b_k/b0 segment rows of uniform b0-bit
// operands, all buckets are stacked into one matrix, and a single integer GEMM
// covers the whole batch. Segment results recombine in the integer domain
// (exact power-of-two shifts), so the float epilogue is the same expression as
// the per-bucket kernel and the two outputs match bit for bit.
template <typename T>
Matrix<T> mp_linear_segmented(const Matrix<T>& x, const Assignment& assign,
                              const std::vector<Quantizer>& act_q, const Matrix<T>& w,
                              const Quantizer& wq, const Matrix<T>& bias, int b0) {
    const int d_out = w.rows(), d_in = w.cols();
    if (x.cols() != d_in) throw std::invalid_argument("mp_linear: input width mismatch");
    detail::check_mp_args(x.rows(), assign, act_q, wq, d_out, bias.cols());
    int total_seg_rows = 0;
    for (int k = 0; k < assign.n_levels(); ++k) {
        if (b0 < 2 || assign.levels[k] % b0 != 0)
            throw std::invalid_argument("mp_linear: b0 must be >= 2 and divide every level");
        total_seg_rows += static_cast<int>(assign.buckets[k].size()) * (assign.levels[k] / b0);
    }

    const Matrix<int32_t> qw = quantize(w, wq);

    // Stack segment rows: levels ascending, row indices ascending, segments
    // from least to most significant.
    Matrix<int32_t> segs(total_seg_rows, d_in);
    const int32_t low_mask = (int32_t(1) << b0) - 1;
    int sr = 0;
    for (int k = 0; k < assign.n_levels(); ++k) {
        const int n_seg = assign.levels[k] / b0;
        const Quantizer& aq = act_q[k];
        const int32_t lo = aq.qmin(), hi = aq.qmax();
        const double s_k = aq.scale(0);
        for (int r : assign.buckets[k]) {
            const T* in = x.row(r);
            for (int m = 0; m < n_seg; ++m) {
                int32_t* out = segs.row(sr + m);
                const int shift = m * b0;
                const bool top = m + 1 == n_seg;
                for (int j = 0; j < d_in; ++j) {
                    const int32_t q =
                        s_k > 0.0 ? round_clamp(s_k * double(in[j]), lo, hi) : 0;
                    out[j] = top ? (q >> shift) : ((q >> shift) & low_mask);
                }
            }
            sr += n_seg;
        }
    }

    const Matrix<int64_t> acc_seg = imatmul_nt(segs, qw, low_mask, wq.qmax());

    Matrix<T> y(x.rows(), d_out);
    sr = 0;
    for (int k = 0; k < assign.n_levels(); ++k) {
        const int n_seg = assign.levels[k] / b0;
        const double s_k = act_q[k].scale(0);
        for (int r : assign.buckets[k]) {
            T* yrow = y.row(r);
            for (int c = 0; c < d_out; ++c) {
                int64_t acc = 0;
                for (int m = 0; m < n_seg; ++m) acc += acc_seg(sr + m, c) << (m * b0);
                const double inv = dequant_inv(s_k, detail::w_scale(wq, c));
                yrow[c] = static_cast<T>(double(acc) * inv + double(bias(0, c)));
            }
            sr += n_seg;
        }
    }
    return y;
}

// QAT view of the bucketed input: each row fake-quantized at its level, with
// the straight-through mask (0 where the row saturated or its quantizer is
// degenerate).
template <typename T>
struct BucketedFQ {
    Matrix<T> xhat;
    Matrix<uint8_t> mask;
};

template <typename T>
BucketedFQ<T> bucketed_fake_quant(const Matrix<T>& x, const Assignment& assign,
                                  const std::vector<Quantizer>& act_q) {
    if (assign.n_items() != x.rows())
        throw std::invalid_argument("bucketed_fake_quant: assignment covers wrong number of rows");
    if (static_cast<int>(act_q.size()) != assign.n_levels())
        throw std::invalid_argument("bucketed_fake_quant: one quantizer per level required");
    BucketedFQ<T> out{Matrix<T>(x.rows(), x.cols()), Matrix<uint8_t>(x.rows(), x.cols())};
    for (int k = 0; k < assign.n_levels(); ++k) {
        const Quantizer& aq = act_q[k];
        const int32_t lo = aq.qmin(), hi = aq.qmax();
        const double s = aq.scale(0);
        for (int r : assign.buckets[k]) {
            const T* in = x.row(r);
            T* xh = out.xhat.row(r);
            uint8_t* mk = out.mask.row(r);
            for (int c = 0; c < x.cols(); ++c) {
                if (s <= 0.0) {
                    xh[c] = T(0);
                    mk[c] = 0;
                    continue;
                }
                const double rv = std::nearbyint(s * double(in[c]));
                mk[c] = (rv >= double(lo) && rv <= double(hi)) ? 1 : 0;
                const int32_t q = rv < double(lo) ? lo : (rv > double(hi) ? hi : int32_t(rv));
                xh[c] = static_cast<T>(double(q) / s);
            }
        }
    }
    return out;
}

}  // namespace amq
