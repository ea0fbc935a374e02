#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "amq/matrix.hpp"

namespace amq {

enum class ScaleAxis { PerTensor, PerColumn, PerRow };

// Symmetric integer quantizer: q = clamp(round(s*x), -2^(b-1)+1, 2^(b-1)-1),
// x_hat = q / s. No zero point, so 0 always maps to 0. A scale entry of 0 marks
// the degenerate quantizer produced by an all-zero statistic: it sends every
// input to 0 and dequantizes to 0.
class Quantizer {
public:
    Quantizer() = default;

    // Activation quantizer with an empty running statistic; the scale becomes
    // valid after the first ema_update.
    static Quantizer with_ema(int bits, double decay) {
        check_bits(bits);
        if (!(decay > 0.0 && decay < 1.0))
            throw std::invalid_argument("Quantizer: ema decay must be in (0,1)");
        Quantizer q;
        q.bits_ = bits;
        q.ema_decay_ = decay;
        return q;
    }

    static Quantizer from_scale(int bits, double scale) {
        check_bits(bits);
        if (!(scale >= 0.0) || !std::isfinite(scale))
            throw std::invalid_argument("Quantizer: scale must be finite and >= 0");
        Quantizer q;
        q.bits_ = bits;
        q.scale_ = {scale};
        return q;
    }

    static Quantizer from_scales(int bits, std::vector<double> scales, ScaleAxis axis) {
        check_bits(bits);
        for (double s : scales)
            if (!(s >= 0.0) || !std::isfinite(s))
                throw std::invalid_argument("Quantizer: scale must be finite and >= 0");
        Quantizer q;
        q.bits_ = bits;
        q.scale_ = std::move(scales);
        q.axis_ = axis;
        return q;
    }

    int bits() const { return bits_; }
    int32_t qmax() const { return (int32_t(1) << (bits_ - 1)) - 1; }
    int32_t qmin() const { return -qmax(); }
    ScaleAxis axis() const { return axis_; }
    bool per_channel() const { return axis_ != ScaleAxis::PerTensor; }
    int channels() const { return static_cast<int>(scale_.size()); }
    double scale(int channel = 0) const { return scale_[per_channel() ? channel : 0]; }
    const std::vector<double>& scales() const { return scale_; }
    double ema_stat() const { return ema_stat_; }
    double ema_decay() const { return ema_decay_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    // Checkpoint plumbing; shape validation happens at the container level.
    void restore(std::vector<double> scales, ScaleAxis axis, double stat, double decay,
                 bool frozen) {
        scale_ = std::move(scales);
        axis_ = axis;
        ema_stat_ = stat;
        ema_decay_ = decay;
        frozen_ = frozen;
    }

    void set_stat(double maxabs) {
        if (frozen_) throw std::logic_error("Quantizer: frozen scale cannot change");
        ema_stat_ = maxabs;
        scale_ = {maxabs > 0.0 ? double(qmax()) / maxabs : 0.0};
        axis_ = ScaleAxis::PerTensor;
    }

    void ema_step(double maxabs) {
        if (frozen_) throw std::logic_error("Quantizer: ema_update on frozen quantizer");
        ema_stat_ = ema_decay_ * ema_stat_ + (1.0 - ema_decay_) * maxabs;
        scale_ = {ema_stat_ > 0.0 ? double(qmax()) / ema_stat_ : 0.0};
        axis_ = ScaleAxis::PerTensor;
    }

private:
    static void check_bits(int bits) {
        if (bits < 2 || bits > 16) throw std::invalid_argument("Quantizer: bits must be in [2,16]");
    }

    int bits_ = 8;
    ScaleAxis axis_ = ScaleAxis::PerTensor;
    std::vector<double> scale_{0.0};
    double ema_stat_ = 0.0;
    double ema_decay_ = 0.99;
    bool frozen_ = false;
};

namespace detail {

template <typename T>
void require_finite(const Matrix<T>& x, const char* who) {
    if (!x.all_finite()) throw std::invalid_argument(std::string(who) + ": non-finite entries");
}

template <typename T>
double maxabs(const Matrix<T>& x) {
    double m = 0.0;
    for (size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(double(x.data()[i])));
    return m;
}

inline double scale_at(const Quantizer& q, int r, int c) {
    switch (q.axis()) {
        case ScaleAxis::PerColumn: return q.scale(c);
        case ScaleAxis::PerRow: return q.scale(r);
        default: return q.scale(0);
    }
}

inline void check_channels(const Quantizer& q, int rows, int cols, const char* who) {
    if (q.axis() == ScaleAxis::PerColumn && q.channels() != cols)
        throw std::invalid_argument(std::string(who) + ": column-channel count mismatch");
    if (q.axis() == ScaleAxis::PerRow && q.channels() != rows)
        throw std::invalid_argument(std::string(who) + ": row-channel count mismatch");
}

}  // namespace detail

// Max-abs calibration. Per-channel scales run over columns; PerRow is the
// variant linear layers use for output-channel weight scales (weights stored
// d_out x d_in, one row per output channel).
template <typename T>
Quantizer calibrate_maxabs(const Matrix<T>& x, int bits, ScaleAxis axis) {
    if (x.empty()) throw std::invalid_argument("calibrate_maxabs: empty tensor");
    detail::require_finite(x, "calibrate_maxabs");
    const double qmax = double((int32_t(1) << (bits - 1)) - 1);
    if (axis == ScaleAxis::PerTensor) {
        const double m = detail::maxabs(x);
        Quantizer q = Quantizer::from_scale(bits, m > 0.0 ? qmax / m : 0.0);
        return q;
    }
    const int n_channels = axis == ScaleAxis::PerColumn ? x.cols() : x.rows();
    std::vector<double> scales(n_channels, 0.0);
    for (int r = 0; r < x.rows(); ++r) {
        for (int c = 0; c < x.cols(); ++c) {
            const int ch = axis == ScaleAxis::PerColumn ? c : r;
            scales[ch] = std::max(scales[ch], std::abs(double(x(r, c))));
        }
    }
    for (double& s : scales) s = s > 0.0 ? qmax / s : 0.0;
    return Quantizer::from_scales(bits, std::move(scales), axis);
}

template <typename T>
Quantizer calibrate_maxabs(const Matrix<T>& x, int bits, bool per_channel) {
    return calibrate_maxabs(x, bits, per_channel ? ScaleAxis::PerColumn : ScaleAxis::PerTensor);
}

// One EMA step on the running max-abs statistic; the scale follows the
// statistic until the quantizer is frozen.
template <typename T>
void ema_update(Quantizer& q, const Matrix<T>& x) {
    detail::require_finite(x, "ema_update");
    q.ema_step(detail::maxabs(x));
}

// Rounding is ties-to-even via nearbyint under the default FP environment.
inline int32_t round_clamp(double scaled, int32_t lo, int32_t hi) {
    const double r = std::nearbyint(scaled);
    if (r < double(lo)) return lo;
    if (r > double(hi)) return hi;
    return static_cast<int32_t>(r);
}

template <typename T>
Matrix<int32_t> quantize(const Matrix<T>& x, const Quantizer& q) {
    detail::require_finite(x, "quantize");
    detail::check_channels(q, x.rows(), x.cols(), "quantize");
    Matrix<int32_t> out(x.rows(), x.cols());
    const int32_t lo = q.qmin(), hi = q.qmax();
    for (int r = 0; r < x.rows(); ++r) {
        const T* in = x.row(r);
        int32_t* o = out.row(r);
        for (int c = 0; c < x.cols(); ++c) {
            const double s = detail::scale_at(q, r, c);
            o[c] = s > 0.0 ? round_clamp(s * double(in[c]), lo, hi) : 0;
        }
    }
    return out;
}

template <typename T>
Matrix<T> dequantize(const Matrix<int32_t>& qx, const Quantizer& q) {
    detail::check_channels(q, qx.rows(), qx.cols(), "dequantize");
    Matrix<T> out(qx.rows(), qx.cols());
    const int32_t lo = q.qmin(), hi = q.qmax();
    for (int r = 0; r < qx.rows(); ++r) {
        const int32_t* in = qx.row(r);
        T* o = out.row(r);
        for (int c = 0; c < qx.cols(); ++c) {
            if (in[c] < lo || in[c] > hi)
                throw std::invalid_argument("dequantize: value outside clamp range");
            const double s = detail::scale_at(q, r, c);
            o[c] = s > 0.0 ? static_cast<T>(double(in[c]) / s) : T(0);
        }
    }
    return out;
}

// QAT forward simulation: dequantize(quantize(x)).
template <typename T>
Matrix<T> fake_quant(const Matrix<T>& x, const Quantizer& q) {
    return dequantize<T>(quantize(x, q), q);
}

// Clipped straight-through mask: 1 where the rounded value stays inside the
// clamp range (gradient passes), 0 where it saturates. A degenerate quantizer
// blocks all gradient since its output is constant zero.
template <typename T>
Matrix<uint8_t> ste_mask(const Matrix<T>& x, const Quantizer& q) {
    detail::require_finite(x, "ste_mask");
    detail::check_channels(q, x.rows(), x.cols(), "ste_mask");
    Matrix<uint8_t> mask(x.rows(), x.cols());
    const double hi = double(q.qmax());
    for (int r = 0; r < x.rows(); ++r) {
        const T* in = x.row(r);
        uint8_t* m = mask.row(r);
        for (int c = 0; c < x.cols(); ++c) {
            const double s = detail::scale_at(q, r, c);
            if (s <= 0.0) {
                m[c] = 0;
                continue;
            }
            const double rv = std::nearbyint(s * double(in[c]));
            m[c] = (rv >= -hi && rv <= hi) ? 1 : 0;
        }
    }
    return mask;
}

}  // namespace amq
