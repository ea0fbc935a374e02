#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "amq/matrix.hpp"

namespace amq {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;  // decoupled
    double clip_norm = 1.0;      // global gradient norm
};

inline double lr_schedule(int64_t step, int64_t total_steps, int64_t warmup_steps,
                          double peak_lr) {
    if (warmup_steps >= total_steps)
        throw std::invalid_argument("lr_schedule: warmup must be shorter than the run");
    if (step < 0 || step > total_steps) throw std::invalid_argument("lr_schedule: step out of range");
    if (step < warmup_steps) return peak_lr * double(step) / double(warmup_steps);
    const double progress = double(step - warmup_steps) / double(total_steps - warmup_steps);
    return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Adam with bias correction, decoupled weight decay and global-norm clipping.
// Moments are stored per parameter in registration order.
template <typename T>
class Adam {
public:
    AdamConfig cfg;

    void init(const std::vector<Matrix<T>*>& params) {
        m_.clear();
        v_.clear();
        for (const Matrix<T>* p : params) {
            m_.emplace_back(p->rows(), p->cols());
            v_.emplace_back(p->rows(), p->cols());
        }
        t_ = 0;
    }

    int64_t steps_taken() const { return t_; }
    std::vector<Matrix<T>>& moments1() { return m_; }
    std::vector<Matrix<T>>& moments2() { return v_; }
    void set_steps_taken(int64_t t) { t_ = t; }

    void step(const std::vector<Matrix<T>*>& params, std::vector<Matrix<T>>& grads, double lr) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            throw std::invalid_argument("Adam: parameter/gradient count mismatch");
        double sq = 0.0;
        for (const auto& g : grads) {
            if (!g.all_finite()) throw std::runtime_error("Adam: non-finite gradient");
            for (size_t i = 0; i < g.size(); ++i) sq += double(g.data()[i]) * double(g.data()[i]);
        }
        const double norm = std::sqrt(sq);
        const double gscale = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm)
                                  ? cfg.clip_norm / norm
                                  : 1.0;
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, double(t_));
        for (size_t p = 0; p < params.size(); ++p) {
            Matrix<T>& theta = *params[p];
            if (!theta.same_shape(m_[p]))
                throw std::invalid_argument("Adam: parameter shape changed");
            const T* g = grads[p].data();
            T* m = m_[p].data();
            T* v = v_[p].data();
            T* w = theta.data();
            for (size_t i = 0; i < theta.size(); ++i) {
                const double gi = double(g[i]) * gscale;
                const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
                const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                const double wd = 1.0 - lr * cfg.weight_decay;
                w[i] = static_cast<T>(double(w[i]) * wd - lr * mhat / (std::sqrt(vhat) + cfg.eps));
            }
        }
        for (const Matrix<T>* p : params)
            if (!p->all_finite()) throw std::runtime_error("Adam: non-finite parameter");
    }

private:
    std::vector<Matrix<T>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace amq
