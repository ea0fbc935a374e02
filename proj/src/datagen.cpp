#include "amq/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "amq/graph.hpp"
#include "amq/rng.hpp"

namespace amq {

namespace {

inline double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

// Lower-band Cholesky of the SPD 5-point system over the (n-2)^2 interior
// nodes, bandwidth n-2. band(i, d) stores L[i][i-d].
class BandCholesky {
public:
    BandCholesky(int n_unknowns, int bandwidth)
        : n_(n_unknowns), bw_(bandwidth), band_(n_unknowns, bandwidth + 1) {}

    double& at(int i, int j) { return band_(i, i - j); }
    double at(int i, int j) const { return band_(i, i - j); }

    void factor() {
        for (int i = 0; i < n_; ++i) {
            const int j0 = std::max(0, i - bw_);
            for (int j = j0; j <= i; ++j) {
                double s = at(i, j);
                const int k0 = std::max(j0, j - bw_);
                for (int k = k0; k < j; ++k) s -= at(i, k) * at(j, k);
                if (j < i) {
                    at(i, j) = s / at(j, j);
                } else {
                    if (s <= 0.0) throw std::runtime_error("solve_darcy: system not SPD");
                    at(i, i) = std::sqrt(s);
                }
            }
        }
    }

    void solve(std::vector<double>& x) const {
        for (int i = 0; i < n_; ++i) {
            double s = x[i];
            const int j0 = std::max(0, i - bw_);
            for (int j = j0; j < i; ++j) s -= at(i, j) * x[j];
            x[i] = s / at(i, i);
        }
        for (int i = n_ - 1; i >= 0; --i) {
            double s = x[i];
            const int j1 = std::min(n_ - 1, i + bw_);
            for (int j = i + 1; j <= j1; ++j) s -= at(j, i) * x[j];
            x[i] = s / at(i, i);
        }
    }

private:
    int n_, bw_;
    Matrix<double> band_;
};

struct Stencil {
    // Face coefficients divided by h^2 for the four neighbours of an interior
    // node, plus the diagonal.
    double north, south, west, east, diag;
};

Stencil stencil_at(const Matrix<double>& a, int r, int c, double inv_h2) {
    Stencil s{};
    s.north = harmonic(a(r, c), a(r - 1, c)) * inv_h2;
    s.south = harmonic(a(r, c), a(r + 1, c)) * inv_h2;
    s.west = harmonic(a(r, c), a(r, c - 1)) * inv_h2;
    s.east = harmonic(a(r, c), a(r, c + 1)) * inv_h2;
    s.diag = s.north + s.south + s.west + s.east;
    return s;
}

}  // namespace

double darcy_residual_inf(const Matrix<double>& a, const Matrix<double>& u, double forcing) {
    const int n = a.rows();
    const double inv_h2 = double(n - 1) * double(n - 1);
    double worst = 0.0;
    for (int r = 1; r + 1 < n; ++r) {
        for (int c = 1; c + 1 < n; ++c) {
            const Stencil s = stencil_at(a, r, c, inv_h2);
            const double lhs = s.diag * u(r, c) - s.north * u(r - 1, c) - s.south * u(r + 1, c) -
                               s.west * u(r, c - 1) - s.east * u(r, c + 1);
            worst = std::max(worst, std::abs(lhs - forcing));
        }
    }
    return worst;
}

Matrix<double> solve_darcy(const Matrix<double>& a, double forcing, double residual_tol) {
    const int n = a.rows();
    if (n < 3 || a.cols() != n) throw std::invalid_argument("solve_darcy: need square grid, n >= 3");
    for (size_t i = 0; i < a.size(); ++i)
        if (!(a.data()[i] > 0.0)) throw std::invalid_argument("solve_darcy: coefficient must be > 0");

    const int w = n - 2;             // interior width
    const int nu = w * w;            // unknowns
    const double inv_h2 = double(n - 1) * double(n - 1);

    BandCholesky chol(nu, w);
    for (int r = 1; r + 1 < n; ++r) {
        for (int c = 1; c + 1 < n; ++c) {
            const int m = (r - 1) * w + (c - 1);
            const Stencil s = stencil_at(a, r, c, inv_h2);
            chol.at(m, m) = s.diag;
            if (c > 1) chol.at(m, m - 1) = -s.west;
            else if (m >= 1) chol.at(m, m - 1) = 0.0;
            if (r > 1) chol.at(m, m - w) = -s.north;
        }
    }
    chol.factor();

    Matrix<double> u(n, n);
    std::vector<double> x(nu, 0.0);
    auto apply_and_residual = [&](std::vector<double>& resid) {
        double worst = 0.0;
        for (int r = 1; r + 1 < n; ++r) {
            for (int c = 1; c + 1 < n; ++c) {
                const int m = (r - 1) * w + (c - 1);
                const Stencil s = stencil_at(a, r, c, inv_h2);
                const double lhs = s.diag * u(r, c) - s.north * u(r - 1, c) -
                                   s.south * u(r + 1, c) - s.west * u(r, c - 1) -
                                   s.east * u(r, c + 1);
                resid[m] = forcing - lhs;
                worst = std::max(worst, std::abs(resid[m]));
            }
        }
        return worst;
    };

    std::vector<double> resid(nu);
    for (int pass = 0; pass < 6; ++pass) {
        if (apply_and_residual(resid) <= residual_tol) return u;
        x = resid;
        chol.solve(x);
        for (int r = 1; r + 1 < n; ++r)
            for (int c = 1; c + 1 < n; ++c) u(r, c) += x[(r - 1) * w + (c - 1)];
    }
    if (apply_and_residual(resid) <= residual_tol) return u;
    throw std::runtime_error("solve_darcy: residual target not reached");
}

Matrix<double> darcy_coefficient_field(int n, uint64_t seed) {
    Rng rng(seed);
    Matrix<double> f(n, n);
    for (size_t i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    // A few clamped 3x3 box-blur passes leave smooth zero-mean bumps whose
    // sign pattern forms contiguous regions.
    Matrix<double> g(n, n);
    for (int pass = 0; pass < 6; ++pass) {
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) {
                double acc = 0.0;
                int cnt = 0;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
                        acc += f(rr, cc);
                        ++cnt;
                    }
                }
                g(r, c) = acc / double(cnt);
            }
        }
        std::swap(f, g);
    }
    Matrix<double> a(n, n);
    for (size_t i = 0; i < a.size(); ++i) a.data()[i] = f.data()[i] > 0.0 ? 12.0 : 3.0;
    return a;
}

DarcyField generate_darcy_sample(int n, uint64_t seed) {
    if (n < 8) throw std::invalid_argument("generate_darcy_sample: n must be >= 8");
    DarcyField s;
    s.n = n;
    s.a = darcy_coefficient_field(n, seed);
    s.u = solve_darcy(s.a, 1.0);
    return s;
}

MeshSample grid_to_graph(const DarcyField& field, int stride, int k) {
    if (stride < 1) throw std::invalid_argument("grid_to_graph: stride must be >= 1");
    const int n = field.n;
    std::vector<int> sites;
    for (int i = 0; i < n; i += stride) sites.push_back(i);
    const int m = static_cast<int>(sites.size());
    const int n_nodes = m * m;
    if (n_nodes <= k) throw std::invalid_argument("grid_to_graph: too few nodes for k");

    MeshSample out;
    out.pos = Matrix<double>(n_nodes, 2);
    out.feat = Matrix<double>(n_nodes, 1);
    out.target = Matrix<double>(n_nodes, 1);
    const double h = 1.0 / double(n - 1);
    for (int r = 0; r < m; ++r) {
        for (int c = 0; c < m; ++c) {
            const int id = r * m + c;
            const int gr = sites[r], gc = sites[c];
            out.pos(id, 0) = double(gc) * h;
            out.pos(id, 1) = double(gr) * h;
            out.feat(id, 0) = field.a(gr, gc);
            out.target(id, 0) = field.u(gr, gc);
        }
    }
    out.graph = knn_graph(out.pos, k, /*self_loops=*/true);
    return out;
}

Dataset generate_dataset(int grid_n, int stride, int k, int n_train, int n_val, uint64_t seed) {
    if (n_train < 1 || n_val < 0) throw std::invalid_argument("generate_dataset: bad split sizes");
    Dataset ds;
    ds.meta.grid_n = grid_n;
    ds.meta.stride = stride;
    ds.meta.knn_k = k;
    ds.meta.seed = seed;
    Rng master(seed);
    for (int i = 0; i < n_train + n_val; ++i) {
        const DarcyField f = generate_darcy_sample(grid_n, master.raw());
        MeshSample s = grid_to_graph(f, stride, k);
        if (i < n_train)
            ds.train.push_back(std::move(s));
        else
            ds.val.push_back(std::move(s));
    }
    return ds;
}

}  // namespace amq
