#include <cmath>
#include <doctest.h>

#include "amq/mixed_gemm.hpp"
#include "amq/model.hpp"
#include "amq/optim.hpp"
#include "amq/rng.hpp"
#include "amq/tape.hpp"

using namespace amq;

namespace {

MeshSample toy_sample(int n, uint64_t seed) {
    Rng rng(seed);
    MeshSample s;
    s.pos = Matrix<double>(n, 2);
    s.feat = Matrix<double>(n, 1);
    s.target = Matrix<double>(n, 1);
    for (int i = 0; i < n; ++i) {
        s.pos(i, 0) = rng.uniform(0.0, 1.0);
        s.pos(i, 1) = rng.uniform(0.0, 1.0);
        s.feat(i, 0) = rng.u01() < 0.5 ? 3.0 : 12.0;
        s.target(i, 0) = rng.uniform(0.0, 0.1);
    }
    s.graph = knn_graph(s.pos, std::min(3, n - 1), true);
    return s;
}

template <typename T>
Matrix<T> dense_mlp2(const MLP2<T>& m, const Matrix<T>& x) {
    Matrix<T> h = linear_ref(x, m.l1.w, m.l1.b);
    for (size_t i = 0; i < h.size(); ++i) h.data()[i] = Tape<T>::gelu_fn(h.data()[i]);
    return linear_ref(h, m.l2.w, m.l2.b);
}

// Straight-line re-implementation of the full-precision forward pass, written
// against plain matrix helpers instead of the tape.
template <typename T>
Matrix<T> dense_forward(MPNNModel<T>& model, const PreparedSample<T>& s) {
    const Graph& g = *s.graph;
    const int d = model.cfg.hidden;
    Matrix<T> h = dense_mlp2(model.encoder, s.x0);
    for (auto& p : model.procs) {
        Matrix<T> min(g.n_edges(), 2 * d + 3);
        for (int e = 0; e < g.n_edges(); ++e) {
            const int i = g.dst[e], j = g.src[e];
            int c = 0;
            for (int k = 0; k < d; ++k) min(e, c++) = h(i, k);
            min(e, c++) = s.edge_du(e, 0);
            for (int k = 0; k < d; ++k) min(e, c++) = h(j, k);
            min(e, c++) = s.edge_dp(e, 0);
            min(e, c++) = s.edge_dp(e, 1);
        }
        const Matrix<T> msg = dense_mlp2(p.msg, min);
        const Matrix<T> mi = mean_aggregate(msg, g);
        Matrix<T> uin(g.n_nodes, 2 * d);
        for (int i = 0; i < g.n_nodes; ++i) {
            for (int k = 0; k < d; ++k) uin(i, k) = h(i, k);
            for (int k = 0; k < d; ++k) uin(i, d + k) = mi(i, k);
        }
        const Matrix<T> delta = dense_mlp2(p.upd, uin);
        for (size_t i = 0; i < h.size(); ++i) h.data()[i] += delta.data()[i];
    }
    Matrix<T> out = dense_mlp2(model.decoder, h);
    if (model.cfg.sigmoid_head)
        for (size_t i = 0; i < out.size(); ++i)
            out.data()[i] = T(1) / (T(1) + std::exp(-out.data()[i]));
    return out;
}

template <typename T>
Allocation uniform_alloc(const Graph& g, int bits) {
    Allocation a;
    a.nodes = uniform_assignment(g.n_nodes, bits);
    a.edges = uniform_assignment(g.n_edges(), bits);
    return a;
}

template <typename T>
void set_all(MPNNModel<T>& m, T value) {
    m.for_each_layer([&](LinearLayer<T>& l) {
        l.w.fill(value);
        l.b.fill(value);
    });
}

}  // namespace

TEST_CASE("full precision forward matches the dense re-implementation") {
    const MeshSample ms = toy_sample(4, 21);
    const auto ps = prepare_sample<double>(ms, 7.5, 4.5, 0.1);

    MPNNModel<double> model;
    model.cfg.hidden = 6;
    model.cfg.layers = 2;
    model.init(91);

    Tape<double> tape;
    const auto res = model.forward(tape, ps, Allocation{}, {false, false, false});
    const auto want = dense_forward(model, ps);
    const auto& got = tape.value(res.pred);
    REQUIRE(got.same_shape(want));
    for (size_t i = 0; i < got.size(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("zero processor weights reduce to encoder plus decoder via residual") {
    const MeshSample ms = toy_sample(5, 33);
    const auto ps = prepare_sample<double>(ms, 7.5, 4.5, 0.1);

    MPNNModel<double> model;
    model.cfg.hidden = 4;
    model.cfg.layers = 2;
    model.init(7);
    for (auto& p : model.procs) {
        p.msg.l1.w.fill(0);
        p.msg.l1.b.fill(0);
        p.msg.l2.w.fill(0);
        p.msg.l2.b.fill(0);
        p.upd.l1.w.fill(0);
        p.upd.l1.b.fill(0);
        p.upd.l2.w.fill(0);
        p.upd.l2.b.fill(0);
    }

    Tape<double> tape;
    const auto res = model.forward(tape, ps, Allocation{}, {false, false, false});
    const auto enc = dense_mlp2(model.encoder, ps.x0);
    const auto want = dense_mlp2(model.decoder, enc);
    const auto& got = tape.value(res.pred);
    for (size_t i = 0; i < got.size(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("zero weights everywhere give the final bias") {
    const MeshSample ms = toy_sample(4, 5);
    const auto ps = prepare_sample<double>(ms, 7.5, 4.5, 0.1);
    MPNNModel<double> model;
    model.cfg.hidden = 4;
    model.init(3);
    set_all(model, 0.0);
    model.decoder.l2.b(0, 0) = 0.375;

    Tape<double> tape;
    const auto res = model.forward(tape, ps, Allocation{}, {false, false, false});
    for (int i = 0; i < 4; ++i) CHECK(tape.value(res.pred)(i, 0) == doctest::Approx(0.375));
}

TEST_CASE("permutation equivariance of the forward pass") {
    const int n = 6;
    const MeshSample ms = toy_sample(n, 44);

    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    MeshSample pm;
    pm.pos = Matrix<double>(n, 2);
    pm.feat = Matrix<double>(n, 1);
    pm.target = Matrix<double>(n, 1);
    for (int i = 0; i < n; ++i) {
        pm.pos(perm[i], 0) = ms.pos(i, 0);
        pm.pos(perm[i], 1) = ms.pos(i, 1);
        pm.feat(perm[i], 0) = ms.feat(i, 0);
        pm.target(perm[i], 0) = ms.target(i, 0);
    }
    pm.graph.n_nodes = n;
    for (int e = 0; e < ms.graph.n_edges(); ++e) {
        pm.graph.src.push_back(perm[ms.graph.src[e]]);
        pm.graph.dst.push_back(perm[ms.graph.dst[e]]);
    }
    pm.graph.build_csr();

    const auto psa = prepare_sample<double>(ms, 7.5, 4.5, 0.1);
    const auto psb = prepare_sample<double>(pm, 7.5, 4.5, 0.1);

    MPNNModel<double> model;
    model.cfg.hidden = 5;
    model.cfg.layers = 2;
    model.init(17);

    Tape<double> ta, tb;
    const auto ra = model.forward(ta, psa, Allocation{}, {false, false, false});
    const auto rb = model.forward(tb, psb, Allocation{}, {false, false, false});
    for (int i = 0; i < n; ++i)
        CHECK(ta.value(ra.pred)(i, 0) ==
              doctest::Approx(tb.value(rb.pred)(perm[i], 0)).epsilon(1e-9));

    // Uniform single-bucket quantization preserves the equivariance.
    Quantizer fixed = Quantizer::from_scale(8, 25.0);
    auto freeze_scales = [&](MPNNModel<double>& m) {
        m.for_each_layer([&](LinearLayer<double>& l) {
            for (auto& q : l.act_q) q = fixed;
        });
    };
    MPNNModel<double> qmodel;
    qmodel.cfg.hidden = 5;
    qmodel.cfg.layers = 2;
    qmodel.cfg.levels = {8};
    qmodel.init(17);
    freeze_scales(qmodel);
    Tape<double> qa, qb;
    const auto qra = qmodel.forward(qa, psa, uniform_alloc<double>(ms.graph, 8),
                                    {true, false, false});
    const auto qrb = qmodel.forward(qb, psb, uniform_alloc<double>(pm.graph, 8),
                                    {true, false, false});
    for (int i = 0; i < n; ++i)
        CHECK(qa.value(qra.pred)(i, 0) ==
              doctest::Approx(qb.value(qrb.pred)(perm[i], 0)).epsilon(1e-9));
}

TEST_CASE("basic and segmented kernels agree through the whole model") {
    const MeshSample ms = toy_sample(8, 55);
    const auto ps = prepare_sample<double>(ms, 7.5, 4.5, 0.1);

    MPNNModel<double> model;
    model.cfg.hidden = 6;
    model.cfg.layers = 2;
    model.cfg.levels = {4, 8};
    model.init(23);
    // Give every quantizer a usable scale via one calibration pass.
    Allocation alloc;
    std::vector<double> w(ms.graph.n_nodes);
    for (int i = 0; i < ms.graph.n_nodes; ++i) w[i] = ms.target(i, 0);
    alloc.nodes = assign_buckets(w, {4, 8}, {0.5, 0.5});
    alloc.edges = assign_buckets(edge_weights(w, ms.graph.dst), {4, 8}, {0.5, 0.5});
    {
        Tape<double> warm;
        model.forward(warm, ps, alloc, {true, true, false});
    }
    model.freeze_quantizers();

    Tape<double> tb, ts;
    const auto rb = model.forward(tb, ps, alloc, {true, false, false});
    const auto rs = model.forward(ts, ps, alloc, {true, false, true});
    const auto& vb = tb.value(rb.pred);
    const auto& vs = ts.value(rs.pred);
    for (size_t i = 0; i < vb.size(); ++i) CHECK(vb.data()[i] == vs.data()[i]);
}

TEST_CASE("gradients match finite differences on a tiny full-precision model") {
    const MeshSample ms = toy_sample(4, 66);
    const auto ps = prepare_sample<double>(ms, 7.5, 4.5, 0.1);

    MPNNModel<double> model;
    model.cfg.hidden = 4;
    model.cfg.layers = 1;
    model.init(29);

    auto loss_value = [&]() {
        Tape<double> t;
        const auto r = model.forward(t, ps, Allocation{}, {false, false, false});
        return t.value(t.mse(r.pred, t.leaf(ps.target, false)))(0, 0);
    };

    Tape<double> tape;
    const auto res = model.forward(tape, ps, Allocation{}, {false, false, false});
    tape.backward(tape.mse(res.pred, tape.leaf(ps.target, false)));

    const auto params = model.params();
    REQUIRE(params.size() * 1 == res.param_leaves.size());
    const double h = 1e-5;
    for (size_t p = 0; p < params.size(); ++p) {
        const auto& g = tape.grad(res.param_leaves[p]);
        REQUIRE(g.same_shape(*params[p]));
        for (size_t i = 0; i < params[p]->size(); ++i) {
            double& theta = params[p]->data()[i];
            const double orig = theta;
            theta = orig + h;
            const double up = loss_value();
            theta = orig - h;
            const double dn = loss_value();
            theta = orig;
            const double want = (up - dn) / (2.0 * h);
            const double got = g.data()[i];
            const double denom = std::max({1e-6, std::abs(want), std::abs(got)});
            CHECK(std::abs(got - want) / denom <= 1e-4);
        }
    }
}

TEST_CASE("per node loss values") {
    Matrix<double> pred(2, 1), target(2, 1);
    pred(0, 0) = 1.0;
    pred(1, 0) = 2.0;
    target(0, 0) = 0.0;
    target(1, 0) = 2.0;
    const auto l = per_node_loss(pred, target);
    CHECK(l == std::vector<double>{1.0, 0.0});

    const auto zero = per_node_loss(target, target);
    CHECK(zero == std::vector<double>{0.0, 0.0});

    Matrix<double> doubled(2, 1);
    doubled(0, 0) = 2.0;
    doubled(1, 0) = 2.0;
    const auto l2 = per_node_loss(doubled, target);
    CHECK(l2[0] == doctest::Approx(4.0 * l[0]));
}

TEST_CASE("relative l2") {
    Matrix<double> pred(2, 1), target(2, 1);
    pred(0, 0) = 3.0;
    pred(1, 0) = 4.0;
    target(0, 0) = 3.0;
    target(1, 0) = 4.0;
    CHECK(rel_l2(pred, target) == doctest::Approx(0.0));
    pred(0, 0) = 6.0;
    pred(1, 0) = 8.0;
    CHECK(rel_l2(pred, target) == doctest::Approx(1.0));  // |pred-target| = |target|
}

TEST_CASE("seeded init is deterministic") {
    MPNNModel<float> a, b;
    a.cfg.hidden = 8;
    b.cfg.hidden = 8;
    a.init(123);
    b.init(123);
    const auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);
}

TEST_CASE("lr schedule") {
    CHECK(lr_schedule(0, 100, 10, 1.0) == doctest::Approx(0.0));
    CHECK(lr_schedule(10, 100, 10, 1.0) == doctest::Approx(1.0));
    CHECK(lr_schedule(55, 100, 10, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(lr_schedule(100, 100, 10, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lr_schedule(5, 100, 10, 2.0) == doctest::Approx(1.0));
    CHECK_THROWS(lr_schedule(5, 10, 10, 1.0));
    CHECK_THROWS(lr_schedule(-1, 10, 2, 1.0));
}

TEST_CASE("adam zero gradient leaves only weight decay") {
    Matrix<double> theta(1, 2);
    theta(0, 0) = 2.0;
    theta(0, 1) = -3.0;
    Adam<double> opt;
    std::vector<Matrix<double>*> params{&theta};
    opt.init(params);
    std::vector<Matrix<double>> grads;
    grads.emplace_back(1, 2);
    const double lr = 0.1;
    opt.step(params, grads, lr);
    CHECK(theta(0, 0) == doctest::Approx(2.0 * (1.0 - lr * 1e-6)).epsilon(1e-15));
    CHECK(theta(0, 1) == doctest::Approx(-3.0 * (1.0 - lr * 1e-6)).epsilon(1e-15));
}

TEST_CASE("adam clips the global gradient norm") {
    Matrix<double> theta(1, 1);
    theta(0, 0) = 1.0;
    Adam<double> opt;
    std::vector<Matrix<double>*> params{&theta};
    opt.init(params);
    std::vector<Matrix<double>> grads;
    grads.emplace_back(1, 1);
    grads[0](0, 0) = 10.0;  // norm 10 -> scaled to 1
    const double lr = 0.01;
    opt.step(params, grads, lr);
    // With g=1: mhat = 1, vhat = 1, so the step is lr/(1+eps) after decay.
    const double want = 1.0 * (1.0 - lr * 1e-6) - lr * 1.0 / (1.0 + 1e-8);
    CHECK(theta(0, 0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("adam moves monotonically against the gradient sign") {
    Matrix<double> theta(1, 1);
    theta(0, 0) = 0.5;
    Adam<double> opt;
    std::vector<Matrix<double>*> params{&theta};
    opt.init(params);
    std::vector<Matrix<double>> grads;
    grads.emplace_back(1, 1);
    grads[0](0, 0) = 0.3;
    double prev = theta(0, 0);
    for (int i = 0; i < 2; ++i) {
        opt.step(params, grads, 0.05);
        CHECK(theta(0, 0) < prev);
        prev = theta(0, 0);
    }
    CHECK_THROWS([&] {
        grads[0](0, 0) = std::nan("");
        opt.step(params, grads, 0.05);
    }());
}

TEST_CASE("uniform assignment helper") {
    const Assignment a = uniform_assignment(5, 8);
    CHECK(a.n_levels() == 1);
    CHECK(a.levels[0] == 8);
    CHECK(a.buckets[0] == std::vector<int>{0, 1, 2, 3, 4});
    for (int i = 0; i < 5; ++i) CHECK(a.bits_of(i) == 8);
}
