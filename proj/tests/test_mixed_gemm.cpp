#include <cmath>
#include <doctest.h>

#include "amq/mixed_gemm.hpp"
#include "amq/rng.hpp"

using namespace amq;

namespace {

Matrix<double> random_matrix(Rng& rng, int r, int c, double lo, double hi) {
    Matrix<double> m(r, c);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

Assignment random_assignment(Rng& rng, int n, const std::vector<int>& levels) {
    Assignment a;
    a.levels = levels;
    a.buckets.resize(levels.size());
    a.level_of.resize(n);
    for (int i = 0; i < n; ++i) {
        const int k = int(rng.raw() % levels.size());
        a.level_of[i] = k;
        a.buckets[k].push_back(i);
    }
    return a;
}

std::vector<Quantizer> random_act_quants(Rng& rng, const std::vector<int>& levels) {
    std::vector<Quantizer> qs;
    for (int b : levels) {
        const double maxabs = rng.uniform(0.5, 4.0);
        qs.push_back(Quantizer::from_scale(b, double((1 << (b - 1)) - 1) / maxabs));
    }
    return qs;
}

}  // namespace

TEST_CASE("segment encode hand values") {
    CHECK(segment_encode(-23, 8, 4) == std::vector<int32_t>{9, -2});
    CHECK(segment_encode(87, 8, 4) == std::vector<int32_t>{7, 5});
    CHECK(segment_encode(0, 8, 4) == std::vector<int32_t>{0, 0});
    CHECK(segment_encode(0, 12, 4) == std::vector<int32_t>{0, 0, 0});
    CHECK_THROWS(segment_encode(1, 9, 4));
    CHECK_THROWS(segment_encode(1, 8, 1));
}

TEST_CASE("segment round trip is exact across the full signed range") {
    for (int bits : {8, 12}) {
        const int32_t lim = (1 << (bits - 1)) - 1;
        for (int32_t q = -lim; q <= lim; ++q) {
            const auto seg = segment_encode(q, bits, 4);
            REQUIRE(static_cast<int>(seg.size()) == bits / 4);
            for (size_t m = 0; m + 1 < seg.size(); ++m) {
                CHECK(seg[m] >= 0);
                CHECK(seg[m] <= 15);
            }
            CHECK(seg.back() >= -8);
            CHECK(seg.back() <= 7);
            CHECK(segment_decode(seg, 4) == q);
        }
    }
}

TEST_CASE("segment scales") {
    const auto s1 = segment_scales(4, 8, 1.0, 1.0);
    CHECK(s1 == std::vector<double>{1.0, 16.0});
    const auto s2 = segment_scales(4, 4, 2.0, 4.0);
    REQUIRE(s2.size() == 1);
    CHECK(s2[0] == doctest::Approx(1.0 / 8.0).epsilon(1e-15));
    const auto s3 = segment_scales(4, 12, 2.0, 0.5);
    REQUIRE(s3.size() == 3);
    CHECK(s3[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s3[1] == doctest::Approx(16.0).epsilon(1e-15));
    CHECK(s3[2] == doctest::Approx(256.0).epsilon(1e-15));
}

TEST_CASE("single element linear hand trace") {
    // Q(a) = -23 at scale 1, Q(W) = 3 at scale 1: both kernels give -69.
    Matrix<double> x(1, 1), w(1, 1), bias(1, 1);
    x(0, 0) = -23.0;
    w(0, 0) = 3.0;
    bias(0, 0) = 0.0;
    Assignment a;
    a.levels = {8};
    a.buckets = {{0}};
    a.level_of = {0};
    const std::vector<Quantizer> aq{Quantizer::from_scale(8, 1.0)};
    const Quantizer wq = Quantizer::from_scale(8, 1.0);
    CHECK(mp_linear_basic(x, a, aq, w, wq, bias)(0, 0) == doctest::Approx(-69.0));
    CHECK(mp_linear_segmented(x, a, aq, w, wq, bias, 4)(0, 0) == doctest::Approx(-69.0));
}

TEST_CASE("zero input rows give bias") {
    Rng rng(3);
    Matrix<double> x(5, 4);
    const auto w = random_matrix(rng, 3, 4, -1.0, 1.0);
    const auto bias = random_matrix(rng, 1, 3, -1.0, 1.0);
    const Assignment a = random_assignment(rng, 5, {4, 8});
    const auto aq = random_act_quants(rng, {4, 8});
    const Quantizer wq = calibrate_maxabs(w, 8, ScaleAxis::PerRow);
    const auto y = mp_linear_basic(x, a, aq, w, wq, bias);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 3; ++c) CHECK(y(r, c) == doctest::Approx(bias(0, c)));
}

TEST_CASE("single bucket matches a uniform quantized linear layer") {
    Rng rng(11);
    const auto x = random_matrix(rng, 6, 5, -2.0, 2.0);
    const auto w = random_matrix(rng, 4, 5, -1.0, 1.0);
    const auto bias = random_matrix(rng, 1, 4, -0.5, 0.5);
    Assignment a;
    a.levels = {8};
    a.buckets.resize(1);
    a.level_of.assign(6, 0);
    for (int i = 0; i < 6; ++i) a.buckets[0].push_back(i);
    const std::vector<Quantizer> aq{Quantizer::from_scale(8, 127.0 / 2.0)};
    const Quantizer wq = calibrate_maxabs(w, 8, ScaleAxis::PerRow);

    const auto y = mp_linear_basic(x, a, aq, w, wq, bias);
    // Oracle: plain fake-quant linear evaluated with the same scales.
    const auto xq = fake_quant(x, aq[0]);
    const auto wf = dequantize<double>(quantize(w, wq), wq);
    const auto ref = linear_ref(xq, wf, bias);
    for (size_t i = 0; i < y.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-9));
}

TEST_CASE("kernel equivalence on randomized instances") {
    Rng rng(2024);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 1 + int(rng.raw() % 64);
        const int d_in = 1 + int(rng.raw() % 32);
        const int d_out = 1 + int(rng.raw() % 32);
        const std::vector<int> levels =
            trial % 2 == 0 ? std::vector<int>{4, 8, 12} : std::vector<int>{4, 8};
        const auto x = random_matrix(rng, n, d_in, -3.0, 3.0);
        const auto w = random_matrix(rng, d_out, d_in, -1.5, 1.5);
        const auto bias = random_matrix(rng, 1, d_out, -1.0, 1.0);
        const Assignment a = random_assignment(rng, n, levels);
        const auto aq = random_act_quants(rng, levels);
        const Quantizer wq = calibrate_maxabs(w, 8, ScaleAxis::PerRow);

        const auto yb = mp_linear_basic(x, a, aq, w, wq, bias);
        const auto ys = mp_linear_segmented(x, a, aq, w, wq, bias, 4);
        REQUIRE(yb.same_shape(ys));
        for (size_t i = 0; i < yb.size(); ++i) {
            CHECK(yb.data()[i] == ys.data()[i]);  // bit-exact, no tolerance
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("degenerate activation scale annihilates its bucket") {
    Matrix<double> x(2, 2);
    x(0, 0) = 1.0;
    x(0, 1) = 2.0;
    x(1, 0) = 3.0;
    x(1, 1) = 4.0;
    Matrix<double> w(1, 2);
    w(0, 0) = 1.0;
    w(0, 1) = 1.0;
    Matrix<double> bias(1, 1);
    bias(0, 0) = 0.25;
    Assignment a;
    a.levels = {4, 8};
    a.buckets = {{0}, {1}};
    a.level_of = {0, 1};
    const std::vector<Quantizer> aq{Quantizer::from_scale(4, 0.0),
                                    Quantizer::from_scale(8, 127.0 / 4.0)};
    const Quantizer wq = calibrate_maxabs(w, 8, ScaleAxis::PerRow);
    const auto yb = mp_linear_basic(x, a, aq, w, wq, bias);
    const auto ys = mp_linear_segmented(x, a, aq, w, wq, bias, 4);
    CHECK(yb(0, 0) == doctest::Approx(0.25));  // dead bucket passes only bias
    CHECK(yb(0, 0) == ys(0, 0));
    CHECK(yb(1, 0) == ys(1, 0));
    CHECK(yb(1, 0) == doctest::Approx(7.0).epsilon(0.05));
}

TEST_CASE("bias linearity") {
    Rng rng(5);
    const auto x = random_matrix(rng, 4, 3, -1.0, 1.0);
    const auto w = random_matrix(rng, 2, 3, -1.0, 1.0);
    const auto b0 = random_matrix(rng, 1, 2, -1.0, 1.0);
    Matrix<double> zero(1, 2);
    const Assignment a = random_assignment(rng, 4, {4, 8});
    const auto aq = random_act_quants(rng, {4, 8});
    const Quantizer wq = calibrate_maxabs(w, 8, ScaleAxis::PerRow);
    const auto with = mp_linear_basic(x, a, aq, w, wq, b0);
    const auto without = mp_linear_basic(x, a, aq, w, wq, zero);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 2; ++c)
            CHECK(with(r, c) - without(r, c) == doctest::Approx(b0(0, c)).epsilon(1e-12));
}

TEST_CASE("argument validation") {
    Matrix<double> x(2, 3), w(2, 3), bias(1, 2);
    Assignment a;
    a.levels = {8};
    a.buckets = {{0, 1}};
    a.level_of = {0, 0};
    const std::vector<Quantizer> aq{Quantizer::from_scale(8, 1.0)};
    const Quantizer wq = Quantizer::from_scale(8, 1.0);
    CHECK_NOTHROW(mp_linear_basic(x, a, aq, w, wq, bias));

    Assignment short_a;
    short_a.levels = {8};
    short_a.buckets = {{0}};
    short_a.level_of = {0};
    CHECK_THROWS(mp_linear_basic(x, short_a, aq, w, wq, bias));

    const std::vector<Quantizer> wrong_bits{Quantizer::from_scale(4, 1.0)};
    CHECK_THROWS(mp_linear_basic(x, a, wrong_bits, w, wq, bias));

    Matrix<double> bad_bias(1, 3);
    CHECK_THROWS(mp_linear_basic(x, a, aq, w, wq, bad_bias));

    CHECK_THROWS(mp_linear_segmented(x, a, aq, w, wq, bias, 3));  // 3 does not divide 8
}
