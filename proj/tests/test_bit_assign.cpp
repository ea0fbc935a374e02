#include <algorithm>
#include <doctest.h>
#include <numeric>

#include "amq/bit_assign.hpp"
#include "amq/rng.hpp"

using namespace amq;

namespace {

std::vector<int> sorted(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
}

void check_partition(const Assignment& a, int n) {
    std::vector<int> seen;
    for (int k = 0; k < a.n_levels(); ++k)
        for (int i : a.buckets[k]) {
            CHECK(a.level_of[i] == k);
            seen.push_back(i);
        }
    std::sort(seen.begin(), seen.end());
    REQUIRE(static_cast<int>(seen.size()) == n);
    for (int i = 0; i < n; ++i) CHECK(seen[i] == i);
}

}  // namespace

TEST_CASE("two level hand trace") {
    const std::vector<double> w{0.9, 0.1, 0.5, 0.3};
    const Assignment a = assign_buckets(w, {4, 8}, {0.5, 0.5});
    CHECK(a.buckets[0] == std::vector<int>{1, 3});
    CHECK(a.buckets[1] == std::vector<int>{0, 2});
    CHECK(a.bits_of(1) == 4);
    CHECK(a.bits_of(0) == 8);
}

TEST_CASE("degenerate ratio puts everything in one bucket") {
    const std::vector<double> w{0.9, 0.1, 0.5};
    const Assignment a = assign_buckets(w, {4, 8}, {0.0, 1.0});
    CHECK(a.buckets[0].empty());
    CHECK(a.buckets[1] == std::vector<int>{0, 1, 2});
}

TEST_CASE("flooring remainder goes to the top bucket") {
    const std::vector<double> w{5, 4, 3, 2, 1};
    const Assignment a = assign_buckets(w, {4, 8}, {0.5, 0.5});
    CHECK(a.buckets[0] == std::vector<int>{3, 4});
    CHECK(a.buckets[1] == std::vector<int>{0, 1, 2});
}

TEST_CASE("ratio validation") {
    const std::vector<double> w{1, 2, 3};
    CHECK_THROWS(assign_buckets(w, {4, 8}, {0.5, 0.6}));
    CHECK_THROWS(assign_buckets(w, {4, 8}, {-0.1, 1.1}));
    CHECK_THROWS(assign_buckets(w, {8, 4}, {0.5, 0.5}));
    CHECK_THROWS(assign_buckets({1.0, std::nan("")}, {4, 8}, {0.5, 0.5}));
}

TEST_CASE("edge weights follow the destination node") {
    const std::vector<double> w{0.2, 0.9, 0.4};
    const std::vector<int> dst{1, 2};
    CHECK(edge_weights(w, dst) == std::vector<double>{0.9, 0.4});
    CHECK(edge_weights(w, {0}) == std::vector<double>{0.2});  // self-loop 0->0
    CHECK(edge_weights(w, {}).empty());
    CHECK_THROWS(edge_weights(w, {3}));
}

TEST_CASE("cluster weights are member means") {
    const std::vector<double> w{0.2, 0.9, 0.4};
    const auto cw = cluster_weights(w, {{0, 1}, {2}});
    CHECK(cw[0] == doctest::Approx(0.55).epsilon(1e-15));
    CHECK(cw[1] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(cluster_weights(w, {{1}})[0] == doctest::Approx(0.9));
    const auto uniform = cluster_weights({3.0, 3.0, 3.0}, {{0, 2}, {1}});
    CHECK(uniform[0] == doctest::Approx(3.0));
    CHECK(uniform[1] == doctest::Approx(3.0));
    CHECK_THROWS(cluster_weights(w, {{}}));
}

TEST_CASE("random assignment invariants") {
    Rng rng(42);
    for (int trial = 0; trial < 10000; ++trial) {
        const int n = 1 + int(rng.raw() % 40);
        std::vector<double> w(n);
        for (double& x : w) x = rng.uniform(0.0, 1.0);
        if (trial % 3 == 0 && n > 2) w[1] = w[0];  // force ties regularly

        const bool three = trial % 2 == 0;
        std::vector<int> levels = three ? std::vector<int>{4, 8, 12} : std::vector<int>{4, 8};
        std::vector<double> alphas(levels.size());
        double rest = 1.0;
        for (size_t k = 0; k + 1 < alphas.size(); ++k) {
            alphas[k] = rng.uniform(0.0, rest);
            rest -= alphas[k];
        }
        alphas.back() = rest;

        const Assignment a = assign_buckets(w, levels, alphas);
        check_partition(a, n);

        // Size contract: floor(n * alpha_k) for every level except the last.
        for (size_t k = 0; k + 1 < levels.size(); ++k)
            CHECK(static_cast<int>(a.buckets[k].size()) ==
                  int(std::floor(double(n) * alphas[k])));

        // Monotone: max weight of bucket k <= min weight of bucket k+1, with
        // stable tie-breaking allowed at the boundary.
        for (size_t k = 0; k + 1 < levels.size(); ++k) {
            if (a.buckets[k].empty() || a.buckets[k + 1].empty()) continue;
            double lo_max = -1e300;
            for (int i : a.buckets[k]) lo_max = std::max(lo_max, w[i]);
            double hi_min = 1e300;
            for (int i : a.buckets[k + 1]) hi_min = std::min(hi_min, w[i]);
            CHECK(lo_max <= hi_min);
        }

        // Positive-scale invariance.
        std::vector<double> w2(w);
        for (double& x : w2) x *= 17.0;
        const Assignment b = assign_buckets(w2, levels, alphas);
        for (size_t k = 0; k < levels.size(); ++k) CHECK(a.buckets[k] == b.buckets[k]);
    }
}

TEST_CASE("stable tie break prefers the smaller index") {
    const std::vector<double> w{0.5, 0.5, 0.5, 0.5};
    const Assignment a = assign_buckets(w, {4, 8}, {0.5, 0.5});
    CHECK(a.buckets[0] == std::vector<int>{0, 1});
    CHECK(a.buckets[1] == std::vector<int>{2, 3});
}

TEST_CASE("permutation equivariance") {
    Rng rng(9);
    std::vector<double> w(9);
    for (double& x : w) x = rng.uniform(0.0, 1.0);
    const Assignment a = assign_buckets(w, {4, 8}, {0.4, 0.6});

    std::vector<int> perm(w.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> wp(w.size());
    for (size_t i = 0; i < w.size(); ++i) wp[perm[i]] = w[i];
    const Assignment b = assign_buckets(wp, {4, 8}, {0.4, 0.6});

    for (size_t i = 0; i < w.size(); ++i)
        CHECK(a.level_of[i] == b.level_of[perm[i]]);
}

TEST_CASE("bit budget bound for adjacent level families") {
    // For levels where each non-top width is <= the mean of its bound, the
    // floored slice sizes keep the spent bits within floor(N * sum alpha_k b_k)
    // plus one top-level item of slack.
    Rng rng(77);
    for (int trial = 0; trial < 2000; ++trial) {
        const int n = 1 + int(rng.raw() % 50);
        std::vector<double> w(n);
        for (double& x : w) x = rng.uniform(0.0, 1.0);
        const bool three = trial % 2 == 0;
        const std::vector<int> levels = three ? std::vector<int>{4, 8, 12}
                                              : std::vector<int>{4, 8};
        std::vector<double> alphas(levels.size());
        double rest = 1.0;
        for (size_t k = 0; k + 1 < alphas.size(); ++k) {
            alphas[k] = rng.uniform(0.0, rest);
            rest -= alphas[k];
        }
        alphas.back() = rest;
        const Assignment a = assign_buckets(w, levels, alphas);
        double budget = 0.0;
        int64_t spent = 0;
        for (size_t k = 0; k < levels.size(); ++k) {
            budget += double(n) * alphas[k] * levels[k];
            spent += int64_t(a.buckets[k].size()) * levels[k];
        }
        CHECK(spent <= int64_t(std::floor(budget)) + levels.back());
    }
}
