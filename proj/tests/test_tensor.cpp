#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "blockdiff/tensor.hpp"

using namespace blockdiff;

TEST_CASE("tensor basics") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    t.at(1, 2) = 5.0;
    CHECK(t.data[5] == 5.0);
    CHECK(t.all_finite());
    t.at(0, 0) = std::nan("");
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(Tensor::from_rows(2, 2, {1.0, 2.0, 3.0}), DimError);
}

TEST_CASE("randn is deterministic in the rng state") {
    Rng a(7), b(7);
    const Tensor x = randn({4, 4}, 0.02, a);
    const Tensor y = randn({4, 4}, 0.02, b);
    CHECK(x.data == y.data);
}

TEST_CASE("kl divergence identities") {
    CHECK(kl_divergence({0.3, 0.7}, {0.3, 0.7}) == 0.0);
    const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(kl_divergence({0.5, 0.5}, {0.25, 0.75}) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(kl_divergence({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("kl divergence domain checks") {
    CHECK_THROWS_AS(kl_divergence({-0.1, 1.1}, {0.5, 0.5}), DomainError);
    CHECK_THROWS_AS(kl_divergence({0.4, 0.4}, {0.5, 0.5}), DomainError);
    CHECK_THROWS_AS(kl_divergence({0.5, 0.5}, {0.5, 0.4}), DomainError);
}

TEST_CASE("kl divergence nonnegative on random rows") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(6));
        std::vector<double> p(n), q(n);
        double sp = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            p[i] = rng.next_double_open_low();
            q[i] = rng.next_double_open_low();
            sp += p[i];
            sq += q[i];
        }
        for (int i = 0; i < n; ++i) {
            p[i] /= sp;
            q[i] /= sq;
        }
        CHECK(kl_divergence(p, q) >= 0.0);
    }
}

TEST_CASE("kl handles zero entries in both arguments") {
    CHECK(kl_divergence({0.0, 1.0}, {0.0, 1.0}) == 0.0);
    // q carries an exact zero where p has mass: clamped by eps
    const double v = kl_divergence({1.0, 0.0}, {0.0, 1.0});
    CHECK(v == doctest::Approx(std::log(1.0 / kEpsKl)));
}

TEST_CASE("rng bounded sampling and shuffling are stable") {
    Rng a(3), b(3);
    for (int i = 0; i < 100; ++i) CHECK(a.next_below(17) == b.next_below(17));
    std::vector<int> xs = {1, 2, 3, 4, 5, 6}, ys = xs;
    a.shuffle(xs);
    b.shuffle(ys);
    CHECK(xs == ys);
    const auto idx = a.sample_indices(10, 4);
    CHECK(idx.size() == 4);
    for (size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
}
