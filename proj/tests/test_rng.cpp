#include <doctest.h>

#include <cmath>
#include <vector>

#include "bvmlab/rng.hpp"

using bvmlab::SplitRng;

TEST_CASE("identical seeds reproduce bit-identical streams") {
    SplitRng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
    SplitRng c(42), d(42);
    for (int i = 0; i < 100; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("keyed forks are order-independent") {
    SplitRng base(7);
    SplitRng f1 = base.fork(3, 11);
    SplitRng f2 = base.fork(5, 0);
    SplitRng f1_again = base.fork(3, 11);
    CHECK(f1.next_u64() == f1_again.next_u64());
    // Forking with a different key gives a different stream.
    SplitRng g1 = base.fork(3, 12);
    SplitRng h1 = base.fork(3, 11);
    h1.next_u64();
    CHECK(g1.next_u64() != h1.next_u64());
}

TEST_CASE("uniform stays in the open interval and has the right mean") {
    SplitRng rng(123);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("normal moments") {
    SplitRng rng(321);
    const int n = 400000;
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s1 += z;
        s2 += z * z;
        s4 += z * z * z * z;
    }
    CHECK(std::abs(s1 / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
    CHECK(std::abs(s4 / n - 3.0) < 0.1);
}

TEST_CASE("split streams look independent") {
    SplitRng base(99);
    SplitRng left = base.split();
    SplitRng right = base.split();
    const int n = 100000;
    double cross = 0.0;
    for (int i = 0; i < n; ++i) cross += (left.uniform() - 0.5) * (right.uniform() - 0.5);
    // Correlation of uniforms, should be ~N(0, 1/(12 sqrt n)).
    CHECK(std::abs(cross / n) < 0.005);
}

TEST_CASE("exponential mean") {
    SplitRng rng(11);
    const int n = 200000;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += rng.exponential(2.0);
    CHECK(std::abs(s / n - 0.5) < 0.01);
}
